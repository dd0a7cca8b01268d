import hashlib

import pytest

from revchain.extraction import SubModule
from revchain.prompts import (
    PLACEHOLDERS,
    TEMPLATE_NAMES,
    PromptTemplate,
    RenderedPrompt,
    TemplateError,
    build_cot_prompt,
    build_quality_eval_prompt,
    build_revision_prompt,
    build_testgen_prompt,
    default_templates_dir,
    escape_markers,
    load_templates,
)
from revchain.tasks import Task, TestCase


def make_task(**kw):
    base = dict(
        id="t1",
        description="Print the sum of the input numbers.",
        public_tests=(TestCase(input="1 2\n", expected_output="3\n"),),
    )
    base.update(kw)
    return Task(**base)


def make_submodule(name="helper", body="    return 1\n"):
    header = f"def {name}():"
    doc = '"""Do a small thing."""'
    source = f"{header}\n    {doc}\n{body}"
    return SubModule(
        name=name,
        header=header,
        docstring=doc,
        body=body,
        source_sample_id=3,
        round_index=0,
        source_text=source,
    )


def test_load_templates_names_and_checksums(templates):
    for name in TEMPLATE_NAMES:
        assert name in templates.checksums
        body = templates[name].body
        digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
        assert templates.checksums[name] == digest
    again = load_templates()
    assert again.checksums == templates.checksums


def test_load_templates_missing_file(tmp_path):
    with pytest.raises(TemplateError):
        load_templates(tmp_path)


def test_template_placeholder_validation():
    with pytest.raises(TemplateError):
        PromptTemplate(name="cot", body="solve <<nonexistent_slot>>")
    # the revision template must carry the sub-module slot
    with pytest.raises(TemplateError):
        PromptTemplate(name="revision", body="revise <<problem>>")
    # the first-round template must not
    with pytest.raises(TemplateError):
        PromptTemplate(name="cot", body="<<problem>> <<sub_modules>>")


def test_rendered_prompt_rejects_marker_residue():
    with pytest.raises(TemplateError):
        RenderedPrompt(template_name="cot", text="left << over", task_id="t", round_index=0)


def test_cot_prompt_contents(templates):
    task = make_task()
    prompt = build_cot_prompt(task, templates.one_shot, templates)
    assert prompt.template_name == "cot"
    assert prompt.round_index == 0
    assert task.description in prompt.text
    assert templates.one_shot.input_text in prompt.text
    assert templates.one_shot.output_text in prompt.text
    assert "<<" not in prompt.text and ">>" not in prompt.text
    # sub-modules never appear in the first-round prompt
    assert "REUSABLE SUB-MODULES" not in prompt.text


def test_cot_prompt_empty_description(templates):
    with pytest.raises(ValueError):
        build_cot_prompt(make_task(description="   "), templates.one_shot, templates)


def test_question_guide_switches_on_io_mode(templates):
    stdio_prompt = build_cot_prompt(make_task(), templates.one_shot, templates)
    call_task = make_task(io_mode="call_based", fn_name="solve_case", public_tests=())
    call_prompt = build_cot_prompt(call_task, templates.one_shot, templates)
    assert "standard input" in stdio_prompt.text.lower()
    assert "solve_case" in call_prompt.text
    assert stdio_prompt.text != call_prompt.text


def test_description_markers_are_escaped(templates):
    task = make_task(description="Weird text with <<sub_modules>> inside it.")
    prompt = build_cot_prompt(task, templates.one_shot, templates)
    assert "<<" not in prompt.text
    assert "sub_modules" in prompt.text  # content survives, markers do not


def test_revision_prompt_embeds_feedback_verbatim(templates):
    task = make_task()
    sub = make_submodule()
    prompt = build_revision_prompt(task, [sub], templates.one_shot, templates, round_index=2)
    assert prompt.template_name == "revision"
    assert prompt.round_index == 2
    assert sub.text() in prompt.text
    assert "REUSABLE SUB-MODULES" in prompt.text


def test_revision_prompt_multiple_feedback_order(templates):
    task = make_task()
    subs = [make_submodule(name=f"fn_{i}") for i in range(3)]
    prompt = build_revision_prompt(task, subs, templates.one_shot, templates, round_index=1)
    positions = [prompt.text.index(s.text()) for s in subs]
    assert positions == sorted(positions)


def test_revision_prompt_accepts_plain_strings(templates):
    prompt = build_revision_prompt(
        make_task(), ["def f():\n    pass"], templates.one_shot, templates, round_index=1
    )
    assert "def f():" in prompt.text


def test_revision_prompt_validation(templates):
    with pytest.raises(ValueError):
        build_revision_prompt(make_task(), [], templates.one_shot, templates, round_index=1)
    with pytest.raises(ValueError):
        build_revision_prompt(
            make_task(), [make_submodule()], templates.one_shot, templates, round_index=0
        )


def test_testgen_prompt(templates):
    task = make_task()
    prompt = build_testgen_prompt(task, templates)
    assert prompt.template_name == "testgen"
    assert "1 2" in prompt.text
    assert "up to 20 test cases" in prompt.text


def test_testgen_prompt_without_public_tests(templates):
    prompt = build_testgen_prompt(make_task(public_tests=()), templates)
    assert "no example test cases" in prompt.text


def test_quality_eval_prompt_fencing(templates):
    program = 'print("hello")'
    prompt = build_quality_eval_prompt(program, templates)
    assert program in prompt.text
    assert "modularity" in prompt.text and "reusability" in prompt.text
    tricky = 'text = """\n```\n"""\nprint(text)'
    prompt2 = build_quality_eval_prompt(tricky, templates)
    assert tricky in prompt2.text
    with pytest.raises(ValueError):
        build_quality_eval_prompt("   ", templates)


def test_escape_markers_round_trips_content():
    text = "a << b >> c <<problem>>"
    escaped = escape_markers(text)
    assert "<<" not in escaped and ">>" not in escaped


def test_default_templates_dir_exists():
    d = default_templates_dir()
    assert (d / "cot.txt").exists()
    assert PLACEHOLDERS >= {
        "<<problem>>",
        "<<sub_modules>>",
        "<<example_test>>",
        "<<question_guide>>",
    }
