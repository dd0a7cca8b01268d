"""Prompt template loading and rendering.

Templates are plain text fixture files with ``<<placeholder>>`` slots. They
are experimental configuration, not code: operators may point the run config
at an alternative templates directory, and every loaded template's checksum
is recorded in the run manifest so a run is traceable to its exact prompts.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .tasks import Task, format_io_pairs

TEMPLATE_NAMES = ("cot", "revision", "testgen", "quality_eval")
PLACEHOLDERS = {
    "<<problem>>",
    "<<question_guide>>",
    "<<sub_modules>>",
    "<<example_test>>",
    "<<one_shot_input>>",
    "<<one_shot_output>>",
}

# Guarded lookalikes keep substituted content from ever reintroducing live
# placeholder markers into a rendered prompt.
_MARKER_GUARDS = (("<<", "‹‹"), (">>", "››"))

_PLACEHOLDER_RE = re.compile(r"<<[a-z_]+>>")


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str

    def __post_init__(self) -> None:
        if self.name not in TEMPLATE_NAMES:
            raise TemplateError(f"unknown template name: {self.name!r}")
        found = set(_PLACEHOLDER_RE.findall(self.body))
        unknown = found - PLACEHOLDERS
        if unknown:
            raise TemplateError(f"template {self.name}: unknown placeholders {sorted(unknown)}")
        if self.name == "revision" and "<<sub_modules>>" not in found:
            raise TemplateError("revision template must contain <<sub_modules>>")
        if self.name == "cot" and "<<sub_modules>>" in found:
            raise TemplateError("cot template must not contain <<sub_modules>>")


@dataclass(frozen=True)
class RenderedPrompt:
    template_name: str
    text: str
    task_id: str
    round_index: int

    def __post_init__(self) -> None:
        if self.round_index < 0:
            raise ValueError("round_index must be >= 0")
        if "<<" in self.text or ">>" in self.text:
            raise TemplateError("rendered prompt contains placeholder marker residue")


@dataclass(frozen=True)
class OneShot:
    """The fixed demonstration pair, identical across all tasks in a run."""

    input_text: str
    output_text: str


@dataclass(frozen=True)
class TemplateSet:
    templates: dict[str, PromptTemplate]
    guide_stdio: str
    guide_call_based: str
    one_shot: OneShot
    checksums: dict[str, str]

    def __getitem__(self, name: str) -> PromptTemplate:
        return self.templates[name]


def default_templates_dir() -> Path:
    return Path(__file__).parent / "templates"


def load_templates(templates_dir: str | Path | None = None) -> TemplateSet:
    root = Path(templates_dir) if templates_dir else default_templates_dir()
    checksums: dict[str, str] = {}

    def read(stem: str) -> str:
        path = root / f"{stem}.txt"
        if not path.exists():
            raise TemplateError(f"missing template file: {path}")
        data = path.read_bytes()
        checksums[stem] = hashlib.sha256(data).hexdigest()
        return data.decode("utf-8")

    templates = {name: PromptTemplate(name, read(name)) for name in TEMPLATE_NAMES}
    guide_stdio = read("guide_stdio")
    guide_call_based = read("guide_call_based")
    one_shot = OneShot(input_text=read("one_shot_input"), output_text=read("one_shot_output"))
    return TemplateSet(
        templates=templates,
        guide_stdio=guide_stdio,
        guide_call_based=guide_call_based,
        one_shot=one_shot,
        checksums=checksums,
    )


def escape_markers(content: str) -> str:
    for marker, guard in _MARKER_GUARDS:
        content = content.replace(marker, guard)
    return content


def _render(template: PromptTemplate, substitutions: dict[str, str]) -> str:
    text = template.body
    for placeholder, content in substitutions.items():
        text = text.replace(placeholder, escape_markers(content))
    leftover = _PLACEHOLDER_RE.findall(text)
    if leftover:
        raise TemplateError(f"template {template.name}: unresolved placeholders {leftover}")
    return text


def _question_guide(ts: TemplateSet, task: Task) -> str:
    if task.io_mode == "call_based":
        return ts.guide_call_based.format(fn_name=task.fn_name)
    return ts.guide_stdio


def build_cot_prompt(task: Task, one_shot: OneShot, ts: TemplateSet) -> RenderedPrompt:
    if not task.description.strip():
        raise ValueError(f"task {task.id}: empty description")
    text = _render(
        ts["cot"],
        {
            "<<problem>>": task.description,
            "<<question_guide>>": _question_guide(ts, task),
            "<<one_shot_input>>": one_shot.input_text,
            "<<one_shot_output>>": one_shot.output_text,
        },
    )
    return RenderedPrompt("cot", text, task.id, round_index=0)


# Feedback items are sub-modules in the M modes and whole candidate programs
# in the P modes; both get rendered to plain text here.
def feedback_text(item) -> str:
    if hasattr(item, "text") and callable(item.text):  # SubModule
        return item.text()
    if hasattr(item, "code"):  # CandidateSolution
        return item.code
    if isinstance(item, str):
        return item
    raise TypeError(f"cannot render feedback item of type {type(item).__name__}")


def build_revision_prompt(
    task: Task,
    feedback: Sequence,
    one_shot: OneShot,
    ts: TemplateSet,
    round_index: int = 1,
) -> RenderedPrompt:
    if not feedback:
        raise ValueError("revision prompt requires at least one feedback item")
    if round_index < 1:
        raise ValueError("revision rounds start at 1")
    blocks = "\n\n".join(feedback_text(item) for item in feedback)
    text = _render(
        ts["revision"],
        {
            "<<problem>>": task.description,
            "<<question_guide>>": _question_guide(ts, task),
            "<<one_shot_input>>": one_shot.input_text,
            "<<one_shot_output>>": one_shot.output_text,
            "<<sub_modules>>": blocks,
        },
    )
    return RenderedPrompt("revision", text, task.id, round_index=round_index)


def build_testgen_prompt(task: Task, ts: TemplateSet) -> RenderedPrompt:
    if task.public_tests:
        example_block = format_io_pairs(task.public_tests)
    else:
        example_block = (
            "(no example test cases are available; infer the format from the problem)"
        )
    text = _render(
        ts["testgen"],
        {"<<problem>>": task.description, "<<example_test>>": example_block},
    )
    return RenderedPrompt("testgen", text, task.id, round_index=0)


def build_quality_eval_prompt(program: str, ts: TemplateSet, task_id: str = "") -> RenderedPrompt:
    if not program.strip():
        raise ValueError("quality evaluation requires a non-empty program")
    fence = "```"
    while fence in program:  # grow the fence past any fence-like run in the program
        fence += "`"
    fenced = f"{fence}python\n{program}\n{fence}"
    text = _render(ts["quality_eval"], {"<<problem>>": fenced})
    return RenderedPrompt("quality_eval", text, task_id, round_index=0)
