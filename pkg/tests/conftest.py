import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from revchain.extraction import parse_candidate
from revchain.prompts import load_templates
from revchain.providers import CompletionBatch, fingerprint_text
from revchain.tasks import Task, TestCase


@pytest.fixture(scope="session")
def templates():
    return load_templates()


def make_candidate(code: str, sample_id: int = 0, task_id: str = "t", round_index: int = 0):
    """Wrap source in a fenced block and parse it into a candidate."""
    return parse_candidate(
        f"```python\n{code}\n```", sample_id=sample_id, task_id=task_id, round_index=round_index
    )


class ScriptedCompletionProvider:
    """Returns completions from a fixed per-call script, cycling the last entry."""

    provider_id = "scripted"

    def __init__(self, script: list[list[str]]):
        self.script = script
        self.calls = 0
        self.prompts: list[str] = []

    def complete(self, prompt_text: str, params) -> CompletionBatch:
        texts = self.script[min(self.calls, len(self.script) - 1)]
        self.calls += 1
        self.prompts.append(prompt_text)
        if len(texts) < params.n:
            texts = (texts * params.n)[: params.n]
        return CompletionBatch(
            prompt_fingerprint=fingerprint_text(prompt_text),
            texts=list(texts[: params.n]),
            provider_id=self.provider_id,
        )


@pytest.fixture
def sum_task():
    return Task(
        id="sum-lines",
        description="Read one line of space separated integers and print their sum.",
        difficulty="introductory",
        io_mode="stdio",
        fn_name=None,
        public_tests=(TestCase(input="1 2 3\n", expected_output="6\n"),),
        private_tests=(
            TestCase(input="4 5\n", expected_output="9\n"),
            TestCase(input="10\n", expected_output="10\n"),
        ),
    )
