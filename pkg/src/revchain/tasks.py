"""Benchmark problems and dataset loading.

A dataset on disk is a directory of canonical task records (one JSON file per
problem) plus a ``manifest.json`` naming the dataset, its split, and the task
ids in order.  Converters for APPS-style and CodeContests-style source layouts
produce the same canonical form, so everything downstream reads one format.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

log = logging.getLogger(__name__)

DIFFICULTIES = ("introductory", "interview", "competition", "unknown")
IO_MODES = ("stdio", "call_based")


@dataclass(frozen=True)
class TestCase:
    """One input/output pair.

    ``input`` is the text fed to the program's standard input; in call-based
    mode it is a JSON-encoded argument list instead.  ``expected_output`` is
    the expected stdout text, or the canonical rendering of the expected
    return value in call-based mode.
    """

    input: str
    expected_output: str

    def __post_init__(self) -> None:
        if self.expected_output is None:  # type: ignore[unreachable]
            raise ValueError("expected_output must not be null")


@dataclass(frozen=True)
class Task:
    id: str
    description: str
    difficulty: str = "unknown"
    io_mode: str = "stdio"
    fn_name: str | None = None
    public_tests: tuple[TestCase, ...] = ()
    private_tests: tuple[TestCase, ...] = ()

    def __post_init__(self) -> None:
        if self.difficulty not in DIFFICULTIES:
            raise ValueError(f"unknown difficulty: {self.difficulty!r}")
        if self.io_mode not in IO_MODES:
            raise ValueError(f"unknown io_mode: {self.io_mode!r}")
        if self.io_mode == "call_based" and not self.fn_name:
            raise ValueError(f"task {self.id}: call_based requires fn_name")


@dataclass(frozen=True)
class Dataset:
    name: str
    split: str
    tasks: tuple[Task, ...]

    def __post_init__(self) -> None:
        ids = [t.id for t in self.tasks]
        if len(ids) != len(set(ids)):
            raise ValueError("task ids must be unique within a dataset")

    def by_id(self, task_id: str) -> Task:
        for t in self.tasks:
            if t.id == task_id:
                return t
        raise KeyError(task_id)


@dataclass
class LoadReport:
    loaded: int = 0
    skipped: list[tuple[str, str]] = field(default_factory=list)  # (file, reason)


# ---------------------------------------------------------------------------
# Canonical record serialization


def task_to_record(task: Task) -> dict:
    return {
        "id": task.id,
        "description": task.description,
        "difficulty": task.difficulty,
        "io_mode": task.io_mode,
        "fn_name": task.fn_name,
        "public_tests": [
            {"input": t.input, "expected_output": t.expected_output}
            for t in task.public_tests
        ],
        "private_tests": [
            {"input": t.input, "expected_output": t.expected_output}
            for t in task.private_tests
        ],
    }


def task_from_record(record: dict) -> Task:
    def tests(key: str) -> tuple[TestCase, ...]:
        out = []
        for item in record.get(key, []):
            if item.get("expected_output") is None:
                raise ValueError(f"{key} entry missing expected_output")
            out.append(
                TestCase(input=item.get("input", ""), expected_output=item["expected_output"])
            )
        return tuple(out)

    difficulty = record.get("difficulty") or "unknown"
    return Task(
        id=str(record["id"]),
        description=record["description"],
        difficulty=difficulty,
        io_mode=record.get("io_mode", "stdio"),
        fn_name=record.get("fn_name"),
        public_tests=tests("public_tests"),
        private_tests=tests("private_tests"),
    )


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write the canonical one-file-per-task layout plus manifest."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for task in dataset.tasks:
        record_path = root / f"{task.id}.json"
        record_path.write_text(
            json.dumps(task_to_record(task), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    manifest = {
        "name": dataset.name,
        "split": dataset.split,
        "tasks": [t.id for t in dataset.tasks],
    }
    (root / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_dataset_with_report(
    path: str | Path, format: str = "generic"
) -> tuple[Dataset, LoadReport]:
    """Load a dataset directory; malformed records are skipped, not fatal."""
    root = Path(path)
    if not root.exists():
        raise FileNotFoundError(f"dataset path does not exist: {root}")
    if format == "generic":
        return _load_generic(root)
    if format == "apps":
        return _load_apps(root)
    if format == "codecontests":
        return _load_codecontests(root)
    raise ValueError(f"unknown dataset format: {format!r}")


def load_dataset(path: str | Path, format: str = "generic") -> Dataset:
    dataset, _report = load_dataset_with_report(path, format)
    return dataset


def _load_generic(root: Path) -> tuple[Dataset, LoadReport]:
    report = LoadReport()
    manifest_path = root / "manifest.json"
    name, split = root.name, "test"
    ordered_ids: list[str] | None = None
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        name = manifest.get("name", name)
        split = manifest.get("split", split)
        ordered_ids = manifest.get("tasks")

    record_files = sorted(p for p in root.glob("*.json") if p.name != "manifest.json")
    if ordered_ids is not None:
        by_stem = {p.stem: p for p in record_files}
        record_files = [by_stem[i] for i in ordered_ids if i in by_stem]

    tasks = []
    for record_path in record_files:
        try:
            record = json.loads(record_path.read_text(encoding="utf-8"))
            tasks.append(task_from_record(record))
            report.loaded += 1
        except (ValueError, KeyError, TypeError) as exc:
            log.warning("skipping malformed task record %s: %s", record_path.name, exc)
            report.skipped.append((record_path.name, str(exc)))
    return Dataset(name=name, split=split, tasks=tuple(tasks)), report


# ---------------------------------------------------------------------------
# Public-test extraction from problem descriptions

# Two description layouts are recognized:
#   1. dash-fenced headers:   -----Input-----\n<block>\n-----Output-----\n<block>
#   2. example sections with "Input:" / "Output:" marker lines
# Markers of both kinds are scanned in document order and consecutive
# (input block, output block) pairs become test cases.  A block ends at the
# next marker or at a section-header-looking line (another dash header, or an
# "Example 2:" / "Note:" style heading), so surrounding prose never leaks
# into an expected output.

_DASH_MARKER = re.compile(r"^-{3,}\s*(input|output)\s*-{3,}\s*$", re.IGNORECASE | re.MULTILINE)
_COLON_MARKER = re.compile(r"^(input|output):[ \t]*(.*)$", re.IGNORECASE | re.MULTILINE)
_SECTION_BREAK = re.compile(
    r"^-{3,}\s*\w[\w ]*-{3,}\s*$"
    r"|^(examples?|notes?|explanation|constraints?)\b[^:\n]*:[ \t]*$",
    re.IGNORECASE | re.MULTILINE,
)


def extract_public_tests(description: str) -> list[TestCase]:
    """Best-effort extraction of example input/output pairs from prose."""
    markers: list[tuple[int, int, str, str]] = []  # (start, content_start, kind, inline)
    for m in _DASH_MARKER.finditer(description):
        markers.append((m.start(), m.end(), m.group(1).lower(), ""))
    for m in _COLON_MARKER.finditer(description):
        markers.append((m.start(), m.end(), m.group(1).lower(), m.group(2)))
    markers.sort(key=lambda item: item[0])

    blocks: list[tuple[str, str]] = []  # (kind, text)
    for i, (_, content_start, kind, inline) in enumerate(markers):
        end = markers[i + 1][0] if i + 1 < len(markers) else len(description)
        body = description[content_start:end]
        cut = _SECTION_BREAK.search(body)
        if cut:
            body = body[: cut.start()]
        text = (inline + "\n" + body if inline else body).strip("\n")
        text = "\n".join(line.rstrip() for line in text.split("\n")).strip("\n")
        blocks.append((kind, text))

    pairs: list[TestCase] = []
    pending_input: str | None = None
    for kind, text in blocks:
        if kind == "input":
            pending_input = text  # an input directly followed by another input is dropped
        elif pending_input is not None:
            pairs.append(TestCase(input=pending_input, expected_output=text))
            pending_input = None
    return pairs


# ---------------------------------------------------------------------------
# Source-layout converters

# APPS-style layout: one directory per problem containing question.txt,
# input_output.json ({"inputs": [...], "outputs": [...], "fn_name"?}) and
# optionally metadata.json ({"difficulty": ...}).  Public tests come from the
# description; private entries that duplicate a public pair are dropped so the
# two suites stay disjoint.


def _test_key(case: TestCase) -> tuple[str, str]:
    """Whitespace-insensitive identity used to keep public/private disjoint.

    Extracted statement examples lose trailing newlines that the raw test
    files keep, so duplicate detection compares per-line-stripped text.
    """

    def norm(text: str) -> str:
        lines = [line.rstrip() for line in text.split("\n")]
        while lines and lines[-1] == "":
            lines.pop()
        return "\n".join(lines)

    return norm(case.input), norm(case.expected_output)


def _load_apps(root: Path) -> tuple[Dataset, LoadReport]:
    report = LoadReport()
    tasks = []
    for problem_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        try:
            tasks.append(_apps_task(problem_dir))
            report.loaded += 1
        except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
            log.warning("skipping APPS problem %s: %s", problem_dir.name, exc)
            report.skipped.append((problem_dir.name, str(exc)))
    return Dataset(name=root.name, split="test", tasks=tuple(tasks)), report


def _apps_task(problem_dir: Path) -> Task:
    description = (problem_dir / "question.txt").read_text(encoding="utf-8")
    io_doc = json.loads((problem_dir / "input_output.json").read_text(encoding="utf-8"))
    difficulty = "unknown"
    meta_path = problem_dir / "metadata.json"
    if meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        if meta.get("difficulty") in DIFFICULTIES:
            difficulty = meta["difficulty"]

    fn_name = io_doc.get("fn_name")
    io_mode = "call_based" if fn_name else "stdio"
    inputs, outputs = io_doc.get("inputs", []), io_doc.get("outputs", [])
    all_tests = []
    for raw_in, raw_out in zip(inputs, outputs):
        if io_mode == "call_based":
            # inputs are argument lists; outputs are [return_value]
            args = raw_in if isinstance(raw_in, list) else [raw_in]
            value = raw_out[0] if isinstance(raw_out, list) and raw_out else raw_out
            case = TestCase(input=json.dumps(args), expected_output=canonical_value_text(value))
        else:
            case = TestCase(input=str(raw_in), expected_output=str(raw_out))
        all_tests.append(case)

    public = extract_public_tests(description) if io_mode == "stdio" else []
    public_keys = {_test_key(t) for t in public}
    private = [t for t in all_tests if _test_key(t) not in public_keys]
    return Task(
        id=problem_dir.name,
        description=description,
        difficulty=difficulty,
        io_mode=io_mode,
        fn_name=fn_name,
        public_tests=tuple(public),
        private_tests=tuple(private),
    )


# CodeContests-style layout: a tasks.jsonl (or .json list) where each entry
# carries official public tests, so rule-based extraction is skipped.
# generated_tests, when present, are folded into the private suite.


def _load_codecontests(root: Path) -> tuple[Dataset, LoadReport]:
    report = LoadReport()
    if root.is_file():
        source = root
    else:
        candidates = sorted(root.glob("*.jsonl")) + sorted(root.glob("*.json"))
        if not candidates:
            raise FileNotFoundError(f"no .jsonl/.json task file under {root}")
        source = candidates[0]

    entries: list[dict] = []
    text = source.read_text(encoding="utf-8")
    if source.suffix == ".jsonl":
        for line in text.splitlines():
            if line.strip():
                entries.append(json.loads(line))
    else:
        entries = json.loads(text)

    tasks = []
    for i, entry in enumerate(entries):
        try:
            tasks.append(_codecontests_task(entry, i))
            report.loaded += 1
        except (ValueError, KeyError, TypeError) as exc:
            name = entry.get("name", f"entry-{i}") if isinstance(entry, dict) else f"entry-{i}"
            log.warning("skipping CodeContests entry %s: %s", name, exc)
            report.skipped.append((str(name), str(exc)))
    return Dataset(name=source.stem, split="test", tasks=tuple(tasks)), report


def _codecontests_task(entry: dict, index: int) -> Task:
    def suite(key: str) -> list[TestCase]:
        doc = entry.get(key) or {}
        return [
            TestCase(input=str(i), expected_output=str(o))
            for i, o in zip(doc.get("input", []), doc.get("output", []))
        ]

    difficulty = entry.get("difficulty", "unknown")
    if difficulty not in DIFFICULTIES:
        difficulty = "unknown"
    public = suite("public_tests")
    private = suite("private_tests") + suite("generated_tests")
    public_keys = {_test_key(t) for t in public}
    private = [t for t in private if _test_key(t) not in public_keys]
    raw_id = entry.get("name") or f"task-{index}"
    task_id = re.sub(r"[^A-Za-z0-9_.-]+", "_", str(raw_id))
    return Task(
        id=task_id,
        description=entry["description"],
        difficulty=difficulty,
        io_mode="stdio",
        fn_name=None,
        public_tests=tuple(public),
        private_tests=tuple(private),
    )


# ---------------------------------------------------------------------------
# Canonical rendering of call-based expected values.  Must stay in sync with
# the runner protocol document (PROTOCOL.md): deterministic literal form with
# stable collection ordering.


def canonical_value_text(value) -> str:
    if value is None or isinstance(value, bool):
        return str(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, (list, tuple)):
        inner = ", ".join(canonical_value_text(v) for v in value)
        if isinstance(value, tuple):
            return "(" + inner + ",)" if len(value) == 1 else "(" + inner + ")"
        return "[" + inner + "]"
    if isinstance(value, (set, frozenset)):
        if not value:
            return "set()"
        return "{" + ", ".join(sorted(canonical_value_text(v) for v in value)) + "}"
    if isinstance(value, dict):
        items = sorted(
            (canonical_value_text(k), canonical_value_text(v)) for k, v in value.items()
        )
        return "{" + ", ".join(f"{k}: {v}" for k, v in items) + "}"
    rep = repr(value)
    if " at 0x" in rep:  # address-bearing reprs are not stable
        return f"<{type(value).__name__}>"
    return rep


# Shared parser for "Input:/Output:" formatted test listings.  Used both for
# example blocks embedded in prompts and for parsing generated test cases.
def parse_io_pairs(text: str, cap: int | None = None) -> list[TestCase]:
    pairs = []
    for case in extract_public_tests(text):
        pairs.append(case)
        if cap is not None and len(pairs) >= cap:
            break
    return pairs


def format_io_pairs(tests: list[TestCase] | tuple[TestCase, ...]) -> str:
    chunks = []
    for t in tests:
        chunks.append(f"Input:\n{t.input}\nOutput:\n{t.expected_output}")
    return "\n\n".join(chunks)
