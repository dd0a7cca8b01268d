"""Sandboxed execution of candidate programs and the public-test filter.

The supervisor never runs candidate code in-process. Each (program, test)
pair gets a fresh child runner, launched with ``python -S`` on an isolated
file, with the request document written to the child's stdin and the result
document read from a dedicated pipe descriptor (schema in PROTOCOL.md). The
supervisor applies its own resource limits on the child and hard-kills the
whole process group at the wall timeout, on top of whatever the runner
imposes on itself.
"""

from __future__ import annotations

import json
import logging
import math
import os
import shutil
import signal
import subprocess
import sys
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .extraction import CandidateSolution
from .tasks import TestCase

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1

VERDICT_PASS = "pass"
VERDICT_WRONG = "wrong_answer"
VERDICT_RUNTIME_ERROR = "runtime_error"
VERDICT_TIMEOUT = "timeout"
VERDICT_RESOURCE = "resource_exceeded"
VERDICT_INFRA = "infra_error"

_KILL_GRACE_S = 0.25  # voluntary-exit window after the result doc arrives


@dataclass(frozen=True)
class ResourceLimits:
    wall_timeout_s: float = 10.0
    memory_cap_bytes: int = 1 << 30
    output_cap_bytes: int = 8 << 20

    def __post_init__(self) -> None:
        if self.wall_timeout_s <= 0 or self.memory_cap_bytes <= 0 or self.output_cap_bytes <= 0:
            raise ValueError("resource limits must be strictly positive")


@dataclass
class TestOutcome:
    verdict: str
    actual_output: str = ""
    stderr_excerpt: str = ""
    elapsed_s: float = 0.0


@dataclass
class TestReport:
    sample_id: int
    per_test: list[TestOutcome]
    all_passed: bool

    @property
    def pass_fraction(self) -> float:
        if not self.per_test:
            return 0.0
        passed = sum(1 for t in self.per_test if t.verdict == VERDICT_PASS)
        return passed / len(self.per_test)


@dataclass
class FilterOutcome:
    kept: list[CandidateSolution]
    fallback: bool
    reports: dict[int, TestReport] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Output comparison


def normalize_output(text: str) -> list[str]:
    """Trim trailing whitespace per line, drop trailing blank lines."""
    lines = [line.rstrip() for line in text.split("\n")]
    while lines and lines[-1] == "":
        lines.pop()
    return lines


def outputs_match(expected: str, actual: str) -> bool:
    return normalize_output(expected) == normalize_output(actual)


# ---------------------------------------------------------------------------
# Runner resolution


def bundled_double_path() -> str:
    return str(Path(__file__).parent / "shim_double.py")


def resolve_runner(runner: str | None = None) -> str:
    """Resolve which child runner file to launch.

    ``None``/"auto" prefers the standalone runner package when installed and
    falls back to the bundled double; "double" pins the bundled double; any
    other value is a filesystem path.
    """
    if runner in (None, "auto"):
        try:
            from revchain_shim import shim_path  # standalone package, optional
        except ImportError:
            return bundled_double_path()
        return str(shim_path())
    if runner == "double":
        return bundled_double_path()
    path = Path(runner)
    if not path.exists():
        raise FileNotFoundError(f"runner program not found: {runner}")
    return str(path)


def _preexec_limits(limits: ResourceLimits):
    import resource

    def apply() -> None:
        mem = limits.memory_cap_bytes
        cpu = int(math.ceil(limits.wall_timeout_s)) + 1
        for which, caps in (
            (resource.RLIMIT_AS, (mem, mem)),
            (resource.RLIMIT_CPU, (cpu, cpu + 1)),
            (resource.RLIMIT_FSIZE, (limits.output_cap_bytes, limits.output_cap_bytes)),
            (resource.RLIMIT_CORE, (0, 0)),
            (resource.RLIMIT_NPROC, (64, 64)),  # no effect for root, kept anyway
        ):
            try:
                resource.setrlimit(which, caps)
            except (ValueError, OSError):
                pass

    return apply


class _ResultReader(threading.Thread):
    """Drains the result pipe; signals as soon as one full line arrived."""

    def __init__(self, fd: int, max_bytes: int):
        super().__init__(daemon=True)
        self.fd = fd
        self.max_bytes = max_bytes
        self.buf = bytearray()
        self.oversized = False
        self.doc_ready = threading.Event()

    def run(self) -> None:
        try:
            while True:
                chunk = os.read(self.fd, 65536)
                if not chunk:
                    break
                if len(self.buf) + len(chunk) > self.max_bytes:
                    self.oversized = True
                    break
                self.buf.extend(chunk)
                if b"\n" in chunk:
                    self.doc_ready.set()
        except OSError:
            pass
        finally:
            try:
                os.close(self.fd)
            except OSError:
                pass
            self.doc_ready.set()


def run_program(
    code: str,
    test: TestCase,
    io_mode: str = "stdio",
    fn_name: str | None = None,
    limits: ResourceLimits = ResourceLimits(),
    runner: str | None = None,
) -> TestOutcome:
    """Execute one program against one test case in a fresh sandboxed child."""
    runner_path = resolve_runner(runner)
    request = {
        "protocol": PROTOCOL_VERSION,
        "program_source": code,
        "io_mode": io_mode,
        "fn_name": fn_name,
        "test_input": test.input,
        "limits": {
            "wall_timeout_s": limits.wall_timeout_s,
            "memory_cap_bytes": limits.memory_cap_bytes,
            "output_cap_bytes": limits.output_cap_bytes,
        },
    }

    read_fd, write_fd = os.pipe()
    sandbox_dir = tempfile.mkdtemp(prefix="sandbox-")
    start = time.monotonic()
    try:
        proc = subprocess.Popen(
            [sys.executable, "-S", runner_path, "--result-fd", str(write_fd)],
            stdin=subprocess.PIPE,
            stdout=subprocess.DEVNULL,
            stderr=subprocess.DEVNULL,
            pass_fds=(write_fd,),
            cwd=sandbox_dir,
            env={
                "PATH": os.environ.get("PATH", ""),
                "PYTHONIOENCODING": "utf-8",
                "PYTHONHASHSEED": "0",
            },
            start_new_session=True,
            preexec_fn=_preexec_limits(limits),
        )
    except OSError as exc:
        os.close(read_fd)
        os.close(write_fd)
        shutil.rmtree(sandbox_dir, ignore_errors=True)
        return TestOutcome(verdict=VERDICT_INFRA, stderr_excerpt=f"spawn failed: {exc}")

    os.close(write_fd)
    reader = _ResultReader(read_fd, max_bytes=2 * limits.output_cap_bytes + (1 << 20))
    reader.start()

    killed_by_supervisor = False
    try:
        try:
            proc.stdin.write(json.dumps(request).encode("utf-8"))
            proc.stdin.close()
        except (BrokenPipeError, OSError):
            pass

        got_doc = reader.doc_ready.wait(timeout=limits.wall_timeout_s)
        remaining = limits.wall_timeout_s - (time.monotonic() - start)
        grace = _KILL_GRACE_S if got_doc else max(0.0, remaining)
        try:
            proc.wait(timeout=grace)
        except subprocess.TimeoutExpired:
            killed_by_supervisor = True
            try:
                os.killpg(proc.pid, signal.SIGKILL)
            except (ProcessLookupError, PermissionError):
                pass
            proc.wait()
    finally:
        reader.join(timeout=1.0)
        shutil.rmtree(sandbox_dir, ignore_errors=True)

    elapsed = time.monotonic() - start
    return _interpret_result(
        bytes(reader.buf),
        oversized=reader.oversized,
        killed=killed_by_supervisor,
        elapsed=elapsed,
        expected=test.expected_output,
        io_mode=io_mode,
    )


def _interpret_result(
    payload: bytes,
    oversized: bool,
    killed: bool,
    elapsed: float,
    expected: str,
    io_mode: str,
) -> TestOutcome:
    if oversized:
        return TestOutcome(
            verdict=VERDICT_INFRA, stderr_excerpt="result document oversized", elapsed_s=elapsed
        )
    line = payload.split(b"\n", 1)[0].strip()
    if not line:
        if killed:
            return TestOutcome(
                verdict=VERDICT_TIMEOUT, stderr_excerpt="killed at wall timeout", elapsed_s=elapsed
            )
        return TestOutcome(
            verdict=VERDICT_INFRA,
            stderr_excerpt="runner exited without a result document",
            elapsed_s=elapsed,
        )
    try:
        doc = json.loads(line.decode("utf-8"))
        if not isinstance(doc, dict) or doc.get("protocol") != PROTOCOL_VERSION:
            raise ValueError("bad protocol")
        verdict_raw = doc["verdict_raw"]
        stdout = doc.get("stdout", "")
        rv_repr = doc.get("return_value_repr", "")
        stderr_excerpt = doc.get("stderr_excerpt", "")
        runner_elapsed = float(doc.get("elapsed_s", 0.0))
    except (ValueError, KeyError, TypeError, UnicodeDecodeError):
        return TestOutcome(
            verdict=VERDICT_INFRA, stderr_excerpt="malformed result document", elapsed_s=elapsed
        )

    del runner_elapsed  # supervisor-observed wall time is authoritative
    actual = rv_repr if io_mode == "call_based" else stdout
    if verdict_raw == "completed":
        verdict = VERDICT_PASS if outputs_match(expected, actual) else VERDICT_WRONG
    elif verdict_raw == "exception":
        verdict = VERDICT_RUNTIME_ERROR
    elif verdict_raw == "self_timeout":
        verdict = VERDICT_TIMEOUT
    elif verdict_raw == "output_overflow":
        verdict = VERDICT_RESOURCE
    elif verdict_raw == "protocol_error":
        verdict = VERDICT_INFRA
    else:
        return TestOutcome(
            verdict=VERDICT_INFRA,
            stderr_excerpt=f"unknown runner verdict: {verdict_raw!r}",
            elapsed_s=elapsed,
        )
    return TestOutcome(
        verdict=verdict, actual_output=actual, stderr_excerpt=stderr_excerpt, elapsed_s=elapsed
    )


def run_candidate(
    solution: CandidateSolution,
    test: TestCase,
    io_mode: str = "stdio",
    fn_name: str | None = None,
    limits: ResourceLimits = ResourceLimits(),
    runner: str | None = None,
) -> TestOutcome:
    if not solution.parsed_ok:
        raise ValueError(f"candidate {solution.sample_id} has no runnable code")
    return run_program(solution.code, test, io_mode, fn_name, limits, runner)


def evaluate_candidate(
    solution: CandidateSolution,
    tests: list[TestCase] | tuple[TestCase, ...],
    io_mode: str = "stdio",
    fn_name: str | None = None,
    limits: ResourceLimits = ResourceLimits(),
    runner: str | None = None,
    jobs: int = 1,
    short_circuit: bool = False,
) -> TestReport:
    """Run a candidate against a full test suite.

    By default every test runs. ``short_circuit`` stops scheduling new tests
    after the first failure; it can only skip tests that could not change
    ``all_passed`` anymore.
    """
    if not tests:
        raise ValueError("evaluate_candidate requires a non-empty test list")

    outcomes: list[TestOutcome] = []
    if jobs <= 1 or len(tests) == 1:
        for test in tests:
            outcome = run_candidate(solution, test, io_mode, fn_name, limits, runner)
            outcomes.append(outcome)
            if short_circuit and outcome.verdict != VERDICT_PASS:
                break
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(run_candidate, solution, test, io_mode, fn_name, limits, runner)
                for test in tests
            ]
            outcomes = [f.result() for f in futures]
            if short_circuit:
                for i, outcome in enumerate(outcomes):
                    if outcome.verdict != VERDICT_PASS:
                        outcomes = outcomes[: i + 1]
                        break

    all_passed = len(outcomes) == len(tests) and all(
        o.verdict == VERDICT_PASS for o in outcomes
    )
    return TestReport(sample_id=solution.sample_id, per_test=outcomes, all_passed=all_passed)


def filter_by_public_tests(
    candidates: list[CandidateSolution],
    public_tests: list[TestCase] | tuple[TestCase, ...],
    io_mode: str = "stdio",
    fn_name: str | None = None,
    limits: ResourceLimits = ResourceLimits(),
    runner: str | None = None,
    jobs: int = 1,
    reports: dict[int, TestReport] | None = None,
) -> FilterOutcome:
    """Keep candidates that pass every public test.

    Used at revision time, where an empty result would stall the chain: when
    nothing passes, or there are no public tests at all, every candidate is
    returned and the outcome is flagged as a fallback. Precomputed reports
    (keyed by sample_id) are reused instead of re-running tests.
    """
    candidates = list(candidates)
    if not public_tests:
        return FilterOutcome(kept=candidates, fallback=True)

    reports = dict(reports) if reports else {}
    runnable = [c for c in candidates if c.parsed_ok]

    def get_report(candidate: CandidateSolution) -> TestReport:
        if candidate.sample_id not in reports:
            reports[candidate.sample_id] = evaluate_candidate(
                candidate, public_tests, io_mode, fn_name, limits, runner
            )
        return reports[candidate.sample_id]

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(get_report, runnable))
    else:
        for candidate in runnable:
            get_report(candidate)

    kept = [c for c in runnable if reports[c.sample_id].all_passed]
    if not kept:
        return FilterOutcome(kept=candidates, fallback=True, reports=reports)
    return FilterOutcome(kept=kept, fallback=False, reports=reports)
