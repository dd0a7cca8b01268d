"""pass@k scoring, candidate filtering, and difficulty-stratified reports.

Correctness ground truth always comes from a task's private tests. Synthetic
tests generated by a model are used for filtering only, never for computing
``c``, because imperfect synthetic outputs would silently corrupt the metric.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

from .execution import (
    VERDICT_PASS,
    VERDICT_RUNTIME_ERROR,
    VERDICT_WRONG,
    ResourceLimits,
    TestOutcome,
    TestReport,
    evaluate_candidate,
    normalize_output,
)
from .extraction import CandidateSolution
from .prompts import TemplateSet, build_testgen_prompt, load_templates
from .providers import SamplingParams
from .tasks import Task, TestCase, parse_io_pairs

log = logging.getLogger(__name__)

MAX_SYNTHETIC_TESTS = 20
ERROR_SENTINEL = "__ERROR__"

DIFFICULTY_ORDER = ("introductory", "interview", "competition", "unknown")


def pass_at_k(n: int, c: int, k: int) -> float:
    """Probability that at least one of k samples drawn from n is correct.

    Evaluates 1 - C(n-c, k) / C(n, k) exactly with rational arithmetic
    before converting to float, so large n cannot overflow or lose
    precision in intermediate terms.
    """
    if n < 0 or c < 0 or c > n:
        raise ValueError(f"need 0 <= c <= n, got n={n} c={c}")
    if k < 1 or k > n:
        raise ValueError(f"need 1 <= k <= n, got k={k} n={n}")
    miss = Fraction(math.comb(n - c, k), math.comb(n, k))
    return float(1 - miss)


# ---------------------------------------------------------------------------
# Outcome tables: one full evaluation per (candidate, test), shared by filters


def run_outcome_table(
    candidates: list[CandidateSolution],
    tests: list[TestCase] | tuple[TestCase, ...],
    io_mode: str = "stdio",
    fn_name: str | None = None,
    limits: ResourceLimits = ResourceLimits(),
    runner: str | None = None,
    jobs: int = 1,
) -> dict[int, TestReport]:
    """Evaluate every candidate on every test, without short-circuiting.

    Candidates with no extractable code get a synthetic all-failed report
    instead of a child process per test.
    """
    table: dict[int, TestReport] = {}
    for candidate in candidates:
        if not candidate.parsed_ok:
            outcomes = [
                TestOutcome(
                    verdict=VERDICT_RUNTIME_ERROR,
                    stderr_excerpt="no runnable code extracted",
                )
                for _ in tests
            ]
            table[candidate.sample_id] = TestReport(
                sample_id=candidate.sample_id, per_test=outcomes, all_passed=False
            )
        else:
            table[candidate.sample_id] = evaluate_candidate(
                candidate,
                list(tests),
                io_mode=io_mode,
                fn_name=fn_name,
                limits=limits,
                runner=runner,
                jobs=jobs,
            )
    return table


def _table_or_run(candidates, tests, outcome_table, exec_kwargs) -> dict[int, TestReport]:
    if outcome_table is not None:
        return outcome_table
    return run_outcome_table(candidates, tests, **exec_kwargs)


# ---------------------------------------------------------------------------
# Filters. All of them return a subset of the input, in input order.


def naive_filter(
    candidates: list[CandidateSolution],
    tests: list[TestCase] | tuple[TestCase, ...],
    outcome_table: dict[int, TestReport] | None = None,
    **exec_kwargs,
) -> list[CandidateSolution]:
    """Keep exactly the candidates passing every given test.

    Unlike the revision-time public filter, an empty result is returned
    as-is: at evaluation time there is no fallback.
    """
    if not candidates:
        return []
    if not tests:
        return list(candidates)
    table = _table_or_run(candidates, tests, outcome_table, exec_kwargs)
    return [c for c in candidates if table[c.sample_id].all_passed]


def _signature(report: TestReport) -> tuple[tuple[str, str], ...]:
    # tokens are tagged so an error can never collide with a candidate that
    # happened to print the sentinel text
    tokens = []
    for outcome in report.per_test:
        if outcome.verdict in (VERDICT_PASS, VERDICT_WRONG):
            tokens.append(("out", "\n".join(normalize_output(outcome.actual_output))))
        else:
            tokens.append(("err", ERROR_SENTINEL))
    return tuple(tokens)


def largest_cluster_filter(
    candidates: list[CandidateSolution],
    tests: list[TestCase] | tuple[TestCase, ...],
    outcome_table: dict[int, TestReport] | None = None,
    **exec_kwargs,
) -> list[CandidateSolution]:
    """Keep the largest group of candidates agreeing on every test output.

    A candidate's signature is its normalized output per test, with an
    error sentinel token where the run did not complete. Size ties go to
    the group containing the lowest sample id.
    """
    if not tests:
        raise ValueError("largest_cluster_filter requires a non-empty test list")
    if not candidates:
        return []
    table = _table_or_run(candidates, tests, outcome_table, exec_kwargs)
    groups: dict[tuple[str, ...], list[CandidateSolution]] = {}
    for c in candidates:
        groups.setdefault(_signature(table[c.sample_id]), []).append(c)
    best = max(
        groups.values(), key=lambda g: (len(g), -min(c.sample_id for c in g))
    )
    return best


def consensus_filter(
    candidates: list[CandidateSolution],
    synthetic_tests: list[TestCase] | tuple[TestCase, ...],
    outcome_table: dict[int, TestReport] | None = None,
    **exec_kwargs,
) -> list[CandidateSolution]:
    """Dual-agreement filtering over model-generated tests.

    Candidates are grouped by the exact subset of synthetic tests they
    pass; each group scores (group size) x (passed-subset size) and the
    highest-scoring group wins. Ties prefer the larger passed subset,
    then the lowest sample id.
    """
    if not synthetic_tests:
        raise ValueError("consensus_filter requires a non-empty synthetic test list")
    if not candidates:
        return []
    table = _table_or_run(candidates, synthetic_tests, outcome_table, exec_kwargs)
    groups: dict[frozenset[int], list[CandidateSolution]] = {}
    for c in candidates:
        report = table[c.sample_id]
        passed = frozenset(
            i for i, o in enumerate(report.per_test) if o.verdict == VERDICT_PASS
        )
        groups.setdefault(passed, []).append(c)
    best_subset = max(
        groups,
        key=lambda s: (
            len(groups[s]) * len(s),
            len(s),
            -min(c.sample_id for c in groups[s]),
        ),
    )
    return groups[best_subset]


FILTERS = {
    "naive": naive_filter,
    "largest_cluster": largest_cluster_filter,
    "consensus": consensus_filter,
}


# ---------------------------------------------------------------------------
# Synthetic test generation


def generate_synthetic_tests(
    task: Task,
    provider,
    params: SamplingParams | None = None,
    templates: TemplateSet | None = None,
) -> list[TestCase]:
    """Ask the model for extra test cases and parse them from the reply.

    At most ``MAX_SYNTHETIC_TESTS`` well-formed pairs are kept; malformed
    pairs are dropped silently, and zero parseable pairs yields an empty
    list with a warning.
    """
    ts = templates or load_templates()
    prompt = build_testgen_prompt(task, ts)
    p = dataclasses.replace(params or SamplingParams(), n=1)
    batch = provider.complete(prompt.text, p)
    pairs = parse_io_pairs(batch.texts[0], cap=MAX_SYNTHETIC_TESTS)
    if not pairs:
        log.warning("task %s: no parseable synthetic test cases in completion", task.id)
    return pairs


# ---------------------------------------------------------------------------
# Records and reports


@dataclass(frozen=True)
class EvalRecord:
    """Per-task scoring inputs measured at one round of one run."""

    task_id: str
    difficulty: str
    n: int
    correct_ids: tuple[int, ...]
    retained: dict[str, tuple[int, ...]] = field(default_factory=dict)
    round_label: str = "best"

    @property
    def c(self) -> int:
        return len(self.correct_ids)

    def __post_init__(self) -> None:
        if not 0 <= self.c <= self.n:
            raise ValueError(f"need 0 <= c <= n, got c={self.c} n={self.n}")
        for name, ids in self.retained.items():
            if len(set(ids)) != len(ids):
                raise ValueError(f"duplicate retained ids under filter {name!r}")


def measure_correct_ids(
    candidates: list[CandidateSolution],
    task: Task,
    limits: ResourceLimits = ResourceLimits(),
    runner: str | None = None,
    jobs: int = 1,
) -> tuple[int, ...]:
    """Sample ids of candidates passing ALL private tests."""
    if not task.private_tests:
        return ()
    correct = []
    for candidate in candidates:
        if not candidate.parsed_ok:
            continue
        report = evaluate_candidate(
            candidate,
            list(task.private_tests),
            io_mode=task.io_mode,
            fn_name=task.fn_name,
            limits=limits,
            runner=runner,
            jobs=jobs,
            short_circuit=True,
        )
        if report.all_passed:
            correct.append(candidate.sample_id)
    return tuple(sorted(correct))


def record_pass_at_k(record: EvalRecord, k: int, filter_name: str = "none") -> float:
    """pass@k for one task under one filter, with the (n', c') convention.

    Under a filter, n' is the retained count and c' the retained-correct
    count; an empty retained set scores 0 and k is capped at n'.
    """
    if filter_name == "none":
        n, c = record.n, record.c
    else:
        if filter_name not in record.retained:
            raise KeyError(f"record {record.task_id} has no filter {filter_name!r}")
        ids = record.retained[filter_name]
        n = len(ids)
        c = len(set(ids) & set(record.correct_ids))
    if n == 0:
        return 0.0
    return pass_at_k(n, c, min(k, n))


@dataclass(frozen=True)
class ReportRow:
    difficulty: str
    metric: str
    filter: str
    round_label: str
    value_pct: float
    n_tasks: int


@dataclass
class Report:
    rows: list[ReportRow]

    def lookup(
        self, difficulty: str, metric: str, filter_name: str, round_label: str
    ) -> ReportRow | None:
        for row in self.rows:
            if (row.difficulty, row.metric, row.filter, row.round_label) == (
                difficulty,
                metric,
                filter_name,
                round_label,
            ):
                return row
        return None


def _difficulty_sort_key(difficulty: str):
    try:
        return (0, DIFFICULTY_ORDER.index(difficulty))
    except ValueError:
        return (1, difficulty)


def aggregate_report(
    records: list[EvalRecord],
    k_values: tuple[int, ...] = (1,),
    filters: tuple[str, ...] = ("none",),
) -> Report:
    """Mean pass@k in percent, stratified by difficulty plus an All row.

    The All row is the task-weighted mean: it averages over every record,
    so it always equals sum(difficulty_mean * difficulty_count) / total.
    """
    if not records:
        raise ValueError("aggregate_report requires at least one record")
    rows: list[ReportRow] = []
    round_labels = sorted({r.round_label for r in records})
    for round_label in round_labels:
        batch = [r for r in records if r.round_label == round_label]
        difficulties = sorted({r.difficulty for r in batch}, key=_difficulty_sort_key)
        for filter_name in filters:
            for k in k_values:
                metric = f"pass@{k}"
                for difficulty in list(difficulties) + ["All"]:
                    group = (
                        batch
                        if difficulty == "All"
                        else [r for r in batch if r.difficulty == difficulty]
                    )
                    mean = sum(record_pass_at_k(r, k, filter_name) for r in group) / len(
                        group
                    )
                    rows.append(
                        ReportRow(
                            difficulty=difficulty,
                            metric=metric,
                            filter=filter_name,
                            round_label=round_label,
                            value_pct=100.0 * mean,
                            n_tasks=len(group),
                        )
                    )
    report = Report(rows=rows)
    if not all_row_consistent(report):
        raise AssertionError("report All rows do not reconstruct from difficulty rows")
    return report


def all_row_consistent(report: Report, tol: float = 1e-9) -> bool:
    """Check that every All row is the task-weighted mean of its difficulty rows."""
    groups: dict[tuple[str, str, str], list[ReportRow]] = {}
    for row in report.rows:
        groups.setdefault((row.metric, row.filter, row.round_label), []).append(row)
    for rows in groups.values():
        all_rows = [r for r in rows if r.difficulty == "All"]
        parts = [r for r in rows if r.difficulty != "All"]
        if len(all_rows) != 1:
            return False
        total = sum(p.n_tasks for p in parts)
        if total != all_rows[0].n_tasks:
            return False
        weighted = sum(p.value_pct * p.n_tasks for p in parts) / total
        if abs(weighted - all_rows[0].value_pct) > tol:
            return False
    return True
