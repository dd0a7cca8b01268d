"""Report building and emission: delimited outputs plus rendered figures.

Everything emitted here is deterministic given the run artifacts: JSON is
written with sorted keys, tables use fixed column ordering, and no file
contains wall-clock timestamps. Run manifests (which do carry a creation
time) are written by the CLI, not here.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .chain import ChainResult, RoundRecord, round_from_dict, select_best_round
from .evaluation import (
    EvalRecord,
    Report,
    aggregate_report,
    largest_cluster_filter,
    measure_correct_ids,
    naive_filter,
    consensus_filter,
)
from .execution import (
    VERDICT_RUNTIME_ERROR,
    ResourceLimits,
    TestOutcome,
    TestReport,
)
from .tasks import Dataset, Task, TestCase

log = logging.getLogger(__name__)

REPORT_SCHEMA = "revchain-report-v1"


# ---------------------------------------------------------------------------
# Loading run artifacts


@dataclass
class RunArtifacts:
    run_dir: Path
    config_fingerprint: str
    chains: dict[str, ChainResult]


def load_run(run_dir: str | Path) -> RunArtifacts:
    """Load every task chain from a run directory written by the CLI."""
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json under {run_dir}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    chains: dict[str, ChainResult] = {}
    for task_id in manifest["task_ids"]:
        task_dir = run_dir / "tasks" / task_id
        chain_doc = json.loads((task_dir / "chain.json").read_text(encoding="utf-8"))
        rounds = []
        for r in range(chain_doc["rounds"]):
            round_doc = json.loads(
                (task_dir / f"round_{r}.json").read_text(encoding="utf-8")
            )
            rounds.append(round_from_dict(round_doc))
        chains[task_id] = ChainResult(
            task_id=task_id,
            rounds=rounds,
            best_round=chain_doc["best_round"],
            config_fingerprint=chain_doc["config_fingerprint"],
        )
    return RunArtifacts(
        run_dir=run_dir,
        config_fingerprint=manifest["config_fingerprint"],
        chains=chains,
    )


# ---------------------------------------------------------------------------
# Eval record construction (reuses stored public-test outcomes)


def _public_table(
    record: RoundRecord, tests: list[TestCase] | tuple[TestCase, ...]
) -> dict[int, TestReport]:
    """Outcome table over public tests, reusing the run's stored reports.

    Candidates without a stored report (unparseable ones) get a synthetic
    all-failed report so the filters see every candidate.
    """
    table = dict(record.public_reports)
    for c in record.candidates:
        if c.sample_id not in table:
            outcomes = [
                TestOutcome(
                    verdict=VERDICT_RUNTIME_ERROR,
                    stderr_excerpt="no runnable code extracted",
                )
                for _ in tests
            ]
            table[c.sample_id] = TestReport(
                sample_id=c.sample_id, per_test=outcomes, all_passed=False
            )
    return table


def build_eval_records(
    chains: dict[str, ChainResult],
    dataset: Dataset,
    filters: tuple[str, ...] = ("none", "naive"),
    criterion: str = "public_proxy",
    fixed_round: int | None = None,
    synthetic: dict[str, list[TestCase]] | None = None,
    limits: ResourceLimits = ResourceLimits(),
    runner: str | None = None,
    jobs: int = 1,
    round_label: str = "best",
) -> list[EvalRecord]:
    """Score each chain at its selected round.

    Correctness always comes from private tests. The naive and
    largest-cluster filters run over the task's public tests, reusing the
    outcome tables stored during the run; the consensus filter requires
    externally supplied synthetic tests per task.
    """
    records = []
    for task_id in sorted(chains):
        chain = chains[task_id]
        task = dataset.by_id(task_id)
        round_index = select_best_round(chain, criterion, fixed_round)
        record = chain.rounds[round_index]
        candidates = record.candidates
        correct_ids = measure_correct_ids(
            candidates, task, limits=limits, runner=runner, jobs=jobs
        )
        retained: dict[str, tuple[int, ...]] = {}
        public_table = _public_table(record, task.public_tests)
        for name in filters:
            if name == "none":
                continue
            if name == "naive":
                kept = naive_filter(
                    candidates, task.public_tests, outcome_table=public_table
                )
            elif name == "largest_cluster":
                if task.public_tests:
                    kept = largest_cluster_filter(
                        candidates, task.public_tests, outcome_table=public_table
                    )
                else:
                    log.warning(
                        "task %s has no public tests; largest_cluster is a no-op",
                        task_id,
                    )
                    kept = list(candidates)
            elif name == "consensus":
                tests = (synthetic or {}).get(task_id, [])
                if not tests:
                    raise ValueError(
                        f"consensus filter requested but no synthetic tests for task {task_id}"
                    )
                kept = consensus_filter(
                    candidates,
                    tests,
                    io_mode=task.io_mode,
                    fn_name=task.fn_name,
                    limits=limits,
                    runner=runner,
                    jobs=jobs,
                )
            else:
                raise ValueError(f"unknown filter: {name!r}")
            retained[name] = tuple(sorted(c.sample_id for c in kept))
        records.append(
            EvalRecord(
                task_id=task_id,
                difficulty=task.difficulty,
                n=len(candidates),
                correct_ids=correct_ids,
                retained=retained,
                round_label=round_label,
            )
        )
    return records


# ---------------------------------------------------------------------------
# Per-round series for the CSV and the round figure


ROUND_CSV_COLUMNS = (
    "task_id",
    "round",
    "candidate_count",
    "parse_ok_count",
    "public_all_passed_count",
    "mean_public_pass_fraction",
    "filtered_pool_size",
    "filter_fallback",
    "degenerate",
)


def round_series(chains: dict[str, ChainResult]) -> list[dict]:
    rows = []
    for task_id in sorted(chains):
        for record in chains[task_id].rounds:
            rows.append(
                {
                    "task_id": task_id,
                    "round": record.round_index,
                    "candidate_count": record.metrics.get("candidate_count", 0),
                    "parse_ok_count": record.metrics.get("parse_ok_count", 0),
                    "public_all_passed_count": record.metrics.get(
                        "public_all_passed_count", 0
                    ),
                    "mean_public_pass_fraction": round(
                        record.metrics.get("mean_public_pass_fraction", 0.0), 10
                    ),
                    "filtered_pool_size": len(record.filtered_ids),
                    "filter_fallback": record.filter_fallback,
                    "degenerate": record.degenerate,
                }
            )
    return rows


# ---------------------------------------------------------------------------
# Emission


def write_report_json(
    report: Report,
    records: list[EvalRecord],
    artifacts: RunArtifacts,
    criterion: str,
    path: Path,
) -> None:
    doc = {
        "schema": REPORT_SCHEMA,
        "config_fingerprint": artifacts.config_fingerprint,
        "round_selection": criterion,
        "chains": {
            task_id: {
                "best_round": chain.best_round,
                "rounds": len(chain.rounds),
                "fingerprint": chain.fingerprint(),
            }
            for task_id, chain in artifacts.chains.items()
        },
        "rows": [
            {
                "difficulty": r.difficulty,
                "metric": r.metric,
                "filter": r.filter,
                "round_label": r.round_label,
                "value_pct": round(r.value_pct, 6),
                "n_tasks": r.n_tasks,
            }
            for r in report.rows
        ],
        "records": [
            {
                "task_id": r.task_id,
                "difficulty": r.difficulty,
                "n": r.n,
                "c": r.c,
                "correct_ids": list(r.correct_ids),
                "retained": {k: list(v) for k, v in sorted(r.retained.items())},
                "round_label": r.round_label,
            }
            for r in records
        ],
    }
    path.write_text(
        json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def write_report_txt(report: Report, path: Path) -> None:
    """Aligned-column text table, one block per (metric, round_label)."""
    blocks: dict[tuple[str, str], list] = {}
    for row in report.rows:
        blocks.setdefault((row.metric, row.round_label), []).append(row)
    lines = []
    for (metric, round_label), rows in sorted(blocks.items()):
        filters = sorted({r.filter for r in rows})
        difficulties = []
        for r in rows:
            if r.difficulty not in difficulties:
                difficulties.append(r.difficulty)
        lines.append(f"{metric} (%), round selection: {round_label}")
        header = ["difficulty".ljust(16)] + [f.rjust(16) for f in filters] + [
            "tasks".rjust(7)
        ]
        lines.append("  ".join(header))
        for difficulty in difficulties:
            cells = [difficulty.ljust(16)]
            n_tasks = 0
            for f in filters:
                match = next(
                    (
                        r
                        for r in rows
                        if r.difficulty == difficulty and r.filter == f
                    ),
                    None,
                )
                cells.append(
                    (f"{match.value_pct:.2f}" if match else "-").rjust(16)
                )
                if match:
                    n_tasks = match.n_tasks
            cells.append(str(n_tasks).rjust(7))
            lines.append("  ".join(cells))
        lines.append("")
    path.write_text("\n".join(lines), encoding="utf-8")


def write_rounds_csv(rows: list[dict], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ROUND_CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def render_figures(report: Report, rows: list[dict], out_dir: Path) -> list[Path]:
    """Render the per-round pass-rate lines and the per-filter bars as PNGs."""
    out = []

    by_task: dict[str, list[dict]] = {}
    for row in rows:
        by_task.setdefault(row["task_id"], []).append(row)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for task_id, series in sorted(by_task.items()):
        series = sorted(series, key=lambda r: r["round"])
        ax.plot(
            [r["round"] for r in series],
            [r["mean_public_pass_fraction"] for r in series],
            marker="o",
            label=task_id,
        )
    ax.set_xlabel("revision round")
    ax.set_ylabel("mean public-test pass fraction")
    ax.set_title("Public-test pass rate by revision round")
    ax.set_ylim(-0.05, 1.05)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    rounds_png = out_dir / "fig_rounds.png"
    fig.savefig(rounds_png, dpi=110)
    plt.close(fig)
    out.append(rounds_png)

    all_rows = [r for r in report.rows if r.difficulty == "All"]
    if all_rows:
        fig, ax = plt.subplots(figsize=(7, 4.5))
        labels = [f"{r.filter}\n{r.metric}" for r in all_rows]
        values = [r.value_pct for r in all_rows]
        ax.bar(range(len(all_rows)), values, color="#4878a8")
        ax.set_xticks(range(len(all_rows)))
        ax.set_xticklabels(labels, fontsize=8)
        ax.set_ylabel("mean pass rate (%)")
        ax.set_title("Overall pass rate by filter")
        ax.grid(True, axis="y", alpha=0.3)
        for i, v in enumerate(values):
            ax.text(i, v, f"{v:.1f}", ha="center", va="bottom", fontsize=8)
        fig.tight_layout()
        bars_png = out_dir / "fig_filters.png"
        fig.savefig(bars_png, dpi=110)
        plt.close(fig)
        out.append(bars_png)
    return out


def emit_report(
    artifacts: RunArtifacts,
    dataset: Dataset,
    out_dir: str | Path,
    filters: tuple[str, ...] = ("none", "naive"),
    k_values: tuple[int, ...] = (1,),
    criterion: str = "public_proxy",
    fixed_round: int | None = None,
    synthetic: dict[str, list[TestCase]] | None = None,
    limits: ResourceLimits = ResourceLimits(),
    runner: str | None = None,
    jobs: int = 1,
) -> dict[str, Path]:
    """Build records, aggregate, and write all report files.

    Returns the emitted paths keyed by kind (json, txt, csv, figures).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = build_eval_records(
        artifacts.chains,
        dataset,
        filters=filters,
        criterion=criterion,
        fixed_round=fixed_round,
        synthetic=synthetic,
        limits=limits,
        runner=runner,
        jobs=jobs,
    )
    report = aggregate_report(records, k_values=k_values, filters=filters)
    rows = round_series(artifacts.chains)

    json_path = out_dir / "report.json"
    txt_path = out_dir / "report.txt"
    csv_path = out_dir / "rounds.csv"
    write_report_json(report, records, artifacts, criterion, json_path)
    write_report_txt(report, txt_path)
    write_rounds_csv(rows, csv_path)
    figures = render_figures(report, rows, out_dir)
    paths = {"json": json_path, "txt": txt_path, "csv": csv_path}
    for i, fig_path in enumerate(figures):
        paths[f"figure_{i}"] = fig_path
    return paths
