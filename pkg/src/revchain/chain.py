"""The per-task generate / filter / cluster / revise loop.

Round 0 samples N candidates from the outline-then-implement prompt. Each
revision round filters the previous round's candidates on public tests,
gathers their sub-modules (or whole programs), clusters them, selects the
member closest to each cluster mean, and regenerates N candidates from a
revision prompt that embeds those selections verbatim. Every round is
persisted before the next begins so interrupted runs can resume.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import clustering
from .clustering import ClusterSchedule
from .execution import (
    FilterOutcome,
    ResourceLimits,
    TestOutcome,
    TestReport,
    evaluate_candidate,
    filter_by_public_tests,
)
from .extraction import CandidateSolution, SubModule, parse_candidate
from .prompts import (
    RenderedPrompt,
    TemplateSet,
    build_cot_prompt,
    build_revision_prompt,
    load_templates,
)
from .providers import SamplingParams
from .tasks import Task

log = logging.getLogger(__name__)

FEEDBACK_MODES = ("C-M", "R-M", "C-P", "R-P")


@dataclass(frozen=True)
class RunConfig:
    samples_per_round: int = 20
    max_rounds: int = 5
    schedule: ClusterSchedule = field(default_factory=ClusterSchedule)
    sampling: SamplingParams = field(default_factory=SamplingParams)
    use_public_filter: bool = True
    revision_feedback: str = "C-M"
    seed: int = 1234

    def __post_init__(self) -> None:
        if self.samples_per_round < 1:
            raise ValueError("samples_per_round must be >= 1")
        if self.max_rounds < 0:
            raise ValueError("max_rounds must be >= 0")
        if self.revision_feedback not in FEEDBACK_MODES:
            raise ValueError(f"unknown revision_feedback mode: {self.revision_feedback!r}")


@dataclass
class Providers:
    completion: object
    embedding: object | None = None


@dataclass
class RoundRecord:
    round_index: int
    prompts: list[RenderedPrompt]
    candidates: list[CandidateSolution]
    filtered_ids: list[int]
    filter_fallback: bool
    cluster: dict | None
    selected_feedback: list
    feedback_kind: str  # "submodules" or "programs"
    degenerate: bool
    metrics: dict
    public_reports: dict[int, TestReport] = field(default_factory=dict)


@dataclass
class ChainResult:
    task_id: str
    rounds: list[RoundRecord]
    best_round: int
    config_fingerprint: str

    def fingerprint(self) -> str:
        doc = {
            "task_id": self.task_id,
            "config_fingerprint": self.config_fingerprint,
            "best_round": self.best_round,
            "rounds": [_strip_timing(round_to_dict(r)) for r in self.rounds],
        }
        return hashlib.sha256(
            json.dumps(doc, sort_keys=True, ensure_ascii=False).encode("utf-8")
        ).hexdigest()


def config_fingerprint(config: RunConfig, template_checksums: dict[str, str]) -> str:
    doc = {
        "samples_per_round": config.samples_per_round,
        "max_rounds": config.max_rounds,
        "schedule": {"scheme": config.schedule.scheme, "base_k": config.schedule.base_k},
        "sampling": {
            "temperature": config.sampling.temperature,
            "max_tokens": config.sampling.max_tokens,
            "n": config.sampling.n,
        },
        "use_public_filter": config.use_public_filter,
        "revision_feedback": config.revision_feedback,
        "seed": config.seed,
        "templates": dict(sorted(template_checksums.items())),
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Serialization (round files on disk, fingerprints, inspection)

_TIMING_KEYS = {"elapsed_s", "latency_s"}


def _strip_timing(obj):
    if isinstance(obj, dict):
        return {k: _strip_timing(v) for k, v in obj.items() if k not in _TIMING_KEYS}
    if isinstance(obj, list):
        return [_strip_timing(v) for v in obj]
    return obj


def _submodule_to_dict(sm: SubModule) -> dict:
    return {
        "name": sm.name,
        "header": sm.header,
        "docstring": sm.docstring,
        "body": sm.body,
        "source_sample_id": sm.source_sample_id,
        "round_index": sm.round_index,
        "source_text": sm.source_text,
    }


def _submodule_from_dict(doc: dict) -> SubModule:
    return SubModule(**doc)


def _candidate_to_dict(c: CandidateSolution) -> dict:
    return {
        "sample_id": c.sample_id,
        "task_id": c.task_id,
        "round_index": c.round_index,
        "raw_text": c.raw_text,
        "code": c.code,
        "parse_status": c.parse_status,
        "submodules": [_submodule_to_dict(sm) for sm in c.submodules],
    }


def _candidate_from_dict(doc: dict) -> CandidateSolution:
    doc = dict(doc)
    submodules = [_submodule_from_dict(d) for d in doc.pop("submodules", [])]
    return CandidateSolution(submodules=submodules, **doc)


def _feedback_to_dict(item) -> dict:
    if isinstance(item, SubModule):
        return {"kind": "submodule", "data": _submodule_to_dict(item)}
    return {
        "kind": "program",
        "data": {"sample_id": item.sample_id, "code": item.code, "round_index": item.round_index},
    }


def _feedback_from_dict(doc: dict):
    if doc["kind"] == "submodule":
        return _submodule_from_dict(doc["data"])
    data = doc["data"]
    return CandidateSolution(
        sample_id=data["sample_id"],
        task_id="",
        round_index=data["round_index"],
        raw_text="",
        code=data["code"],
        parse_status="ok",
    )


def round_to_dict(record: RoundRecord) -> dict:
    return {
        "round_index": record.round_index,
        "prompts": [
            {
                "template_name": p.template_name,
                "text": p.text,
                "task_id": p.task_id,
                "round_index": p.round_index,
            }
            for p in record.prompts
        ],
        "candidates": [_candidate_to_dict(c) for c in record.candidates],
        "filtered_ids": list(record.filtered_ids),
        "filter_fallback": record.filter_fallback,
        "cluster": record.cluster,
        "selected_feedback": [_feedback_to_dict(i) for i in record.selected_feedback],
        "feedback_kind": record.feedback_kind,
        "degenerate": record.degenerate,
        "metrics": record.metrics,
        "public_reports": {
            str(sid): {
                "all_passed": rep.all_passed,
                "outcomes": [
                    {
                        "verdict": o.verdict,
                        "actual_output": o.actual_output,
                        "stderr_excerpt": o.stderr_excerpt,
                        "elapsed_s": o.elapsed_s,
                    }
                    for o in rep.per_test
                ],
            }
            for sid, rep in sorted(record.public_reports.items())
        },
    }


def round_from_dict(doc: dict) -> RoundRecord:
    prompts = [RenderedPrompt(**p) for p in doc["prompts"]]
    candidates = [_candidate_from_dict(c) for c in doc["candidates"]]
    reports = {}
    for sid, rep in doc.get("public_reports", {}).items():
        outcomes = [TestOutcome(**o) for o in rep["outcomes"]]
        reports[int(sid)] = TestReport(
            sample_id=int(sid), per_test=outcomes, all_passed=rep["all_passed"]
        )
    return RoundRecord(
        round_index=doc["round_index"],
        prompts=prompts,
        candidates=candidates,
        filtered_ids=list(doc["filtered_ids"]),
        filter_fallback=doc["filter_fallback"],
        cluster=doc.get("cluster"),
        selected_feedback=[_feedback_from_dict(i) for i in doc.get("selected_feedback", [])],
        feedback_kind=doc.get("feedback_kind", "submodules"),
        degenerate=doc.get("degenerate", False),
        metrics=doc["metrics"],
        public_reports=reports,
    )


# ---------------------------------------------------------------------------
# Round construction helpers


def _evaluate_public(
    candidates: list[CandidateSolution],
    task: Task,
    limits: ResourceLimits,
    runner: str | None,
    jobs: int,
) -> dict[int, TestReport]:
    if not task.public_tests:
        return {}
    runnable = [c for c in candidates if c.parsed_ok]

    def one(candidate: CandidateSolution) -> tuple[int, TestReport]:
        report = evaluate_candidate(
            candidate,
            task.public_tests,
            io_mode=task.io_mode,
            fn_name=task.fn_name,
            limits=limits,
            runner=runner,
        )
        return candidate.sample_id, report

    if jobs > 1 and len(runnable) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            pairs = list(pool.map(one, runnable))
    else:
        pairs = [one(c) for c in runnable]
    return dict(pairs)


def _round_metrics(
    candidates: list[CandidateSolution],
    reports: dict[int, TestReport],
    has_public_tests: bool,
) -> dict:
    fractions = []
    all_passed = 0
    for c in candidates:
        rep = reports.get(c.sample_id)
        fractions.append(rep.pass_fraction if rep else 0.0)
        if rep and rep.all_passed:
            all_passed += 1
    mean_fraction = sum(fractions) / len(fractions) if fractions else 0.0
    return {
        "has_public_tests": has_public_tests,
        "mean_public_pass_fraction": mean_fraction,
        "public_all_passed_count": all_passed,
        "parse_ok_count": sum(1 for c in candidates if c.parsed_ok),
        "candidate_count": len(candidates),
    }


def _sample_round_candidates(
    task: Task,
    prompt: RenderedPrompt,
    config: RunConfig,
    providers: Providers,
    round_index: int,
) -> list[CandidateSolution]:
    params = dataclasses.replace(config.sampling, n=config.samples_per_round)
    batch = providers.completion.complete(prompt.text, params)
    base_id = round_index * config.samples_per_round
    return [
        parse_candidate(text, sample_id=base_id + i, task_id=task.id, round_index=round_index)
        for i, text in enumerate(batch.texts)
    ]


def _gather_feedback_pool(kept: list[CandidateSolution], mode: str):
    parsed = [c for c in kept if c.parsed_ok]
    if mode in ("C-M", "R-M"):
        return [sm for c in parsed for sm in c.submodules]
    return parsed


def _select_feedback(
    task: Task,
    pool: list,
    mode: str,
    config: RunConfig,
    providers: Providers,
    round_index: int,
) -> tuple[list, dict | None]:
    """Returns (selected items, cluster dump or None)."""
    if mode in ("C-M", "C-P"):
        if providers.embedding is None:
            raise ValueError("centroid feedback modes require an embedding provider")
        texts = [item.text() if isinstance(item, SubModule) else item.code for item in pool]
        vectors = providers.embedding.embed_texts(texts)
        k = clustering.schedule_k(
            config.schedule, round_index, vectors=vectors, seed=config.seed
        )
        assignment = clustering.kmeans(vectors, k, seed=config.seed + round_index)
        keys = [
            item.source_sample_id if isinstance(item, SubModule) else item.sample_id
            for item in pool
        ]
        selected_indices = clustering.select_centroid_indices(assignment, vectors, keys)
        selected = [pool[i] for i in selected_indices]
        dump = {
            "k_requested": k,
            "effective_k": assignment.effective_k,
            "labels": list(assignment.labels),
            "inertia": assignment.inertia,
            "item_sources": [
                item.source_sample_id if isinstance(item, SubModule) else item.sample_id
                for item in pool
            ],
            "item_names": [
                item.name if isinstance(item, SubModule) else f"sample-{item.sample_id}"
                for item in pool
            ],
            "selected_indices": selected_indices,
        }
        return selected, dump

    # random baselines draw the same count the schedule would give
    count = clustering.schedule_k(config.schedule, round_index, vectors=None, seed=config.seed)
    count = min(count, len(pool))
    rng = random.Random(f"{config.seed}:{round_index}:{task.id}")
    selected = rng.sample(pool, count)
    return selected, None


# ---------------------------------------------------------------------------
# Chain driver


def run_chain(
    task: Task,
    config: RunConfig,
    providers: Providers,
    limits: ResourceLimits = ResourceLimits(),
    runner: str | None = None,
    jobs: int = 1,
    templates: TemplateSet | None = None,
    checkpoint_dir: str | Path | None = None,
    resume: bool = False,
) -> ChainResult:
    """Run the full chain for one task.

    With ``checkpoint_dir`` set, each completed round is written to
    ``round_<r>.json`` before the next starts; with ``resume`` those files
    are loaded instead of regenerated.
    """
    ts = templates or load_templates()
    cfg_fp = config_fingerprint(config, ts.checksums)
    ckpt = Path(checkpoint_dir) if checkpoint_dir else None
    if ckpt:
        ckpt.mkdir(parents=True, exist_ok=True)

    rounds: list[RoundRecord] = []
    feedback_mode = config.revision_feedback
    feedback_kind = "submodules" if feedback_mode.endswith("M") else "programs"

    for round_index in range(config.max_rounds + 1):
        if ckpt and resume:
            existing = ckpt / f"round_{round_index}.json"
            if existing.exists():
                rounds.append(round_from_dict(json.loads(existing.read_text(encoding="utf-8"))))
                continue

        if round_index == 0:
            prompt = build_cot_prompt(task, ts.one_shot, ts)
            filtered_ids: list[int] = []
            fallback = False
            cluster_dump = None
            feedback: list = []
            degenerate = False
        else:
            prev = rounds[-1]
            pool_candidates = [c for c in prev.candidates if c.parsed_ok]
            if config.use_public_filter:
                outcome = filter_by_public_tests(
                    pool_candidates,
                    task.public_tests,
                    io_mode=task.io_mode,
                    fn_name=task.fn_name,
                    limits=limits,
                    runner=runner,
                    jobs=jobs,
                    reports=prev.public_reports,
                )
            else:
                outcome = FilterOutcome(kept=pool_candidates, fallback=False)
            filtered_ids = sorted(c.sample_id for c in outcome.kept)
            fallback = outcome.fallback

            pool = _gather_feedback_pool(outcome.kept, feedback_mode)
            if pool:
                feedback, cluster_dump = _select_feedback(
                    task, pool, feedback_mode, config, providers, round_index
                )
                degenerate = False
            else:
                # nothing usable came out of the previous round: reuse its
                # feedback so the chain keeps its budget shape
                feedback = list(prev.selected_feedback)
                cluster_dump = None
                degenerate = True
                log.warning(
                    "task %s round %d: no feedback pool, marking round degenerate",
                    task.id,
                    round_index,
                )

            if feedback:
                prompt = build_revision_prompt(
                    task, feedback, ts.one_shot, ts, round_index=round_index
                )
            else:
                # degenerate with nothing to reuse: fall back to the round-0
                # prompt rather than aborting the chain
                base = build_cot_prompt(task, ts.one_shot, ts)
                prompt = RenderedPrompt(
                    template_name=base.template_name,
                    text=base.text,
                    task_id=base.task_id,
                    round_index=round_index,
                )

        candidates = _sample_round_candidates(task, prompt, config, providers, round_index)
        reports = _evaluate_public(candidates, task, limits, runner, jobs)
        metrics = _round_metrics(candidates, reports, bool(task.public_tests))
        record = RoundRecord(
            round_index=round_index,
            prompts=[prompt],
            candidates=candidates,
            filtered_ids=filtered_ids,
            filter_fallback=fallback,
            cluster=cluster_dump,
            selected_feedback=feedback,
            feedback_kind=feedback_kind,
            degenerate=degenerate,
            metrics=metrics,
            public_reports=reports,
        )
        rounds.append(record)
        if ckpt:
            path = ckpt / f"round_{round_index}.json"
            path.write_text(
                json.dumps(round_to_dict(record), sort_keys=True, ensure_ascii=False, indent=1)
                + "\n",
                encoding="utf-8",
            )

    result = ChainResult(
        task_id=task.id, rounds=rounds, best_round=0, config_fingerprint=cfg_fp
    )
    result.best_round = select_best_round(result, "public_proxy")
    if ckpt:
        (ckpt / "chain.json").write_text(
            json.dumps(
                {
                    "task_id": task.id,
                    "config_fingerprint": cfg_fp,
                    "best_round": result.best_round,
                    "fingerprint": result.fingerprint(),
                    "rounds": len(rounds),
                },
                sort_keys=True,
                indent=1,
            )
            + "\n",
            encoding="utf-8",
        )
    return result


def select_best_round(
    chain: ChainResult, criterion: str = "public_proxy", fixed_round: int | None = None
) -> int:
    """Pick the round to report, using public tests as the proxy signal."""
    if not chain.rounds:
        raise ValueError("chain has no rounds")
    last = len(chain.rounds) - 1
    if criterion == "fixed_round":
        if fixed_round is None:
            raise ValueError("fixed_round criterion requires an index")
        if fixed_round > last:
            log.warning("fixed round %d beyond last round %d, clamping", fixed_round, last)
            return last
        return fixed_round
    if criterion != "public_proxy":
        raise ValueError(f"unknown round-selection criterion: {criterion!r}")

    if not chain.rounds[0].metrics.get("has_public_tests", False):
        log.warning("task %s has no public tests, selecting the last round", chain.task_id)
        return last
    best_index, best_rate = 0, -1.0
    for record in chain.rounds:
        rate = record.metrics.get("mean_public_pass_fraction", 0.0)
        if rate > best_rate:  # strict: ties keep the earliest round
            best_index, best_rate = record.round_index, rate
    return best_index
