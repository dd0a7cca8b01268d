"""Acceptance gate: one test per advertised guarantee of the package.

Every test here pins a user-facing behavior at its stated tolerance, using
independent oracles (tests/oracles.py) or the bundled replay fixtures.
Run ``pytest tests/test_acceptance.py -v`` to get one pass/fail line per
criterion.
"""

import json
import math
import random
import time
from pathlib import Path

import numpy as np
import pytest

import revchain
from adversarial_programs import ADVERSARIAL_CASES
from oracles import (
    brute_force_centroid_member,
    brute_force_pass_at_k,
    brute_force_silhouette,
    reference_top_level_def_names,
)
from revchain.chain import Providers, run_chain
from revchain.cli import build_limits, build_run_config, load_config, main
from revchain.clustering import (
    ClusterSchedule,
    kmeans,
    schedule_k,
    select_centroid_indices,
    silhouette,
)
from revchain.evaluation import (
    consensus_filter,
    largest_cluster_filter,
    naive_filter,
    pass_at_k,
)
from revchain.execution import (
    VERDICT_INFRA,
    VERDICT_PASS,
    VERDICT_RESOURCE,
    VERDICT_RUNTIME_ERROR,
    VERDICT_TIMEOUT,
    ResourceLimits,
    TestOutcome,
    TestReport,
    run_program,
)
from revchain.extraction import PARSE_NO_CODE, PARSE_OK, parse_candidate
from revchain.providers import LocalHashEmbedder, ReplayCompletionProvider
from revchain.tasks import TestCase, load_dataset

FIXTURES = Path(revchain.__file__).resolve().parent / "fixtures"


# ---------------------------------------------------------------------------
# 1. pass@k equals brute-force subset enumeration


def test_criterion_01_pass_at_k_matches_subset_enumeration():
    started = time.monotonic()
    checked = 0
    for n in range(1, 13):
        for c in range(0, n + 1):
            for k in range(1, n + 1):
                exact = brute_force_pass_at_k(n, c, k)
                assert pass_at_k(n, c, k) == float(exact), (n, c, k)
                checked += 1
    elapsed = time.monotonic() - started
    assert elapsed < 10.0, f"took {elapsed:.2f}s, budget 10s"
    print(f"criterion 1: {checked} (n, c, k) cells equal subset enumeration exactly, {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 2. centroid selection equals exhaustive per-cluster argmin


def _clustered_points(rng: random.Random, max_points: int = 100) -> np.ndarray:
    """Blobby instance with a few exact duplicates to force distance ties."""
    dim = rng.choice([8, 16, 32, 64, 128, 256])
    n_blobs = rng.randint(1, 5)
    points: list[list[float]] = []
    per_blob = max(2, max_points // n_blobs)
    for _ in range(n_blobs):
        center = [rng.uniform(-50.0, 50.0) for _ in range(dim)]
        for _ in range(rng.randint(2, per_blob)):
            points.append([c + rng.gauss(0.0, 2.0) for c in center])
    for _ in range(rng.randint(0, 3)):
        points.append(list(points[rng.randrange(len(points))]))
    rng.shuffle(points)
    return np.asarray(points[:max_points], dtype=np.float64)


def test_criterion_02_centroid_selection_matches_exhaustive_argmin():
    started = time.monotonic()
    rng = random.Random(20260816)
    clusters_checked = 0
    for trial in range(200):
        points = _clustered_points(rng)
        k = rng.randint(1, min(6, len(points)))
        assignment = kmeans(points, k, seed=trial)
        keys = [rng.randrange(1000) for _ in range(len(points))]
        chosen = select_centroid_indices(assignment, points, keys)
        labels = np.asarray(assignment.labels)
        for j in range(assignment.effective_k):
            members = [int(i) for i in np.flatnonzero(labels == j)]
            expected = brute_force_centroid_member(
                points, members, assignment.means[j], keys
            )
            assert chosen[j] == expected, f"trial {trial} cluster {j}"
            clusters_checked += 1
    elapsed = time.monotonic() - started
    assert elapsed < 30.0, f"took {elapsed:.2f}s, budget 30s"
    print(
        f"criterion 2: 200 instances, {clusters_checked} clusters, "
        f"zero argmin mismatches, {elapsed:.2f}s"
    )


# ---------------------------------------------------------------------------
# 3. k-means recovers well-separated blobs and never increases inertia


def _four_blob_instance(seed: int) -> tuple[np.ndarray, np.ndarray]:
    # centers 40 apart with unit spread: separation is 40x the spread
    rng = np.random.default_rng(seed)
    centers = np.asarray([[0.0, 0.0], [40.0, 0.0], [0.0, 40.0], [40.0, 40.0]])
    points = np.vstack([rng.normal(loc=c, scale=1.0, size=(50, 2)) for c in centers])
    truth = np.repeat(np.arange(4), 50)
    return points, truth


def _label_purity(labels: list[int], truth: np.ndarray) -> float:
    labels_arr = np.asarray(labels)
    agree = 0
    for cluster in np.unique(labels_arr):
        member_truth = truth[labels_arr == cluster]
        agree += int(np.max(np.bincount(member_truth)))
    return agree / len(labels)


def test_criterion_03_kmeans_blob_purity_and_monotone_inertia():
    purities = []
    for seed in range(20):
        points, truth = _four_blob_instance(seed)
        assignment = kmeans(points, 4, seed=seed)
        purities.append(_label_purity(assignment.labels, truth))
        history = assignment.inertia_history
        assert all(
            later <= earlier + 1e-9 for earlier, later in zip(history, history[1:])
        ), f"seed {seed}: inertia increased"
    mean_purity = sum(purities) / len(purities)
    assert mean_purity >= 0.95, f"mean purity {mean_purity:.4f}"
    print(f"criterion 3: mean label purity {mean_purity:.4f} over 20 seeds, inertia monotone")


# ---------------------------------------------------------------------------
# 4. silhouette agrees with the brute-force definition


def test_criterion_04_silhouette_matches_brute_force():
    rng = random.Random(41)
    worst = 0.0
    for trial in range(100):
        n = rng.randint(4, 50)
        dim = rng.choice([2, 3, 8])
        points = np.asarray(
            [[rng.uniform(-5.0, 5.0) for _ in range(dim)] for _ in range(n)]
        )
        assignment = kmeans(points, rng.randint(2, 5), seed=trial)
        if assignment.effective_k < 2:
            continue
        ours = silhouette(assignment, points)
        reference = brute_force_silhouette(points, assignment.labels)
        worst = max(worst, abs(ours - reference))
    assert worst < 1e-9, f"max deviation {worst:.3e}"

    pairs = np.asarray([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])
    assignment = kmeans(pairs, 2, seed=0)
    score = silhouette(assignment, pairs)
    exact = 1.0 - 2.0 / (10.0 + math.sqrt(101.0))
    assert abs(score - exact) < 1e-12
    assert abs(score - 0.9002) < 1e-3
    print(
        f"criterion 4: brute-force deviation {worst:.1e} over 100 instances, "
        f"worked example {score:.4f}"
    )


# ---------------------------------------------------------------------------
# 5. cluster-count schedules


def test_criterion_05_schedule_fidelity():
    decreasing = ClusterSchedule(scheme="decreasing", base_k=5)
    fixed = ClusterSchedule(scheme="fixed", base_k=5)
    increasing = ClusterSchedule(scheme="increasing", base_k=5)
    rounds = range(1, 6)
    assert [schedule_k(decreasing, r) for r in rounds] == [5, 4, 3, 2, 1]
    assert [schedule_k(fixed, r) for r in rounds] == [5, 5, 5, 5, 5]
    assert [schedule_k(increasing, r) for r in rounds] == [5, 6, 7, 8, 9]
    print("criterion 5: decreasing 5,4,3,2,1; fixed 5x5; increasing 5..9")


# ---------------------------------------------------------------------------
# 6. revision prompts draw only on public-test survivors


def _bundled_chain(task_id: str):
    config = load_config(FIXTURES / "replay_config.yaml")
    run_config = build_run_config(config)
    provider = ReplayCompletionProvider(FIXTURES / "transcripts" / "completions.jsonl")
    embedder = LocalHashEmbedder(dim=int(config["embedding"]["dim"]))
    dataset = load_dataset(FIXTURES / "mini_dataset")
    task = next(t for t in dataset.tasks if t.id == task_id)
    return run_chain(
        task,
        run_config,
        Providers(completion=provider, embedding=embedder),
        limits=build_limits(config),
        runner="double",
        jobs=4,
    )


def test_criterion_06_feedback_flows_only_from_public_test_survivors():
    chain = _bundled_chain("line-sum")
    round_one = chain.rounds[1]
    survivors = set(round_one.filtered_ids)
    assert len(survivors) == 7, f"expected 7 round-0 passers, got {len(survivors)}"
    assert not round_one.filter_fallback
    assert round_one.selected_feedback, "round 1 selected no feedback"
    prompt_text = round_one.prompts[0].text
    for submodule in round_one.selected_feedback:
        assert submodule.source_sample_id in survivors, (
            f"sub-module {submodule.name} came from sample "
            f"{submodule.source_sample_id}, outside the 7 survivors"
        )
        assert submodule.source_text in prompt_text, (
            f"centroid {submodule.name} is not embedded verbatim"
        )
    print(
        f"criterion 6: {len(round_one.selected_feedback)} centroids, all from the "
        f"7 survivors and embedded verbatim"
    )


# ---------------------------------------------------------------------------
# 7. bundled replay run is deterministic and stays on budget


def test_criterion_07_replay_determinism_and_budget(tmp_path):
    started = time.monotonic()
    config = str(FIXTURES / "replay_config.yaml")
    outs = []
    for name in ("one", "two"):
        out = tmp_path / name
        assert main(["run", "--config", config, "--out", str(out)]) == 0
        assert main(["report", "--run", str(out)]) == 0
        outs.append(out)
    first, second = outs
    assert (first / "fingerprints.json").read_bytes() == (
        second / "fingerprints.json"
    ).read_bytes()
    for rel in ("report/report.json", "report/report.txt", "report/rounds.csv"):
        assert (first / rel).read_bytes() == (second / rel).read_bytes(), rel
    for fig in ("report/fig_rounds.png", "report/fig_filters.png"):
        assert (first / fig).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n", fig

    fingerprints = json.loads((first / "fingerprints.json").read_text())
    assert len(fingerprints["tasks"]) == 3
    records = [
        json.loads(line)
        for line in (FIXTURES / "transcripts" / "completions.jsonl")
        .read_text(encoding="utf-8")
        .strip()
        .splitlines()
    ]
    # three tasks x three rounds, twenty samples per request, nothing extra
    assert fingerprints["completion_requests_served"] == 9
    assert len(records) == 9
    assert all(record["request"]["n"] == 20 for record in records)
    assert sum(len(record["texts"]) for record in records) == 180
    elapsed = time.monotonic() - started
    assert elapsed < 120.0, f"took {elapsed:.1f}s, budget 120s"
    print(
        f"criterion 7: two offline replays byte-identical, 9 requests / 180 "
        f"completions consumed, {elapsed:.1f}s"
    )


# ---------------------------------------------------------------------------
# 8. the sandbox turns hostile programs into controlled verdicts


def test_criterion_08_sandbox_adversarial_verdicts():
    limits = ResourceLimits(wall_timeout_s=1.5)
    controlled = (VERDICT_TIMEOUT, VERDICT_RESOURCE, VERDICT_RUNTIME_ERROR)
    seen = []
    for label, (code, expected_verdict) in sorted(ADVERSARIAL_CASES.items()):
        started = time.monotonic()
        outcome = run_program(
            code, TestCase(input="", expected_output="x"), limits=limits
        )
        elapsed = time.monotonic() - started
        assert outcome.verdict == expected_verdict, (
            f"{label}: {outcome.verdict} ({outcome.stderr_excerpt[:120]})"
        )
        assert outcome.verdict in controlled, label
        if outcome.verdict == VERDICT_TIMEOUT:
            assert elapsed <= limits.wall_timeout_s + 0.5, (
                f"{label}: timeout verdict took {elapsed:.2f}s"
            )
        seen.append(f"{label}={outcome.verdict}")
    print(f"criterion 8: {'; '.join(seen)}")


# ---------------------------------------------------------------------------
# 9. filter semantics and the consensus-over-naive ordering


def _fake_candidates(count: int):
    return [
        parse_candidate("```python\npass\n```", i, "acceptance", 0)
        for i in range(count)
    ]


def _fake_report(sample_id: int, verdicts_outputs) -> TestReport:
    per_test = [
        TestOutcome(verdict=v, actual_output=out) for v, out in verdicts_outputs
    ]
    return TestReport(
        sample_id=sample_id,
        per_test=per_test,
        all_passed=all(o.verdict == VERDICT_PASS for o in per_test),
    )


def test_criterion_09_filter_semantics_and_consensus_ordering():
    wrong = "wrong_answer"
    tests2 = [TestCase(input="", expected_output="6"), TestCase(input="", expected_output="7")]

    # naive keeps exactly the all-pass candidates
    cands = _fake_candidates(3)
    table = {
        0: _fake_report(0, [(VERDICT_PASS, "6"), (VERDICT_PASS, "7")]),
        1: _fake_report(1, [(VERDICT_PASS, "6"), (wrong, "9")]),
        2: _fake_report(2, [(VERDICT_PASS, "6"), (VERDICT_PASS, "7")]),
    }
    kept = naive_filter(cands, tests2, outcome_table=table)
    assert [c.sample_id for c in kept] == [0, 2]

    # largest cluster groups by agreed outputs: {6, 6, 7} keeps the pair
    one_test = [TestCase(input="", expected_output="6")]
    table = {
        0: _fake_report(0, [(VERDICT_PASS, "6")]),
        1: _fake_report(1, [(VERDICT_PASS, "6")]),
        2: _fake_report(2, [(wrong, "7")]),
    }
    kept = largest_cluster_filter(cands, one_test, outcome_table=table)
    assert [c.sample_id for c in kept] == [0, 1]

    # consensus scores (group size) x (passed subset size)
    synth = [TestCase(input="", expected_output=str(i)) for i in range(4)]
    cands6 = _fake_candidates(6)
    full = [(VERDICT_PASS, "y")] * 3 + [(wrong, "n")]
    noisy_only = [(wrong, "n")] * 3 + [(VERDICT_PASS, "y")]
    nothing = [(wrong, "n")] * 4
    table = {
        0: _fake_report(0, full),
        1: _fake_report(1, full),
        2: _fake_report(2, full),
        3: _fake_report(3, noisy_only),
        4: _fake_report(4, noisy_only),
        5: _fake_report(5, nothing),
    }
    kept = consensus_filter(cands6, synth, outcome_table=table)
    assert [c.sample_id for c in kept] == [0, 1, 2]  # score 9 beats 2 and 0

    # on the same noisy synthetic suite (final test is wrong), consensus
    # retains every truly-correct candidate while naive keeps none
    truly_correct = {0, 1, 2}
    naive_kept = {c.sample_id for c in naive_filter(cands6, synth, outcome_table=table)}
    consensus_kept = {c.sample_id for c in kept}
    assert len(consensus_kept & truly_correct) >= len(naive_kept & truly_correct)
    assert consensus_kept & truly_correct == truly_correct
    assert not naive_kept & truly_correct
    print(
        "criterion 9: hand-computed selections reproduced; consensus retained "
        f"{len(consensus_kept & truly_correct)}/3 truly-correct vs naive "
        f"{len(naive_kept & truly_correct)}/3 under a noisy synthetic suite"
    )


# ---------------------------------------------------------------------------
# 10. extraction agrees with an independent reference parser


def test_criterion_10_extraction_matches_reference_parser():
    records = [
        json.loads(line)
        for line in (FIXTURES / "transcripts" / "completions.jsonl")
        .read_text(encoding="utf-8")
        .strip()
        .splitlines()
    ]
    # records append in task order, three rounds each; the round-0 batches
    # (positions 0 and 3) carry the prose-only samples
    corpus = list(records[0]["texts"]) + list(records[3]["texts"])[:10]
    assert len(corpus) == 30

    prose_seen = 0
    modular_seen = 0
    for i, text in enumerate(corpus):
        candidate = parse_candidate(text, i, "extraction-corpus", 0)
        if "```" not in text:
            prose_seen += 1
            assert candidate.parse_status == PARSE_NO_CODE
            assert candidate.submodules == []
            continue
        assert candidate.parse_status == PARSE_OK
        expected_names = reference_top_level_def_names(candidate.code)
        names = [sm.name for sm in candidate.submodules]
        assert names == expected_names, f"sample {i}: {names} != {expected_names}"
        if names:
            modular_seen += 1
    assert prose_seen >= 1, "corpus must include prose-only completions"
    assert modular_seen >= 20, "corpus must be mostly modularized"
    print(
        f"criterion 10: 30 samples, {modular_seen} modularized matched the "
        f"reference parser, {prose_seen} prose-only flagged {PARSE_NO_CODE}"
    )


# ---------------------------------------------------------------------------
# 11. executor contract: nominal bit-exactness plus adversarial containment


def _available_runners():
    runners = ["double"]
    try:
        from revchain_shim import shim_path
    except ImportError:
        return runners
    runners.append(shim_path())
    return runners


def test_criterion_11_runner_contract():
    fast = ResourceLimits(wall_timeout_s=5.0)
    hostile_limits = ResourceLimits(wall_timeout_s=1.5)
    controlled = (VERDICT_TIMEOUT, VERDICT_RESOURCE, VERDICT_RUNTIME_ERROR)
    runners = _available_runners()
    for runner in runners:
        echo = run_program(
            "print(input())",
            TestCase(input="hi\n", expected_output="hi\n"),
            limits=fast,
            runner=runner,
        )
        assert echo.verdict == VERDICT_PASS
        assert echo.actual_output == "hi\n"

        call = run_program(
            "def add(a, b):\n    return a + b\n",
            TestCase(input="[2, 3]", expected_output="5"),
            io_mode="call_based",
            fn_name="add",
            limits=fast,
            runner=runner,
        )
        assert call.verdict == VERDICT_PASS
        assert call.actual_output == "5"

        # one well-formed result document per hostile run: anything else
        # would surface as an infra_error verdict
        for label, (code, expected_verdict) in sorted(ADVERSARIAL_CASES.items()):
            outcome = run_program(
                code,
                TestCase(input="", expected_output="x"),
                limits=hostile_limits,
                runner=runner,
            )
            assert outcome.verdict != VERDICT_INFRA, f"{runner}: {label}"
            assert outcome.verdict in controlled, f"{runner}: {label}"
            assert outcome.verdict == expected_verdict, f"{runner}: {label}"
    names = ", ".join("bundled double" if r == "double" else r for r in runners)
    print(f"criterion 11: contract holds for {names}")
