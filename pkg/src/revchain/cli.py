"""Command-line entry point.

Subcommands:
  convert          convert a raw dataset layout into the on-disk task format
  run              run revision chains for every task in a dataset
  report           score a finished run and emit report files plus figures
  gen-tests        generate synthetic test cases for filtering
  inspect-clusters print the cluster assignment recorded at a round
  inspect-prompts  print the prompt text sent at a round

Run configuration lives in a YAML file; ``${VAR}`` references are replaced
from the environment before parsing, and relative paths are resolved
against the config file's directory.
"""

from __future__ import annotations

import argparse
import datetime
import json
import logging
import os
import re
import sys
from pathlib import Path

import yaml

from . import __version__
from .chain import Providers, RunConfig, config_fingerprint, run_chain
from .clustering import ClusterSchedule
from .execution import ResourceLimits, resolve_runner
from .prompts import load_templates
from .providers import (
    HttpCompletionProvider,
    HttpEmbeddingProvider,
    LocalHashEmbedder,
    ProviderError,
    RecordingCompletionProvider,
    RecordingEmbeddingProvider,
    ReplayCompletionProvider,
    ReplayEmbeddingProvider,
    SamplingParams,
    TranscriptIncompleteError,
    TranscriptWriter,
)
from .report import emit_report, load_run
from .tasks import TestCase, load_dataset, load_dataset_with_report, save_dataset

log = logging.getLogger(__name__)

_ENV_REF = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


class ConfigError(ValueError):
    pass


def interpolate_env(text: str, env=None) -> str:
    env = os.environ if env is None else env
    missing: list[str] = []

    def sub(match: re.Match) -> str:
        name = match.group(1)
        if name not in env:
            missing.append(name)
            return ""
        return env[name]

    out = _ENV_REF.sub(sub, text)
    if missing:
        raise ConfigError(
            "config references unset environment variables: " + ", ".join(sorted(set(missing)))
        )
    return out


def load_config(path: str | Path) -> dict:
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    doc = yaml.safe_load(interpolate_env(raw))
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a YAML mapping")
    doc["_base_dir"] = str(path.parent.resolve())
    return doc


def _resolve_path(config: dict, value: str) -> str:
    p = Path(value)
    if p.is_absolute():
        return str(p)
    return str(Path(config["_base_dir"]) / p)


def build_run_config(config: dict) -> RunConfig:
    run = config.get("run", {})
    schedule = run.get("schedule", {})
    sampling = run.get("sampling", {})
    return RunConfig(
        samples_per_round=int(run.get("samples_per_round", 20)),
        max_rounds=int(run.get("max_rounds", 5)),
        schedule=ClusterSchedule(
            scheme=schedule.get("scheme", "fixed"),
            base_k=int(schedule.get("base_k", 5)),
        ),
        sampling=SamplingParams(
            temperature=float(sampling.get("temperature", 0.6)),
            max_tokens=int(sampling.get("max_tokens", 2048)),
            n=int(run.get("samples_per_round", 20)),
        ),
        use_public_filter=bool(run.get("use_public_filter", True)),
        revision_feedback=str(run.get("revision_feedback", "C-M")),
        seed=int(run.get("seed", 1234)),
    )


def build_limits(config: dict) -> ResourceLimits:
    ex = config.get("execution", {})
    return ResourceLimits(
        wall_timeout_s=float(ex.get("wall_timeout_s", 10.0)),
        memory_cap_bytes=int(ex.get("memory_cap_bytes", 1 << 30)),
        output_cap_bytes=int(ex.get("output_cap_bytes", 8 << 20)),
    )


def _build_completion(config: dict, section: dict):
    kind = section.get("kind")
    if kind == "replay":
        return ReplayCompletionProvider(_resolve_path(config, section["transcript"]))
    if kind == "http":
        return HttpCompletionProvider(
            base_url=section["base_url"],
            model=section["model"],
            api_key_env=section.get("api_key_env", "REVCHAIN_API_KEY"),
            max_retries=int(section.get("max_retries", 3)),
            rate_cap=int(section.get("rate_cap", 4)),
            request_timeout_s=float(section.get("request_timeout_s", 60.0)),
            requests_per_sample=bool(section.get("requests_per_sample", False)),
        )
    if kind == "record":
        inner = _build_completion(config, section["inner"])
        writer = TranscriptWriter(_resolve_path(config, section["transcript"]))
        return RecordingCompletionProvider(inner, writer)
    raise ConfigError(f"unknown completion provider kind: {kind!r}")


def _build_embedding(config: dict, section: dict | None):
    if not section:
        return None
    kind = section.get("kind")
    if kind == "local":
        return LocalHashEmbedder(dim=int(section.get("dim", 256)))
    if kind == "replay":
        return ReplayEmbeddingProvider(_resolve_path(config, section["transcript"]))
    if kind == "http":
        return HttpEmbeddingProvider(
            base_url=section["base_url"],
            model=section["model"],
            api_key_env=section.get("api_key_env", "REVCHAIN_API_KEY"),
        )
    if kind == "record":
        inner = _build_embedding(config, section["inner"])
        writer = TranscriptWriter(_resolve_path(config, section["transcript"]))
        return RecordingEmbeddingProvider(inner, writer)
    raise ConfigError(f"unknown embedding provider kind: {kind!r}")


def build_providers(config: dict) -> Providers:
    if "provider" not in config:
        raise ConfigError("config is missing the 'provider' section")
    completion = _build_completion(config, config["provider"])
    embedding = _build_embedding(config, config.get("embedding"))
    return Providers(completion=completion, embedding=embedding)


def _dataset_path(config: dict) -> str:
    if "dataset" not in config:
        raise ConfigError("config is missing the 'dataset' path")
    return _resolve_path(config, str(config["dataset"]))


def _runner_and_jobs(config: dict, args) -> tuple[str | None, int]:
    ex = config.get("execution", {}) if config else {}
    runner = args.runner if getattr(args, "runner", None) else ex.get("runner")
    if runner and runner not in ("auto", "double") and config:
        maybe = _resolve_path(config, runner) if not Path(runner).is_absolute() else runner
        if Path(maybe).exists():
            runner = maybe
    jobs = args.jobs if getattr(args, "jobs", None) else int(ex.get("jobs", 1))
    return runner, max(1, jobs)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_convert(args) -> int:
    dataset, report = load_dataset_with_report(args.input, format=args.format)
    save_dataset(dataset, args.out)
    print(f"converted {report.loaded} tasks to {args.out} ({report.skipped} skipped)")
    return 0


def cmd_run(args) -> int:
    config = load_config(args.config)
    dataset = load_dataset(_dataset_path(config))
    run_config = build_run_config(config)
    providers = build_providers(config)
    limits = build_limits(config)
    runner, jobs = _runner_and_jobs(config, args)
    resolve_runner(runner)  # fail fast on unusable runner paths
    templates = load_templates()
    cfg_fp = config_fingerprint(run_config, templates.checksums)

    tasks = list(dataset.tasks)
    if args.tasks:
        wanted = set(args.tasks.split(","))
        unknown = wanted - {t.id for t in tasks}
        if unknown:
            print(f"error: unknown task ids: {', '.join(sorted(unknown))}", file=sys.stderr)
            return 1
        tasks = [t for t in tasks if t.id in wanted]

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    fingerprints: dict[str, str] = {}
    for task in tasks:
        log.info("running chain for task %s", task.id)
        chain = run_chain(
            task,
            run_config,
            providers,
            limits=limits,
            runner=runner,
            jobs=jobs,
            templates=templates,
            checkpoint_dir=out_dir / "tasks" / task.id,
            resume=args.resume,
        )
        fingerprints[task.id] = chain.fingerprint()
        print(f"task {task.id}: best_round={chain.best_round} fingerprint={fingerprints[task.id]}")

    requests_served = getattr(providers.completion, "requests_served", None)
    run_id = "run-" + cfg_fp[:12]
    manifest = {
        "schema": "revchain-run-v1",
        "run_id": run_id,
        "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "config_fingerprint": cfg_fp,
        "dataset_path": _dataset_path(config),
        "task_ids": [t.id for t in tasks],
        "samples_per_round": run_config.samples_per_round,
        "max_rounds": run_config.max_rounds,
        "revision_feedback": run_config.revision_feedback,
        "completion_provider": getattr(providers.completion, "provider_id", "unknown"),
        "embedding_provider": getattr(providers.embedding, "provider_id", None),
        "runner": runner or "auto",
        "jobs": jobs,
        "completion_requests_served": requests_served,
        "fingerprints": fingerprints,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    stable = {
        "config_fingerprint": cfg_fp,
        "completion_requests_served": requests_served,
        "tasks": fingerprints,
    }
    (out_dir / "fingerprints.json").write_text(
        json.dumps(stable, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(f"{run_id}: {len(tasks)} tasks, config fingerprint {cfg_fp}")
    if requests_served is not None:
        print(f"completion requests served: {requests_served}")
    return 0


def _load_synthetic_dir(path: str | None) -> dict[str, list[TestCase]]:
    if not path:
        return {}
    out: dict[str, list[TestCase]] = {}
    for file in sorted(Path(path).glob("*.json")):
        doc = json.loads(file.read_text(encoding="utf-8"))
        out[doc["task_id"]] = [
            TestCase(input=t["input"], expected_output=t["expected_output"])
            for t in doc.get("synthetic_tests", [])
        ]
    return out


def cmd_report(args) -> int:
    artifacts = load_run(args.run)
    manifest = json.loads((Path(args.run) / "manifest.json").read_text(encoding="utf-8"))
    dataset = load_dataset(manifest["dataset_path"])
    filters = tuple(args.filters.split(","))
    k_values = tuple(int(k) for k in args.k.split(","))
    synthetic = _load_synthetic_dir(args.synthetic_dir)
    out_dir = Path(args.out) if args.out else Path(args.run) / "report"
    paths = emit_report(
        artifacts,
        dataset,
        out_dir,
        filters=filters,
        k_values=k_values,
        criterion=args.criterion,
        fixed_round=args.fixed_round,
        synthetic=synthetic,
        limits=ResourceLimits(),
        runner=args.runner,
        jobs=max(1, args.jobs or 1),
    )
    for kind in sorted(paths):
        print(f"{kind}: {paths[kind]}")
    print((out_dir / "report.txt").read_text(encoding="utf-8"), end="")
    return 0


def cmd_gen_tests(args) -> int:
    config = load_config(args.config)
    dataset = load_dataset(_dataset_path(config))
    providers = build_providers(config)
    templates = load_templates()
    run = config.get("run", {})
    sampling = run.get("sampling", {})
    params = SamplingParams(
        temperature=float(sampling.get("temperature", 0.6)),
        max_tokens=int(sampling.get("max_tokens", 2048)),
        n=1,
    )
    tasks = list(dataset.tasks)
    if args.tasks:
        wanted = set(args.tasks.split(","))
        tasks = [t for t in tasks if t.id in wanted]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    from .evaluation import generate_synthetic_tests

    for task in tasks:
        tests = generate_synthetic_tests(task, providers.completion, params, templates)
        doc = {
            "task_id": task.id,
            "synthetic_tests": [
                {"input": t.input, "expected_output": t.expected_output} for t in tests
            ],
        }
        path = out_dir / f"{task.id}.json"
        path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        print(f"task {task.id}: {len(tests)} synthetic tests -> {path}")
    return 0


def _load_round_doc(run_dir: str, task_id: str, round_index: int) -> dict:
    path = Path(run_dir) / "tasks" / task_id / f"round_{round_index}.json"
    if not path.exists():
        raise FileNotFoundError(f"no round file {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def cmd_inspect_clusters(args) -> int:
    doc = _load_round_doc(args.run, args.task, args.round)
    cluster = doc.get("cluster")
    if not cluster:
        print(
            f"task {args.task} round {args.round}: no cluster assignment recorded "
            "(round 0, degenerate round, or random feedback mode)"
        )
        return 0
    labels = cluster["labels"]
    print(
        f"task {args.task} round {args.round}: requested k={cluster['k_requested']}, "
        f"effective k={cluster['effective_k']}, inertia={cluster['inertia']:.6f}"
    )
    for j in range(cluster["effective_k"]):
        members = [i for i, l in enumerate(labels) if l == j]
        selected = [i for i in cluster["selected_indices"] if i in members]
        names = ", ".join(cluster["item_names"][i] for i in members[:8])
        more = "" if len(members) <= 8 else f", ... ({len(members)} total)"
        print(f"  cluster {j}: size={len(members)} members=[{names}{more}]")
        for i in selected:
            print(
                f"    selected: {cluster['item_names'][i]} "
                f"(from sample {cluster['item_sources'][i]})"
            )
    return 0


def cmd_inspect_prompts(args) -> int:
    rounds: list[int]
    if args.round is not None:
        rounds = [args.round]
    else:
        task_dir = Path(args.run) / "tasks" / args.task
        rounds = sorted(
            int(p.stem.split("_")[1]) for p in task_dir.glob("round_*.json")
        )
        if not rounds:
            raise FileNotFoundError(f"no round files under {task_dir}")
    for r in rounds:
        doc = _load_round_doc(args.run, args.task, r)
        for prompt in doc["prompts"]:
            print(f"=== task {args.task} round {r} ({prompt['template_name']}) ===")
            print(prompt["text"])
            print()
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="revchain",
        description="Modular code generation with clustering-guided self-revision.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="enable debug logging"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert a raw dataset into the task format")
    p.add_argument("--format", choices=("generic", "apps", "codecontests"), required=True)
    p.add_argument("--input", required=True, help="source dataset path")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("run", help="run revision chains over a dataset")
    p.add_argument("--config", required=True, help="YAML run configuration")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--tasks", help="comma-separated task id subset")
    p.add_argument("--resume", action="store_true", help="reuse completed round files")
    p.add_argument("--runner", help="override the execution runner (auto, double, or path)")
    p.add_argument("--jobs", type=int, help="parallel sandbox processes")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="score a run and emit report files")
    p.add_argument("--run", required=True, help="run directory from the run subcommand")
    p.add_argument("--out", help="report output directory (default: RUN/report)")
    p.add_argument("--filters", default="none,naive", help="comma list: none,naive,largest_cluster,consensus")
    p.add_argument("--k", default="1", help="comma list of k values for pass@k")
    p.add_argument(
        "--criterion", default="public_proxy", choices=("public_proxy", "fixed_round")
    )
    p.add_argument("--fixed-round", type=int, dest="fixed_round")
    p.add_argument("--synthetic-dir", dest="synthetic_dir", help="directory from gen-tests")
    p.add_argument("--runner", help="override the execution runner")
    p.add_argument("--jobs", type=int, help="parallel sandbox processes")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gen-tests", help="generate synthetic test cases per task")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory for per-task test files")
    p.add_argument("--tasks", help="comma-separated task id subset")
    p.set_defaults(func=cmd_gen_tests)

    p = sub.add_parser("inspect-clusters", help="print a round's cluster assignment")
    p.add_argument("--run", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--round", type=int, required=True)
    p.set_defaults(func=cmd_inspect_clusters)

    p = sub.add_parser("inspect-prompts", help="print the prompts sent at each round")
    p.add_argument("--run", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--round", type=int)
    p.set_defaults(func=cmd_inspect_prompts)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except TranscriptIncompleteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(
            "hint: the replay transcript has no (further) record for this prompt; "
            "re-record the transcript or fix the run configuration",
            file=sys.stderr,
        )
        return 2
    except (ConfigError, ProviderError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
