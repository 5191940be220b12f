"""Command-line entry point: ``faultsieve index | run | eval``.

Exit codes: 0 success, 1 acceptance-gate violation (or a run batch with no
completed bug), 2 input or configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import yaml

from faultsieve.corpus import Corpus, extract_methods, read_corpus, write_corpus
from faultsieve.embedding import HashingEmbedder, OllamaEmbedder, VectorIndex, build_index
from faultsieve.evaluation import (
    GroundTruth,
    PairingError,
    aggregate,
    evaluate,
    format_paired,
    format_summary,
    paired_compare,
    write_json,
)
from faultsieve.llm.backends import MockBackend, OllamaChatBackend
from faultsieve.pipeline import (
    ConfigError,
    PipelineConfig,
    SchemaMismatch,
    append_run_log,
    load_bundle,
    read_run_log,
    run_bug,
)

log = logging.getLogger("faultsieve")

EXIT_OK, EXIT_GATE, EXIT_INPUT = 0, 1, 2
BACKEND_URL_ENV = "FAULTSIEVE_BACKEND_URL"


class InputError(Exception):
    pass


PATH_KEYS = ("source_root", "bugs_dir", "ground_truth", "output_dir", "index_dir", "mock_script")


@dataclass
class CliConfig:
    variant: str = "V1"
    w_cov: float = 0.6
    w_sem: float = 0.4
    tau: float = 0.05
    k_f: int = 10
    parallelism: int = 1
    temperature: float = 0.0
    seed: int | None = 0
    budgets: dict[str, int] = field(default_factory=dict)
    source_root: str | None = None
    source_glob: str = "**/*.java"
    bugs_dir: str | None = None
    ground_truth: str | None = None
    output_dir: str = "out"
    index_dir: str | None = None
    backend_url: str = "http://localhost:11434"
    model: str = "llama3.1:8b"
    timeout: float = 600.0
    retries: int = 3
    mock_script: str | None = None
    embedding_provider: str = "hashing"
    embedding_dimension: int = 384
    embedding_seed: int = 0
    embedding_url: str | None = None
    embedding_model: str = "all-minilm"
    jobs: int = 1
    log_level: str = "WARNING"

    @classmethod
    def load(cls, path: str | None, overrides: dict[str, Any]) -> CliConfig:
        values: dict[str, Any] = {}
        if path:
            p = Path(path)
            if not p.is_file():
                raise InputError(f"config file not found: {p}")
            values = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise InputError(f"unknown config keys: {', '.join(unknown)}")
        if path:
            # relative paths in a config file are relative to that file
            base = Path(path).resolve().parent
            for k in PATH_KEYS:
                if isinstance(values.get(k), str) and not Path(values[k]).is_absolute():
                    values[k] = str(base / values[k])
        if os.environ.get(BACKEND_URL_ENV):
            values["backend_url"] = os.environ[BACKEND_URL_ENV]
        set_cov = overrides.get("w_cov") is not None
        set_sem = overrides.get("w_sem") is not None
        values.update({k: v for k, v in overrides.items() if v is not None})
        if set_cov and not set_sem:
            values["w_sem"] = 1.0 - values["w_cov"]
        elif set_sem and not set_cov:
            values["w_cov"] = 1.0 - values["w_sem"]
        return cls(**values)

    def pipeline(self) -> PipelineConfig:
        kwargs: dict[str, Any] = dict(
            variant=self.variant, w_cov=self.w_cov, w_sem=self.w_sem, tau=self.tau,
            k_f=self.k_f, parallelism=self.parallelism, temperature=self.temperature,
            seed=self.seed,
        )
        cfg = PipelineConfig(**kwargs)
        if self.budgets:
            cfg = dataclasses.replace(cfg, budgets={**cfg.budgets, **self.budgets})
        return cfg

    def embedder(self):
        if self.embedding_provider == "hashing":
            return HashingEmbedder(self.embedding_dimension, self.embedding_seed)
        if self.embedding_provider == "ollama":
            return OllamaEmbedder(
                self.embedding_url or self.backend_url, self.embedding_model,
                self.embedding_dimension, retries=self.retries,
            )
        raise InputError(f"unknown embedding provider {self.embedding_provider!r}")

    def backend(self):
        if self.mock_script:
            if not Path(self.mock_script).is_file():
                raise InputError(f"mock script not found: {self.mock_script}")
            return MockBackend.from_file(self.mock_script)
        return OllamaChatBackend(self.backend_url, self.model, self.timeout, self.retries)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML/JSON config file; flags override it")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="faultsieve", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="extract methods and build the vector index")
    _common(p)
    p.add_argument("--source-root")
    p.add_argument("--glob", dest="source_glob")
    p.add_argument("--out", dest="index_dir", help="index directory")

    p = sub.add_parser("run", help="localize faults for one or more bugs")
    _common(p)
    p.add_argument("--variant", type=str.upper, choices=["V0", "V1", "V2"])
    p.add_argument("--tau", type=float)
    p.add_argument("--w-cov", type=float)
    p.add_argument("--w-sem", type=float)
    p.add_argument("--kf", dest="k_f", type=int)
    p.add_argument("--backend-url")
    p.add_argument("--model")
    p.add_argument("--mock-script")
    p.add_argument("--bug", default="all", help="'all' or comma-separated bug ids")
    p.add_argument("--bugs-dir")
    p.add_argument("--index-dir")
    p.add_argument("--parallelism", type=int, help="concurrent screening calls per bug")
    p.add_argument("--jobs", type=int, help="bugs processed concurrently")
    p.add_argument("--out", dest="run_log", help="run log to append to")

    p = sub.add_parser("eval", help="score run logs against ground truth")
    _common(p)
    p.add_argument("logs", nargs="+")
    p.add_argument("--ground-truth")
    p.add_argument("--out", dest="output_dir")
    p.add_argument("--min-top1", type=float, help="gate: Top-1 %% (completed bugs) at least")
    p.add_argument("--min-mrr", type=float, help="gate: MRR (completed bugs) at least")
    p.add_argument("--max-strict-loss-rate", type=float, help="gate: strict-loss %% at most")
    return parser


_CONFIG_FLAGS = {
    "source_root", "source_glob", "index_dir", "variant", "tau", "w_cov", "w_sem", "k_f",
    "backend_url", "model", "mock_script", "bugs_dir", "parallelism", "jobs",
    "ground_truth", "output_dir",
}


def _config(args: argparse.Namespace) -> CliConfig:
    overrides = {k: v for k, v in vars(args).items() if k in _CONFIG_FLAGS}
    cfg = CliConfig.load(args.config, overrides)
    level = "INFO" if args.verbose else cfg.log_level
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return cfg


def cmd_index(args: argparse.Namespace) -> int:
    cfg = _config(args)
    if not cfg.source_root:
        raise InputError("no source root given (--source-root or source_root)")
    if not Path(cfg.source_root).is_dir():
        raise InputError(f"source root not found: {cfg.source_root}")
    out = Path(cfg.index_dir or Path(cfg.output_dir) / "index")
    diagnostics: list = []
    docs = extract_methods(cfg.source_root, cfg.source_glob, diagnostics)
    for d in diagnostics:
        print(f"warning: skipped {d.file_path}: {d.message}", file=sys.stderr)
    if not docs:
        raise InputError(f"no methods found under {cfg.source_root}")
    embedder = cfg.embedder()
    index = build_index(docs, embedder)
    out.mkdir(parents=True, exist_ok=True)
    write_corpus(docs, out / "corpus.jsonl")
    index.save(out)
    print(f"{len(docs)} documents indexed (dimension {index.dimension}, provider {index.provider})")
    return EXIT_OK


def _load_index(directory: Path) -> tuple[Corpus, VectorIndex]:
    if not (directory / "corpus.jsonl").is_file():
        raise InputError(f"no index at {directory}; run 'faultsieve index' first")
    return Corpus(read_corpus(directory / "corpus.jsonl")), VectorIndex.load(directory)


def _clock_for(backend):
    # scripted runs report zero durations so their logs are byte-reproducible
    if isinstance(backend, MockBackend):
        return lambda: 0.0
    return time.perf_counter


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _config(args)
    try:
        pipe = cfg.pipeline()
    except ConfigError as e:
        raise InputError(str(e)) from e
    print(
        f"effective config: variant={pipe.variant} w_cov={pipe.w_cov} w_sem={pipe.w_sem}"
        f" tau={pipe.tau} k_f={pipe.k_f}"
    )
    if not cfg.bugs_dir or not Path(cfg.bugs_dir).is_dir():
        raise InputError(f"bugs directory not found: {cfg.bugs_dir}")
    bugs_dir = Path(cfg.bugs_dir)
    available = sorted(p.name for p in bugs_dir.iterdir() if p.is_dir())
    if args.bug == "all":
        selected = available
    else:
        selected = [b.strip() for b in args.bug.split(",") if b.strip()]
        missing = [b for b in selected if b not in available]
        if missing:
            raise InputError(f"unknown bug(s): {', '.join(missing)}")
    if not selected:
        raise InputError(f"no bug bundles in {bugs_dir}")

    shared_index = None
    default_index = Path(cfg.output_dir) / "index"
    if cfg.index_dir:
        shared_index = _load_index(Path(cfg.index_dir))
    elif (default_index / "corpus.jsonl").is_file():
        shared_index = _load_index(default_index)
    embedder = cfg.embedder()
    backend = cfg.backend()
    clock = _clock_for(backend)

    def one(bug: str):
        bundle = bugs_dir / bug
        ctx = load_bundle(bundle)
        if (bundle / "index" / "corpus.jsonl").is_file():
            corpus, index = _load_index(bundle / "index")
        elif shared_index is not None:
            corpus, index = shared_index
        else:
            raise InputError(f"{bug}: no per-bug index and no --index-dir")
        return run_bug(ctx, corpus, index, embedder, backend, pipe, clock)

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            records = list(pool.map(one, selected))
    else:
        records = [one(b) for b in selected]

    run_log = Path(args.run_log or Path(cfg.output_dir) / f"runs-{pipe.variant.lower()}.jsonl")
    run_log.parent.mkdir(parents=True, exist_ok=True)
    append_run_log(run_log, records)
    for r in records:
        top = r.ranked_methods[0] if r.ranked_methods else "-"
        extra = " fallback" if r.fallback_used else ""
        print(f"{r.bug_id}: {r.status} top={top} reduction={r.reduction_ratio:.3f}{extra}")
    done = sum(r.completed for r in records)
    print(f"{done}/{len(records)} bugs completed; log: {run_log}")
    return EXIT_OK if done else EXIT_GATE


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _config(args)
    if len(args.logs) > 2:
        raise InputError("eval takes one run log (summary) or two (paired comparison)")
    if not cfg.ground_truth:
        raise InputError("no ground truth given (--ground-truth or ground_truth)")
    truth = GroundTruth.load(cfg.ground_truth)
    logs = []
    for path in args.logs:
        if not Path(path).is_file():
            raise InputError(f"run log not found: {path}")
        try:
            logs.append(read_run_log(path))
        except SchemaMismatch as e:
            raise InputError(f"refusing run log: {e}") from e
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = aggregate(evaluate(logs[-1], truth))
    text = format_summary(summary)
    payload: dict[str, Any] = {"summary": summary.to_json()}
    if len(logs) == 2:
        try:
            report = paired_compare(logs[0], logs[1], truth)
        except PairingError as e:
            raise InputError(str(e)) from e
        text = format_paired(report) + "\n\n" + text
        payload["paired"] = report.to_json()
    print(text)
    (out / "report.txt").write_text(text + "\n", encoding="utf-8")
    write_json(out / "report.json", payload)

    o = summary.overall
    violations = []
    if args.min_top1 is not None and o.top_k_pct_completed[1] < args.min_top1:
        violations.append(f"Top-1 {o.top_k_pct_completed[1]:.1f}% < {args.min_top1}%")
    if args.min_mrr is not None and o.mrr_completed < args.min_mrr:
        violations.append(f"MRR {o.mrr_completed:.3f} < {args.min_mrr}")
    if args.max_strict_loss_rate is not None and o.strict_loss_rate > args.max_strict_loss_rate:
        violations.append(f"strict-loss {o.strict_loss_rate:.1f}% > {args.max_strict_loss_rate}%")
    for v in violations:
        print(f"gate violated: {v}", file=sys.stderr)
    return EXIT_GATE if violations else EXIT_OK


COMMANDS = {"index": cmd_index, "run": cmd_run, "eval": cmd_eval}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (InputError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
