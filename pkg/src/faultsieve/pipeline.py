"""Five-stage fault localization pipeline.

Stage 1 turns the failing test into a failure description, stage 2 retrieves
suspicious files by method-level similarity, stage 3 prunes candidates by a
hybrid coverage/similarity score, stage 4 screens each survivor with its own
LLM query and stage 5 re-ranks the confirmed suspects in a single query.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from faultsieve.corpus import Corpus, MethodDocument
from faultsieve.coverage import (
    CoverageParseError,
    CoverageReport,
    CoverageUnavailable,
    lookup_rho,
    parse_coverage,
)
from faultsieve.embedding import Embedder, EmptyIndexError, VectorIndex
from faultsieve.llm import prompts
from faultsieve.llm.backends import BackendError, ChatBackend, ChatExchange, SamplingParams, chat
from faultsieve.llm.parsing import (
    FailureDescription,
    RankingUnparseable,
    ReplyParseError,
    ScreeningVerdict,
    VerdictUnparseable,
    parse_failure_description,
    parse_ranking,
    parse_verdict,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
VARIANTS = ("V0", "V1", "V2")
STAGES = (prompts.ANALYSIS, prompts.SCREENING, prompts.RERANK)


class ConfigError(ValueError):
    pass


class SchemaMismatch(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    variant: str = "V1"
    w_cov: float = 0.6
    w_sem: float = 0.4
    tau: float = 0.05
    k_f: int = 10
    parallelism: int = 1
    temperature: float = 0.0
    seed: int | None = 0
    reask: bool = True
    budgets: dict[str, int] = field(default_factory=lambda: dict(prompts.DEFAULT_BUDGETS))

    def __post_init__(self) -> None:
        variant = self.variant.upper()
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        object.__setattr__(self, "variant", variant)
        if variant == "V2":
            # coverage-only ablation
            object.__setattr__(self, "w_cov", 1.0)
            object.__setattr__(self, "w_sem", 0.0)
        if self.w_cov < 0 or self.w_sem < 0:
            raise ConfigError("weights must be non-negative")
        if abs(self.w_cov + self.w_sem - 1.0) > 1e-9:
            raise ConfigError(f"w_cov + w_sem must equal 1, got {self.w_cov} + {self.w_sem}")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must lie in [0, 1], got {self.tau}")
        if self.k_f < 1:
            raise ConfigError("k_f must be >= 1")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")

    @property
    def prunes(self) -> bool:
        return self.variant != "V0"

    @property
    def sampling(self) -> SamplingParams:
        return SamplingParams(self.temperature, self.seed)

    def to_json(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class FailureContext:
    bug_id: str
    failing_test_code: str
    error_output: str
    coverage_xml_path: str | None = None
    project: str = ""

    def __post_init__(self) -> None:
        if not self.failing_test_code.strip():
            raise ValueError(f"{self.bug_id}: failing test code is empty")
        if not self.error_output.strip():
            raise ValueError(f"{self.bug_id}: error output is empty")
        if not self.project:
            object.__setattr__(self, "project", project_of(self.bug_id))


def project_of(bug_id: str) -> str:
    m = re.match(r"^(.*?)[-_ ]?\d+[a-z]?$", bug_id)
    return m.group(1) if m and m.group(1) else bug_id


@dataclass
class Candidate:
    doc: MethodDocument
    sigma: float
    rho: float | None = None
    hybrid_score: float | None = None
    pruned: bool = False
    overload_retained: bool = False
    stage4_verdict: ScreeningVerdict | None = None
    final_rank: int | None = None

    @property
    def order_score(self) -> float:
        return self.hybrid_score if self.hybrid_score is not None else self.sigma

    def to_json(self) -> dict[str, Any]:
        v = self.stage4_verdict
        return {
            "doc_id": self.doc.doc_id,
            "method": str(self.doc.key),
            "file_path": self.doc.file_path,
            "sigma": self.sigma,
            "rho": self.rho,
            "hybrid_score": self.hybrid_score,
            "pruned": self.pruned,
            "overload_retained": self.overload_retained,
            "verdict": None if v is None else v.verdict,
            "justification": None if v is None else v.justification,
            "final_rank": self.final_rank,
        }


@dataclass
class StageCost:
    calls: int = 0
    tokens_in: int = 0
    tokens_out: int = 0
    latency: float = 0.0
    estimated: bool = False

    def add(self, ex: ChatExchange) -> None:
        self.calls += 1
        self.tokens_in += ex.tokens_in
        self.tokens_out += ex.tokens_out
        self.latency += ex.latency
        self.estimated = self.estimated or ex.estimated


@dataclass
class CostMeter:
    stages: dict[str, StageCost] = field(default_factory=lambda: {s: StageCost() for s in STAGES})

    def add(self, stage: str, exchanges: Iterable[ChatExchange]) -> None:
        for ex in exchanges:
            self.stages[stage].add(ex)

    @property
    def calls(self) -> int:
        return sum(s.calls for s in self.stages.values())


@dataclass
class RunRecord:
    bug_id: str
    variant: str
    project: str = ""
    status: str = "completed"  # completed | failed
    error: str | None = None
    failure_description: dict[str, Any] | None = None
    suspicious_files: list[str] = field(default_factory=list)
    candidates_before_pruning: int = 0
    candidates_after_pruning: int = 0
    reduction_ratio: float = 0.0
    stage4_order: list[str] = field(default_factory=list)
    confirmed: list[str] = field(default_factory=list)
    ranked_methods: list[str] = field(default_factory=list)
    candidates: list[dict[str, Any]] = field(default_factory=list)
    costs: dict[str, dict[str, Any]] = field(default_factory=dict)
    chat_calls: int = 0
    wall_clock: float = 0.0
    fallback_used: bool = False
    anomalies: list[str] = field(default_factory=list)
    config: dict[str, Any] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    @property
    def completed(self) -> bool:
        return self.status == "completed"

    @property
    def tokens_in(self) -> int:
        return sum(c["tokens_in"] for c in self.costs.values())

    @property
    def tokens_out(self) -> int:
        return sum(c["tokens_out"] for c in self.costs.values())

    def method_of(self, doc_id: str) -> str:
        for c in self.candidates:
            if c["doc_id"] == doc_id:
                return c["method"]
        raise KeyError(doc_id)

    def to_json(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> RunRecord:
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise SchemaMismatch(
                f"run record schema version {version!r} != supported {SCHEMA_VERSION}"
            )
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


# --------------------------------------------------------------------------
# stages


def _describe(desc: FailureDescription) -> str:
    return prompts.describe_failure(desc.expected_behavior, desc.observed_failure, desc.search_query)


def stage1_analyze(
    ctx: FailureContext,
    backend: ChatBackend,
    cfg: PipelineConfig,
    meter: CostMeter | None = None,
    clock: Callable[[], float] = time.perf_counter,
) -> FailureDescription:
    rendering = prompts.render_analysis(
        ctx.failing_test_code, ctx.error_output, ctx.bug_id, cfg.budgets[prompts.ANALYSIS]
    )
    ex = chat(rendering, backend, cfg.sampling, clock)
    if meter is not None:
        meter.add(prompts.ANALYSIS, [ex])
    return parse_failure_description(ex.response_text)


def stage2_retrieve(
    desc: FailureDescription,
    index: VectorIndex,
    corpus: Corpus,
    embedder: Embedder,
    k_f: int,
) -> tuple[list[str], dict[str, float]]:
    """Suspicious files (in order of their best-ranked method) and sigma per method.

    Sigma is clamped into [0, 1] and computed for every method of every
    suspicious file, not only the retrieved ones.
    """
    if index.provider and index.provider != embedder.identity:
        raise ConfigError(
            f"index was built with {index.provider!r} but query embedder is {embedder.identity!r}"
        )
    query = embedder.embed(desc.search_query)
    hits = index.top_k(query, k_f)
    files = list(dict.fromkeys(corpus.by_id[doc_id].file_path for doc_id, _ in hits))
    sigma = {
        d.doc_id: max(index.similarity(d.doc_id, query), 0.0)
        for f in files
        for d in corpus.by_file[f]
    }
    return files, sigma


def hybrid_score(rho: float, sigma: float, w_cov: float, w_sem: float) -> float:
    return w_cov * rho + w_sem * sigma


def stage3_prune(
    candidates: Sequence[Candidate],
    report: CoverageReport | None,
    cfg: PipelineConfig,
) -> tuple[list[Candidate], bool]:
    """Score and mark candidates; returns them with the fallback flag.

    Without pruning (V0) or without a report, nothing is scored or pruned.
    A candidate is pruned when its score falls strictly below ``tau``,
    unless its key matches several report entries (unresolvable overload),
    in which case every variant is kept.
    """
    out = list(candidates)
    if not cfg.prunes or report is None:
        return out, cfg.prunes
    for c in out:
        variants = lookup_rho(report, c.doc.key)
        c.rho = max((r for _, r in variants), default=0.0)
        c.hybrid_score = hybrid_score(c.rho, c.sigma, cfg.w_cov, cfg.w_sem)
        c.overload_retained = len(variants) > 1
        c.pruned = c.hybrid_score < cfg.tau and not c.overload_retained
    return out, False


def stage4_order(candidates: Iterable[Candidate]) -> list[Candidate]:
    return sorted(candidates, key=lambda c: (-c.order_score, c.doc.doc_id))


def screening_subject(bug_id: str, doc_id: str) -> str:
    return f"{bug_id}::{doc_id}"


def _screen_one(
    c: Candidate,
    description: str,
    ctx: FailureContext,
    backend: ChatBackend,
    cfg: PipelineConfig,
    clock: Callable[[], float],
) -> tuple[ScreeningVerdict, list[ChatExchange], str | None]:
    rendering = prompts.render_screening(
        ctx.error_output,
        description,
        c.doc.index_text,
        screening_subject(ctx.bug_id, c.doc.doc_id),
        cfg.budgets[prompts.SCREENING],
    )
    exchanges: list[ChatExchange] = []
    attempts = 2 if cfg.reask else 1
    try:
        for attempt in range(attempts):
            r = rendering
            if attempt:
                r = dataclasses.replace(rendering, user_text=rendering.user_text + prompts.VERDICT_REMINDER)
            ex = chat(r, backend, cfg.sampling, clock)
            exchanges.append(ex)
            try:
                return parse_verdict(ex.response_text), exchanges, None
            except VerdictUnparseable:
                continue
        return ScreeningVerdict(False, ""), exchanges, f"unparseable verdict for {c.doc.doc_id}"
    except BackendError as e:
        return ScreeningVerdict(False, ""), exchanges, f"screening failed for {c.doc.doc_id}: {e}"


def stage4_screen(
    survivors: Sequence[Candidate],
    desc: FailureDescription,
    ctx: FailureContext,
    backend: ChatBackend,
    cfg: PipelineConfig,
    meter: CostMeter | None = None,
    anomalies: list[str] | None = None,
    clock: Callable[[], float] = time.perf_counter,
) -> list[Candidate]:
    """Screen each survivor in its own query; return the suspicious ones in input order."""
    description = _describe(desc)

    def work(c: Candidate):
        return _screen_one(c, description, ctx, backend, cfg, clock)

    if cfg.parallelism > 1 and len(survivors) > 1:
        with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
            results = list(pool.map(work, survivors))
    else:
        results = [work(c) for c in survivors]
    suspects = []
    for c, (verdict, exchanges, problem) in zip(survivors, results):
        c.stage4_verdict = verdict
        if meter is not None:
            meter.add(prompts.SCREENING, exchanges)
        if problem:
            log.warning("%s: %s", ctx.bug_id, problem)
            if anomalies is not None:
                anomalies.append(problem)
        if verdict.verdict:
            suspects.append(c)
    return suspects


def ranking_labels(suspects: Sequence[Candidate]) -> dict[str, list[str]]:
    names: dict[str, int] = {}
    for c in suspects:
        short = f"{c.doc.class_name.rsplit('.', 1)[-1]}.{c.doc.method_name}"
        names[short] = names.get(short, 0) + 1
    labels = {}
    for i, c in enumerate(suspects, 1):
        short = f"{c.doc.class_name.rsplit('.', 1)[-1]}.{c.doc.method_name}"
        labels[c.doc.doc_id] = [f"M{i}", c.doc.signature, c.doc.doc_id]
        if names[short] == 1:
            labels[c.doc.doc_id].append(short)
    return labels


def stage5_rerank(
    suspects: Sequence[Candidate],
    desc: FailureDescription,
    ctx: FailureContext,
    backend: ChatBackend,
    cfg: PipelineConfig,
    meter: CostMeter | None = None,
    anomalies: list[str] | None = None,
    clock: Callable[[], float] = time.perf_counter,
) -> list[str]:
    ids = [c.doc.doc_id for c in suspects]
    if len(ids) <= 1:
        return ids
    blocks = [
        prompts.SuspectBlock(
            f"M{i}",
            c.doc.signature,
            c.doc.file_path,
            c.doc.index_text,
            c.stage4_verdict.justification if c.stage4_verdict else "",
        )
        for i, c in enumerate(suspects, 1)
    ]
    rendering = prompts.render_rerank(
        ctx.error_output, _describe(desc), blocks, ctx.bug_id, cfg.budgets[prompts.RERANK]
    )
    labels = ranking_labels(suspects)
    attempts = 2 if cfg.reask else 1
    for attempt in range(attempts):
        r = rendering
        if attempt:
            r = dataclasses.replace(rendering, user_text=rendering.user_text + prompts.RANKING_REMINDER)
        ex = chat(r, backend, cfg.sampling, clock)
        if meter is not None:
            meter.add(prompts.RERANK, [ex])
        try:
            return parse_ranking(ex.response_text, ids, labels)
        except RankingUnparseable:
            continue
    problem = "unparseable ranking; fell back to score order"
    log.warning("%s: %s", ctx.bug_id, problem)
    if anomalies is not None:
        anomalies.append(problem)
    return [c.doc.doc_id for c in stage4_order(suspects)]


# --------------------------------------------------------------------------
# whole-bug driver


def load_report(ctx: FailureContext, anomalies: list[str]) -> CoverageReport | None:
    if not ctx.coverage_xml_path:
        return None
    try:
        return parse_coverage(ctx.coverage_xml_path)
    except CoverageUnavailable:
        return None
    except CoverageParseError as e:
        anomalies.append(f"coverage report unusable: {e}")
        return None


def run_bug(
    ctx: FailureContext,
    corpus: Corpus,
    index: VectorIndex,
    embedder: Embedder,
    backend: ChatBackend,
    cfg: PipelineConfig,
    clock: Callable[[], float] = time.perf_counter,
) -> RunRecord:
    """Run all five stages for one bug and return its record.

    Stage 1/2 failures (backend down, empty index, bad config) yield a
    record with ``status == "failed"`` instead of raising.
    """
    started = clock()
    record = RunRecord(ctx.bug_id, cfg.variant, ctx.project, config=cfg.to_json())
    meter = CostMeter()

    def finish() -> RunRecord:
        record.costs = {s: dataclasses.asdict(c) for s, c in meter.stages.items()}
        record.chat_calls = meter.calls
        record.wall_clock = clock() - started
        return record

    try:
        desc = stage1_analyze(ctx, backend, cfg, meter, clock)
        record.failure_description = dataclasses.asdict(desc)
        if desc.degraded:
            record.anomalies.append("failure description unstructured; whole reply used as query")
        files, sigma = stage2_retrieve(desc, index, corpus, embedder, cfg.k_f)
    except (BackendError, ReplyParseError, EmptyIndexError, ConfigError, KeyError) as e:
        record.status = "failed"
        record.error = f"{type(e).__name__}: {e}"
        return finish()

    record.suspicious_files = files
    candidates = [Candidate(corpus.by_id[doc_id], s) for doc_id, s in sigma.items()]
    report = load_report(ctx, record.anomalies) if cfg.prunes else None
    candidates, record.fallback_used = stage3_prune(candidates, report, cfg)
    ordered = stage4_order(candidates)
    survivors = [c for c in ordered if not c.pruned]
    record.candidates_before_pruning = len(candidates)
    record.candidates_after_pruning = len(survivors)
    if candidates:
        record.reduction_ratio = 1.0 - len(survivors) / len(candidates)
    record.stage4_order = [c.doc.doc_id for c in survivors]

    suspects = stage4_screen(survivors, desc, ctx, backend, cfg, meter, record.anomalies, clock)
    record.confirmed = [c.doc.doc_id for c in suspects]
    if not survivors:
        record.anomalies.append("every candidate was pruned; nothing to screen")
    elif not suspects:
        record.anomalies.append("no candidate was judged suspicious")

    try:
        ranked = stage5_rerank(suspects, desc, ctx, backend, cfg, meter, record.anomalies, clock)
    except BackendError as e:
        record.anomalies.append(f"re-ranking failed, kept screening order: {e}")
        ranked = record.confirmed
    record.ranked_methods = ranked
    rank_of = {doc_id: r for r, doc_id in enumerate(ranked, 1)}
    for c in ordered:
        c.final_rank = rank_of.get(c.doc.doc_id)
    record.candidates = [c.to_json() for c in ordered]
    return finish()


# --------------------------------------------------------------------------
# bug bundles and run logs

TEST_FILES = ("failing_test.java", "test.java")
ERROR_FILES = ("error_output.txt", "error.txt")


def load_bundle(directory: str | Path) -> FailureContext:
    """Read a per-bug input directory.

    Expected files: the failing test source (``failing_test.java``, or every
    ``*.java`` file in the directory), the error output (``error_output.txt``),
    and optionally ``coverage.xml`` and ``bug.json`` (``bug_id``/``project``).
    """
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"bug bundle not found: {d}")
    meta: dict[str, Any] = {}
    if (d / "bug.json").is_file():
        meta = json.loads((d / "bug.json").read_text(encoding="utf-8"))
    test_file = next((d / n for n in TEST_FILES if (d / n).is_file()), None)
    if test_file is not None:
        test_code = test_file.read_text(encoding="utf-8", errors="replace")
    else:
        test_code = "\n\n".join(
            p.read_text(encoding="utf-8", errors="replace") for p in sorted(d.glob("*.java"))
        )
    err_file = next((d / n for n in ERROR_FILES if (d / n).is_file()), None)
    if err_file is None:
        raise FileNotFoundError(f"{d}: no error output file ({' / '.join(ERROR_FILES)})")
    return FailureContext(
        bug_id=meta.get("bug_id", d.name),
        failing_test_code=test_code,
        error_output=err_file.read_text(encoding="utf-8", errors="replace"),
        coverage_xml_path=str(d / "coverage.xml"),
        project=meta.get("project", ""),
    )


def append_run_log(path: str | Path, records: Iterable[RunRecord]) -> None:
    with open(path, "a", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(r.dumps() + "\n")


def read_run_log(path: str | Path) -> list[RunRecord]:
    """Load a run log; a bug appearing more than once keeps its last record."""
    latest: dict[str, RunRecord] = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = RunRecord.from_json(json.loads(line))
            except SchemaMismatch as e:
                raise SchemaMismatch(f"{path}:{n}: {e}") from None
            latest.pop(rec.bug_id, None)
            latest[rec.bug_id] = rec
    return list(latest.values())
