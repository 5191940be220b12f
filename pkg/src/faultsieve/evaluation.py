"""Accuracy, cost and pruning-safety metrics over run logs."""

from __future__ import annotations

import json
from collections.abc import Collection, Hashable, Iterable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from statistics import fmean
from typing import Any

import yaml

from faultsieve.corpus import MethodKey
from faultsieve.pipeline import RunRecord

TOP_K = (1, 3, 5, 10)


class PairingError(ValueError):
    pass


@dataclass(frozen=True)
class GroundTruthMethod:
    key: MethodKey
    file_path: str | None = None


@dataclass
class GroundTruth:
    """Faulty methods per bug, joined to ranked methods by ``Class#name(arity)``."""

    bugs: dict[str, list[GroundTruthMethod]]

    def __post_init__(self) -> None:
        for bug_id, methods in self.bugs.items():
            if not methods:
                raise ValueError(f"bug {bug_id} has no ground-truth methods")

    def keys(self, bug_id: str) -> set[str]:
        if bug_id not in self.bugs:
            raise KeyError(f"no ground truth for bug {bug_id}")
        return {str(m.key) for m in self.bugs[bug_id]}

    @classmethod
    def load(cls, path: str | Path) -> GroundTruth:
        """Read a JSON/YAML mapping ``bug_id -> ["pkg.Class#method(arity)", ...]``.

        An entry may also be ``{"method": "...", "file_path": "..."}``.
        """
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        bugs = {}
        for bug_id, entries in raw.items():
            methods = []
            for e in entries:
                if isinstance(e, str):
                    methods.append(GroundTruthMethod(MethodKey.parse(e)))
                else:
                    methods.append(GroundTruthMethod(MethodKey.parse(e["method"]), e.get("file_path")))
            bugs[str(bug_id)] = methods
        return cls(bugs)


def topk_hit(ranked: Sequence[Hashable], truth: Collection[Hashable], k: int) -> bool:
    if k < 1:
        raise ValueError("k must be >= 1")
    return any(item in truth for item in ranked[:k])


def reciprocal_rank(ranked: Sequence[Hashable], truth: Collection[Hashable]) -> float:
    for pos, item in enumerate(ranked, 1):
        if item in truth:
            return 1.0 / pos
    return 0.0


def pruning_safety(
    before: Collection[Hashable], after: Collection[Hashable], truth: Collection[Hashable]
) -> tuple[bool, float]:
    """``(strict_loss, gt_recall)`` for one bug's pruning step.

    Strict loss means some ground-truth method reached pruning and did not
    survive it. Recall divides survivors by the full ground-truth set, so
    methods never retrieved also lower it.
    """
    before_set, after_set = set(before), set(after)
    if not after_set <= before_set:
        raise ValueError("pruned set is not a subset of the unpruned set")
    if not truth:
        raise ValueError("ground truth is empty")
    strict = any(g in before_set and g not in after_set for g in truth)
    recall = sum(1 for g in truth if g in after_set) / len(truth)
    return strict, recall


@dataclass
class BugMetrics:
    bug_id: str
    project: str
    completed: bool
    hits: dict[int, bool]
    reciprocal_rank: float
    reduction_ratio: float
    strict_loss: bool
    gt_recall_after_pruning: float
    candidates_before: int
    candidates_after: int
    tokens_in: int
    tokens_out: int
    wall_clock: float

    def hit_at(self, k: int) -> bool:
        return self.hits[k]


def bug_metrics(record: RunRecord, truth: Collection[str]) -> BugMetrics:
    if not record.completed:
        return BugMetrics(
            record.bug_id, record.project, False, {k: False for k in TOP_K}, 0.0,
            0.0, False, 0.0, 0, 0, record.tokens_in, record.tokens_out, record.wall_clock,
        )
    method = {c["doc_id"]: c["method"] for c in record.candidates}
    ranked = [method[d] for d in record.ranked_methods]
    before = {c["method"] for c in record.candidates}
    after = {c["method"] for c in record.candidates if not c["pruned"]}
    strict, recall = pruning_safety(before, after, truth)
    return BugMetrics(
        bug_id=record.bug_id,
        project=record.project,
        completed=True,
        hits={k: topk_hit(ranked, truth, k) for k in TOP_K},
        reciprocal_rank=reciprocal_rank(ranked, truth),
        reduction_ratio=record.reduction_ratio,
        strict_loss=strict,
        gt_recall_after_pruning=recall,
        candidates_before=record.candidates_before_pruning,
        candidates_after=record.candidates_after_pruning,
        tokens_in=record.tokens_in,
        tokens_out=record.tokens_out,
        wall_clock=record.wall_clock,
    )


def evaluate(records: Iterable[RunRecord], truth: GroundTruth) -> list[tuple[RunRecord, BugMetrics]]:
    return [(r, bug_metrics(r, truth.keys(r.bug_id))) for r in records]


def _mean(values: list[float]) -> float:
    return fmean(values) if values else 0.0


@dataclass
class MetricSummary:
    bugs: int
    completed: int
    top_k_counts: dict[int, int]
    top_k_pct_completed: dict[int, float]
    top_k_pct_all: dict[int, float]
    mrr_completed: float
    mrr_all: float
    mean_reduction_ratio: float
    reduction_ratio_of_means: float
    mean_candidates_before: float
    mean_candidates_after: float
    mean_tokens_in: float
    mean_tokens_out: float
    mean_wall_clock: float
    strict_loss_count: int
    strict_loss_rate: float
    mean_gt_recall: float

    @classmethod
    def of(cls, metrics: Sequence[BugMetrics]) -> MetricSummary:
        done = [m for m in metrics if m.completed]
        n, c = len(metrics), len(done)
        counts = {k: sum(m.hits[k] for m in done) for k in TOP_K}
        rr_sum = sum(m.reciprocal_rank for m in done)
        mean_before = _mean([m.candidates_before for m in done])
        mean_after = _mean([m.candidates_after for m in done])
        losses = sum(m.strict_loss for m in done)
        return cls(
            bugs=n,
            completed=c,
            top_k_counts=counts,
            top_k_pct_completed={k: 100.0 * v / c if c else 0.0 for k, v in counts.items()},
            top_k_pct_all={k: 100.0 * v / n if n else 0.0 for k, v in counts.items()},
            mrr_completed=rr_sum / c if c else 0.0,
            mrr_all=rr_sum / n if n else 0.0,
            mean_reduction_ratio=_mean([m.reduction_ratio for m in done]),
            reduction_ratio_of_means=1.0 - mean_after / mean_before if mean_before else 0.0,
            mean_candidates_before=mean_before,
            mean_candidates_after=mean_after,
            mean_tokens_in=_mean([m.tokens_in for m in done]),
            mean_tokens_out=_mean([m.tokens_out for m in done]),
            mean_wall_clock=_mean([m.wall_clock for m in done]),
            strict_loss_count=losses,
            strict_loss_rate=100.0 * losses / c if c else 0.0,
            mean_gt_recall=_mean([m.gt_recall_after_pruning for m in done]),
        )


@dataclass
class Summary:
    overall: MetricSummary
    per_project: dict[str, MetricSummary] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {
            "overall": asdict(self.overall),
            "per_project": {p: asdict(s) for p, s in self.per_project.items()},
        }


def aggregate(results: Sequence[tuple[RunRecord, BugMetrics]]) -> Summary:
    if not results:
        raise ValueError("nothing to aggregate")
    metrics = [m for _, m in results]
    projects: dict[str, list[BugMetrics]] = {}
    for m in metrics:
        projects.setdefault(m.project, []).append(m)
    return Summary(
        MetricSummary.of(metrics),
        {p: MetricSummary.of(ms) for p, ms in sorted(projects.items())},
    )


PAIRED_METRICS = (
    ("mean_reduction_ratio", "Mean reduction ratio"),
    ("reduction_ratio_of_means", "Reduction (ratio of mean counts)"),
    ("mean_candidates_after", "Mean Stage-4 candidates"),
    ("mean_wall_clock", "Mean wall-clock (s/bug)"),
    ("mean_tokens_in", "Mean tokens in (/bug)"),
    ("mean_tokens_out", "Mean tokens out (/bug)"),
    ("strict_loss_count", "Strict-loss count"),
    ("strict_loss_rate", "Strict-loss rate (%)"),
    ("mean_gt_recall", "Mean GT recall after pruning"),
    ("top1", "Top-1 (%)"),
    ("top3", "Top-3 (%)"),
    ("top5", "Top-5 (%)"),
    ("top10", "Top-10 (%)"),
    ("mrr", "MRR"),
)


def _paired_values(s: MetricSummary) -> dict[str, float]:
    values = {name: float(getattr(s, name)) for name, _ in PAIRED_METRICS if hasattr(s, name)}
    for k in TOP_K:
        values[f"top{k}"] = s.top_k_pct_completed[k]
    values["mrr"] = s.mrr_completed
    return values


@dataclass
class PairedReport:
    label_a: str
    label_b: str
    shared_bugs: list[str]
    means_a: dict[str, float]
    means_b: dict[str, float]
    deltas: dict[str, float]

    def to_json(self) -> dict[str, Any]:
        return asdict(self)


def paired_compare(
    runs_a: Sequence[RunRecord], runs_b: Sequence[RunRecord], truth: GroundTruth
) -> PairedReport:
    """Compare two run logs on the bugs both completed; deltas are ``b - a``."""
    done_a = {r.bug_id: r for r in runs_a if r.completed}
    done_b = {r.bug_id: r for r in runs_b if r.completed}
    shared = sorted(done_a.keys() & done_b.keys())
    if not shared:
        raise PairingError("the two run logs share no completed bug")
    sa = MetricSummary.of([bug_metrics(done_a[b], truth.keys(b)) for b in shared])
    sb = MetricSummary.of([bug_metrics(done_b[b], truth.keys(b)) for b in shared])
    va, vb = _paired_values(sa), _paired_values(sb)
    label_a = _label(runs_a)
    label_b = _label(runs_b)
    return PairedReport(label_a, label_b, shared, va, vb, {k: vb[k] - va[k] for k in va})


def _label(runs: Sequence[RunRecord]) -> str:
    variants = sorted({r.variant for r in runs})
    return "/".join(variants) or "?"


# --------------------------------------------------------------------------
# text tables


def _table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) if i == 0 else h.rjust(w) for i, (h, w) in enumerate(zip(header, widths)))]
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))))
    return "\n".join(lines)


def format_summary(summary: Summary) -> str:
    header = ["Project", "Bugs", "Done", *[f"@{k}" for k in TOP_K], "Top-1%", "Top-1% (all)", "MRR", "Reduction", "Strict-loss"]
    rows = []
    for name, s in [*summary.per_project.items(), ("Overall", summary.overall)]:
        rows.append(
            [
                name,
                str(s.bugs),
                str(s.completed),
                *[str(s.top_k_counts[k]) for k in TOP_K],
                f"{s.top_k_pct_completed[1]:.1f}",
                f"{s.top_k_pct_all[1]:.1f}",
                f"{s.mrr_completed:.3f}",
                f"{s.mean_reduction_ratio:.3f}",
                str(s.strict_loss_count),
            ]
        )
    o = summary.overall
    footer = (
        f"\nMean candidates {o.mean_candidates_before:.1f} -> {o.mean_candidates_after:.1f}"
        f" (ratio of means {o.reduction_ratio_of_means:.3f});"
        f" tokens in/out {o.mean_tokens_in:.1f}/{o.mean_tokens_out:.1f};"
        f" wall-clock {o.mean_wall_clock:.2f}s; MRR (failures included) {o.mrr_all:.3f}"
    )
    return _table(header, rows) + footer


def format_paired(report: PairedReport) -> str:
    header = ["Metric", report.label_a, report.label_b, "Delta"]
    rows = [
        [title, f"{report.means_a[name]:.3f}", f"{report.means_b[name]:.3f}", f"{report.deltas[name]:+.3f}"]
        for name, title in PAIRED_METRICS
    ]
    return f"Paired comparison on {len(report.shared_bugs)} shared bugs\n" + _table(header, rows)


def write_json(path: str | Path, payload: Any) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
