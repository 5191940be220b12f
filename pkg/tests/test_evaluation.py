import json
import random
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faultsieve.corpus import MethodKey
from faultsieve.evaluation import (
    TOP_K,
    BugMetrics,
    GroundTruth,
    GroundTruthMethod,
    MetricSummary,
    PairingError,
    aggregate,
    bug_metrics,
    evaluate,
    format_paired,
    format_summary,
    paired_compare,
    pruning_safety,
    reciprocal_rank,
    topk_hit,
)
from faultsieve.pipeline import RunRecord

FIXTURES = Path(__file__).parent / "fixtures"
GT_KEY = "p.C#g(0)"

# computed from fixtures/paired/table.json by plain arithmetic, before the build
PAIRED_DELTAS = {
    "mean_candidates_after": -30.199999999999996,
    "mean_gt_recall": -0.19999999999999996,
    "mean_reduction_ratio": 0.6938888888888888,
    "mean_tokens_in": -6250.0,
    "mean_tokens_out": -976.0,
    "mean_wall_clock": -43.9,
    "mrr": 0.021666666666666723,
    "reduction_ratio_of_means": 0.7587939698492462,
    "strict_loss_count": 2,
    "strict_loss_rate": 20.0,
    "top1": 10.0,
    "top10": -10.0,
    "top3": -10.0,
    "top5": -10.0,
}


# ---------------------------------------------------------------- reference implementations


def ref_hit(ranked, truth, k):
    for i in range(len(ranked)):
        if i < k and ranked[i] in truth:
            return True
    return False


def ref_rr(ranked, truth):
    best = None
    for i in range(len(ranked) - 1, -1, -1):
        if ranked[i] in truth:
            best = i + 1
    return 0.0 if best is None else 1.0 / best


def ref_safety(before, after, truth):
    lost = [g for g in truth if g in before and g not in after]
    kept = [g for g in truth if g in after]
    return len(lost) > 0, len(kept) / len(truth)


def random_instance(rng: random.Random):
    pool = [f"m{i}" for i in range(20)]
    before = rng.sample(pool, rng.randint(0, 20))
    after = [m for m in before if rng.random() < 0.6]
    ranked = rng.sample(after, rng.randint(0, len(after)))
    truth = set(rng.sample(pool, rng.randint(1, 3)))
    return ranked, truth, before, after


# ---------------------------------------------------------------- single-bug metrics


def test_topk_examples():
    assert topk_hit(["GT", "x", "y"], {"GT"}, 1)
    assert not topk_hit(["x", "y", "GT"], {"GT"}, 1)
    assert topk_hit(["x", "y", "GT"], {"GT"}, 3)
    assert not any(topk_hit([], {"GT"}, k) for k in TOP_K)
    with pytest.raises(ValueError):
        topk_hit(["GT"], {"GT"}, 0)


def test_reciprocal_rank_examples():
    assert reciprocal_rank(["x", "GT"], {"GT"}) == 0.5
    assert reciprocal_rank(["GT"], {"GT"}) == 1.0
    assert reciprocal_rank(["x", "y"], {"GT"}) == 0.0


def test_pruning_safety_examples():
    assert pruning_safety({"g1", "g2", "x"}, {"g1", "x"}, {"g1", "g2"}) == (True, 0.5)
    assert pruning_safety({"g"}, {"g"}, {"g"}) == (False, 1.0)
    assert pruning_safety({"x"}, {"x"}, {"g"}) == (False, 0.0)
    with pytest.raises(ValueError):
        pruning_safety({"x"}, {"x", "y"}, {"g"})


def test_metrics_match_reference_on_random_instances():
    rng = random.Random(20240601)
    for _ in range(1000):
        ranked, truth, before, after = random_instance(rng)
        hits = [topk_hit(ranked, truth, k) for k in TOP_K]
        assert hits == [ref_hit(ranked, truth, k) for k in TOP_K]
        assert hits == sorted(hits)  # hit@1 => hit@3 => hit@5 => hit@10
        assert reciprocal_rank(ranked, truth) == ref_rr(ranked, truth)
        assert pruning_safety(before, after, truth) == ref_safety(before, after, truth)


@given(st.lists(st.sampled_from("abcdefgh"), unique=True), st.sets(st.sampled_from("abcdefgh"), min_size=1))
def test_reciprocal_rank_consistent_with_hits(ranked, truth):
    rr = reciprocal_rank(ranked, truth)
    assert (rr > 0) == topk_hit(ranked, truth, max(len(ranked), 1))
    if rr:
        rank = round(1 / rr)
        assert topk_hit(ranked, truth, rank)
        assert rank == 1 or not topk_hit(ranked, truth, rank - 1)


# ---------------------------------------------------------------- records


def make_record(bug, variant, gt_rank, before, after, gt_pruned, tokens_in=0, tokens_out=0, wall=0.0):
    """Synthetic record: the GT method plus filler methods."""
    cands = [{"doc_id": f"{bug}:gt", "method": GT_KEY, "pruned": gt_pruned}]
    cands += [{"doc_id": f"{bug}:f{i}", "method": f"p.C#f{i}(0)", "pruned": False} for i in range(before - 1)]
    kept = after - (0 if gt_pruned else 1)
    for c in cands[1:][kept:]:
        c["pruned"] = True
    fillers = [c["doc_id"] for c in cands[1:] if not c["pruned"]]
    if gt_rank is None:
        ranked = fillers
    else:
        ranked = fillers[: gt_rank - 1] + [f"{bug}:gt"] + fillers[gt_rank - 1 :]
    return RunRecord(
        bug, variant, "P",
        candidates_before_pruning=before, candidates_after_pruning=after,
        reduction_ratio=1 - after / before, ranked_methods=ranked, confirmed=list(ranked),
        candidates=cands,
        costs={"analysis": {"tokens_in": tokens_in, "tokens_out": tokens_out}},
        wall_clock=wall,
    )


def table_runs():
    t = json.loads((FIXTURES / "paired" / "table.json").read_text())
    return {v: [make_record(r[0], v, *r[1:]) for r in t[v]] for v in ("V0", "V1")}


def _truth(bugs):
    return GroundTruth({b: [GroundTruthMethod(MethodKey.parse(GT_KEY))] for b in bugs})


def test_bug_metrics_from_record():
    rec = make_record("b", "V1", 2, 10, 4, False, 100, 20, 3.0)
    m = bug_metrics(rec, {GT_KEY})
    assert m.hits == {1: False, 3: True, 5: True, 10: True}
    assert m.reciprocal_rank == 0.5
    assert (m.strict_loss, m.gt_recall_after_pruning) == (False, 1.0)
    assert (m.tokens_in, m.tokens_out, m.wall_clock) == (100, 20, 3.0)


def test_dissociation_two_ground_truth_methods():
    rec = make_record("b", "V1", 1, 10, 4, False)
    rec.candidates.append({"doc_id": "b:g2", "method": "p.C#h(1)", "pruned": True})
    m = bug_metrics(rec, {GT_KEY, "p.C#h(1)"})
    assert (m.strict_loss, m.gt_recall_after_pruning, m.hits[1]) == (True, 0.5, True)


def test_failed_record_counts_as_miss():
    m = bug_metrics(RunRecord("b", "V1", "P", status="failed"), {GT_KEY})
    assert not m.completed and m.reciprocal_rank == 0.0 and not any(m.hits.values())


def test_same_arity_entries_hit_at_best_rank():
    rec = make_record("b", "V1", None, 5, 5, False)
    # two ranked entries resolve to the same key; the earlier position counts
    rec.candidates[1]["method"] = GT_KEY
    rec.candidates[3]["method"] = GT_KEY
    m = bug_metrics(rec, {GT_KEY})
    assert m.reciprocal_rank == 1.0


# ---------------------------------------------------------------- aggregation


def metric(rr=0.0, hits=None, ratio=0.0, before=1, after=1, completed=True, loss=False, project="P"):
    hits = hits or {k: rr > 0 and 1 / rr <= k for k in TOP_K}
    return BugMetrics("b", project, completed, hits, rr, ratio, loss, 1.0, before, after, 0, 0, 0.0)


def test_mrr_of_two_bugs():
    assert MetricSummary.of([metric(1.0), metric(0.5)]).mrr_completed == 0.75


def test_mean_of_ratios_versus_ratio_of_means():
    s = MetricSummary.of([metric(ratio=0.9, before=10, after=1), metric(ratio=0.7, before=100, after=30)])
    assert s.mean_reduction_ratio == pytest.approx(0.8)
    assert s.reduction_ratio_of_means == pytest.approx(1 - 31 / 110)
    assert round(s.reduction_ratio_of_means, 3) == 0.718


def test_completed_only_versus_failures_included():
    ms = [metric(1.0) for _ in range(165)] + [metric(0.0) for _ in range(383 - 165)]
    ms += [metric(completed=False) for _ in range(12)]
    s = MetricSummary.of(ms)
    assert (s.bugs, s.completed, s.top_k_counts[1]) == (395, 383, 165)
    assert round(s.top_k_pct_completed[1], 1) == 43.1
    assert round(s.top_k_pct_all[1], 1) == 41.8


def test_aggregate_per_project_and_text():
    runs = table_runs()["V1"] + [make_record("Q-1", "V1", 1, 4, 2, False)]
    runs[-1].project = "Q"
    truth = _truth([r.bug_id for r in runs])
    summary = aggregate(evaluate(runs, truth))
    assert set(summary.per_project) == {"P", "Q"}
    assert summary.overall.bugs == 11
    text = format_summary(summary)
    assert "Overall" in text and "Q" in text
    with pytest.raises(ValueError):
        aggregate([])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.one_of(st.none(), st.integers(1, 12)), st.booleans()), min_size=1, max_size=30))
def test_summary_bounds(rows):
    ms = [metric(0.0 if r is None else 1 / r, completed=done) for r, done in rows]
    s = MetricSummary.of(ms)
    pct = [s.top_k_pct_completed[k] for k in TOP_K]
    assert pct == sorted(pct)
    if s.completed:
        anyhit = 100.0 * sum(1 for m in ms if m.completed and m.reciprocal_rank > 0) / s.completed
        assert s.top_k_pct_completed[1] / 100 - 1e-12 <= s.mrr_completed <= anyhit / 100 + 1e-12


# ---------------------------------------------------------------- paired comparison


def test_paired_fixture_matches_hand_table():
    runs = table_runs()
    truth = _truth([r.bug_id for r in runs["V0"]])
    report = paired_compare(runs["V0"], runs["V1"], truth)
    assert (report.label_a, report.label_b) == ("V0", "V1")
    assert len(report.shared_bugs) == 10
    assert set(report.deltas) == set(PAIRED_DELTAS)
    for k, v in PAIRED_DELTAS.items():
        assert report.deltas[k] == pytest.approx(v, abs=1e-12), k
    assert "Mean tokens in" in format_paired(report)


def test_paired_uses_intersection_of_completed():
    a = [make_record(b, "V0", 1, 5, 5, False) for b in ("b1", "b2", "b3")]
    b = [make_record(x, "V1", 1, 5, 2, False) for x in ("b2", "b3", "b4")]
    b.append(RunRecord("b1", "V1", "P", status="failed"))
    report = paired_compare(a, b, _truth(["b1", "b2", "b3", "b4"]))
    assert report.shared_bugs == ["b2", "b3"]


def test_identical_logs_have_zero_deltas():
    runs = table_runs()["V1"]
    report = paired_compare(runs, runs, _truth([r.bug_id for r in runs]))
    assert all(v == 0 for v in report.deltas.values())


def test_disjoint_logs_raise():
    a = [make_record("b1", "V0", 1, 5, 5, False)]
    b = [make_record("b2", "V1", 1, 5, 5, False)]
    with pytest.raises(PairingError):
        paired_compare(a, b, _truth(["b1", "b2"]))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 10**7), st.integers(1, 50), st.booleans())
def test_outliers_outside_intersection_do_not_matter(tokens, rank, which):
    runs = table_runs()
    truth = _truth([r.bug_id for r in runs["V0"]] + ["X-1"])
    base = paired_compare(runs["V0"], runs["V1"], truth)
    outlier = make_record("X-1", "V1", rank, 10**6, 1, True, tokens, tokens, float(tokens))
    a, b = list(runs["V0"]), list(runs["V1"])
    (a if which else b).append(outlier)
    assert paired_compare(a, b, truth).deltas == base.deltas


# ---------------------------------------------------------------- ground truth files


def test_ground_truth_yaml(tmp_path):
    truth = GroundTruth.load(FIXTURES / "miniproject" / "ground_truth.yaml")
    assert truth.keys("mini-3") == {"org.mini.DateParser#daysInMonth(2)", "org.mini.DateParser#addDays(4)"}
    (tmp_path / "gt.json").write_text(json.dumps({"x-1": [{"method": "a.B#c(0)", "file_path": "a/B.java"}]}))
    t = GroundTruth.load(tmp_path / "gt.json")
    assert t.bugs["x-1"][0].file_path == "a/B.java"
    with pytest.raises(KeyError):
        t.keys("nope")
    (tmp_path / "bad.yaml").write_text("x-1: []\n")
    with pytest.raises(ValueError):
        GroundTruth.load(tmp_path / "bad.yaml")
