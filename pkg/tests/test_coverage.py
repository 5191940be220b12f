import re
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from faultsieve.corpus import MethodKey, extract_methods
from faultsieve.coverage import (
    CoverageCounters,
    CoverageParseError,
    CoverageUnavailable,
    branch_ratio,
    counter_table,
    descriptor_arity,
    lookup_rho,
    parse_coverage,
)

FIXTURES = Path(__file__).parent / "fixtures"
SIX = FIXTURES / "coverage" / "six_methods.xml"
SHAPES = "com.example.geo.Shapes"

# hand-computed from the fixture's counters
RHO_TABLE = {
    ("clamp", "(DDD)D"): 0.625,  # 5 of 8 branches
    ("name", "()Ljava/lang/String;"): 1.0,  # no branches, 2 lines executed
    ("reset", "()V"): 0.0,  # no branches, nothing executed
    ("scale", "(I)I"): 0.5,
    ("scale", "(J)J"): 0.0,
    ("lambda$clamp$0", "(D)Z"): 1.0,  # compiler-generated, absent from source
}


def dump_counters(path: Path) -> list[tuple[str, str, dict[str, tuple[int, int]]]]:
    """Regex-based reader, independent of the ElementTree parser."""
    text = path.read_text()
    out = []
    for m in re.finditer(r'<method name="([^"]+)" desc="([^"]+)"[^>]*>(.*?)</method>', text, re.S):
        counters = {
            t: (int(c), int(mi))
            for t, mi, c in re.findall(r'type="(\w+)" missed="(\d+)" covered="(\d+)"', m.group(3))
        }
        out.append((m.group(1).replace("&lt;", "<").replace("&gt;", ">"), m.group(2), counters))
    return out


def test_fixture_counters_read_back_by_independent_reader():
    report = parse_coverage(SIX)
    dumped = dump_counters(SIX)
    assert len(report) == len(dumped) == 6
    for e, (name, desc, counters) in zip(report.entries, dumped):
        assert (e.method_name, e.descriptor) == (name, desc)
        assert (e.counters.branch_covered, e.counters.branch_missed) == counters.get("BRANCH", (0, 0))
        assert (e.counters.line_covered, e.counters.line_missed) == counters["LINE"]
        assert (e.counters.instruction_covered, e.counters.instruction_missed) == counters["INSTRUCTION"]


def test_counter_table_round_trip():
    rows = counter_table(parse_coverage(SIX))
    dumped = dump_counters(SIX)
    for row, (name, desc, counters) in zip(rows, dumped):
        assert row["class_name"] == SHAPES
        assert (row["method_name"], row["descriptor"]) == (name, desc)
        for kind in ("BRANCH", "LINE", "INSTRUCTION"):
            c, mi = counters.get(kind, (0, 0))
            assert row[f"{kind.lower()}_covered"] == c
            assert row[f"{kind.lower()}_missed"] == mi


def test_branch_counter_example():
    (clamp,) = [e for e in parse_coverage(SIX).entries if e.method_name == "clamp"]
    assert (clamp.counters.branch_covered, clamp.counters.branch_missed) == (5, 3)


def test_missing_branch_counter_defaults_to_zero():
    (name,) = [e for e in parse_coverage(SIX).entries if e.method_name == "name"]
    c = name.counters
    assert (c.branch_covered, c.branch_missed) == (0, 0)
    assert (c.line_covered, c.line_missed) == (2, 0)


def test_rho_table_matches_hand_computation():
    report = parse_coverage(SIX)
    got = {(e.method_name, e.descriptor): branch_ratio(e.counters) for e in report.entries}
    assert got == RHO_TABLE


def test_same_arity_lookup_returns_both_overloads():
    report = parse_coverage(SIX)
    assert lookup_rho(report, MethodKey(SHAPES, "scale", 1)) == [("(I)I", 0.5), ("(J)J", 0.0)]
    assert lookup_rho(report, MethodKey(SHAPES, "clamp", 3)) == [("(DDD)D", 0.625)]
    assert lookup_rho(report, MethodKey(SHAPES, "scale", 2)) == []
    assert lookup_rho(report, MethodKey(SHAPES, "missing", 0)) == []


def test_source_join_and_generated_method():
    docs = extract_methods(FIXTURES / "coverage")
    report = parse_coverage(SIX)
    source_keys = {d.key for d in docs}
    assert len(docs) == 5
    for d in docs:
        assert lookup_rho(report, d.key), d.doc_id
    generated = [e for e in report.entries if e.key not in source_keys]
    assert [e.method_name for e in generated] == ["lambda$clamp$0"]


def test_constructor_names_and_binary_class_names(tmp_path):
    xml = tmp_path / "c.xml"
    xml.write_text(
        '<report name="r"><package name="a/b">'
        '<class name="a/b/Outer$Inner"><method name="&lt;init&gt;" desc="(La/b/Outer;I)V">'
        '<counter type="LINE" missed="0" covered="1"/></method>'
        '<method name="&lt;clinit&gt;" desc="()V"><counter type="LINE" missed="1" covered="0"/></method>'
        "</class></package></report>"
    )
    entries = parse_coverage(xml).entries
    assert [(e.class_name, e.method_name, e.arity) for e in entries] == [
        ("a.b.Outer$Inner", "Inner", 2),
        ("a.b.Outer$Inner", "<clinit>", 0),
    ]


def test_empty_report(tmp_path):
    (tmp_path / "e.xml").write_text("<report/>")
    assert len(parse_coverage(tmp_path / "e.xml")) == 0


def test_missing_file_is_unavailable(tmp_path):
    with pytest.raises(CoverageUnavailable):
        parse_coverage(tmp_path / "nope.xml")


def test_malformed_xml_reports_position(tmp_path):
    (tmp_path / "bad.xml").write_text("<report>\n<package name='x'>\n<class></package>")
    with pytest.raises(CoverageParseError, match=r"bad\.xml:3:"):
        parse_coverage(tmp_path / "bad.xml")


def test_branch_ratio_examples():
    assert branch_ratio(CoverageCounters(3, 1)) == 0.75
    assert branch_ratio(CoverageCounters(0, 0, line_covered=2)) == 1.0
    assert branch_ratio(CoverageCounters(0, 4)) == 0.0
    assert branch_ratio(CoverageCounters(0, 0, instruction_covered=1)) == 1.0
    assert branch_ratio(CoverageCounters()) == 0.0


def test_negative_counters_rejected():
    with pytest.raises(ValueError):
        CoverageCounters(branch_covered=-1)


@pytest.mark.parametrize(
    "desc, arity",
    [("()V", 0), ("(I)I", 1), ("([[JLjava/lang/String;Z)V", 3), ("(Lx/Y;[Lx/Z;D)Lx/Y;", 3)],
)
def test_descriptor_arity(desc, arity):
    assert descriptor_arity(desc) == arity


@pytest.mark.parametrize("desc", ["I", "(Q)V", "(Ljava/lang/String", "(I"])
def test_bad_descriptor(desc):
    with pytest.raises(CoverageParseError):
        descriptor_arity(desc)


_count = st.integers(0, 10_000)


@given(_count, _count, _count, _count, _count, _count)
def test_rho_in_unit_interval(bc, bm, lc, lm, ic, im):
    assert 0.0 <= branch_ratio(CoverageCounters(bc, bm, lc, lm, ic, im)) <= 1.0


@given(st.integers(1, 500), st.data())
def test_rho_monotone_in_covered_branches(total, data):
    a = data.draw(st.integers(0, total))
    b = data.draw(st.integers(a, total))
    assert branch_ratio(CoverageCounters(a, total - a)) <= branch_ratio(CoverageCounters(b, total - b))


@given(st.integers(1, 6), st.data())
def test_lookup_keeps_every_ambiguous_variant(tmp_path_factory, n, data):
    prims = "IJDFZCSB"
    descs = sorted({"(" + data.draw(st.sampled_from(prims)) + ")V" for _ in range(n)})
    methods = "".join(
        f'<method name="f" desc="{d}"><counter type="BRANCH" missed="1" covered="1"/></method>'
        for d in descs
    )
    path = tmp_path_factory.mktemp("ov") / "r.xml"
    path.write_text(f'<report><package name="p"><class name="p/C">{methods}</class></package></report>')
    assert len(lookup_rho(parse_coverage(path), MethodKey("p.C", "f", 1))) == len(descs)
