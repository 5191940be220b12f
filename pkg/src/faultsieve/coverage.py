"""JaCoCo XML report parsing and per-method branch-coverage ratios."""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

from faultsieve.corpus import MethodKey


class CoverageUnavailable(FileNotFoundError):
    """No coverage report exists for the bug; the pipeline falls back to V0."""


class CoverageParseError(ValueError):
    pass


@dataclass(frozen=True)
class CoverageCounters:
    branch_covered: int = 0
    branch_missed: int = 0
    line_covered: int = 0
    line_missed: int = 0
    instruction_covered: int = 0
    instruction_missed: int = 0

    def __post_init__(self) -> None:
        for name, value in vars(self).items():
            if value < 0:
                raise ValueError(f"{name} must be non-negative, got {value}")


@dataclass(frozen=True)
class CoverageEntry:
    class_name: str
    method_name: str
    descriptor: str
    arity: int
    counters: CoverageCounters

    @property
    def key(self) -> MethodKey:
        return MethodKey(self.class_name, self.method_name, self.arity)


@dataclass
class CoverageReport:
    entries: list[CoverageEntry]
    source_report_path: str = ""
    _by_key: dict[MethodKey, list[CoverageEntry]] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._by_key = {}
        for e in self.entries:
            self._by_key.setdefault(e.key, []).append(e)

    def __len__(self) -> int:
        return len(self.entries)

    def matching(self, key: MethodKey) -> list[CoverageEntry]:
        return list(self._by_key.get(key, ()))


def descriptor_arity(descriptor: str) -> int:
    """Count the parameters in a JVM method descriptor such as ``(I[JLjava/lang/String;)V``."""
    if not descriptor.startswith("("):
        raise CoverageParseError(f"bad method descriptor {descriptor!r}")
    i, n, count = 1, len(descriptor), 0
    while i < n and descriptor[i] != ")":
        while descriptor[i] == "[":
            i += 1
        if descriptor[i] == "L":
            j = descriptor.find(";", i)
            if j < 0:
                raise CoverageParseError(f"bad method descriptor {descriptor!r}")
            i = j
        elif descriptor[i] not in "BCDFIJSZ":
            raise CoverageParseError(f"bad method descriptor {descriptor!r}")
        i += 1
        count += 1
    if i >= n:
        raise CoverageParseError(f"bad method descriptor {descriptor!r}")
    return count


def _counters(elem: ET.Element) -> CoverageCounters:
    values: dict[str, int] = {}
    for c in elem.findall("counter"):
        kind = (c.get("type") or "").lower()
        if kind not in ("branch", "line", "instruction"):
            continue
        values[f"{kind}_covered"] = int(c.get("covered", "0"))
        values[f"{kind}_missed"] = int(c.get("missed", "0"))
    return CoverageCounters(**values)


def parse_coverage(xml_path: str | Path) -> CoverageReport:
    """Read every ``<method>`` element of a JaCoCo XML report.

    Class names are converted to dotted binary form (``a/b/C$D`` -> ``a.b.C$D``)
    and constructors (``<init>``) are renamed to the class simple name so they
    join with source-side constructor documents.
    """
    path = Path(xml_path)
    if not path.is_file():
        raise CoverageUnavailable(f"coverage report not found: {path}")
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as e:
        line, col = e.position
        raise CoverageParseError(f"{path}:{line}:{col}: malformed coverage XML ({e})") from e
    entries = []
    for cls in root.iter("class"):
        class_name = (cls.get("name") or "").replace("/", ".")
        simple = class_name.rsplit(".", 1)[-1].rsplit("$", 1)[-1]
        for m in cls.findall("method"):
            name = m.get("name") or ""
            desc = m.get("desc") or "()V"
            if name == "<init>":
                name = simple
            entries.append(
                CoverageEntry(class_name, name, desc, descriptor_arity(desc), _counters(m))
            )
    return CoverageReport(entries, str(path))


def branch_ratio(counters: CoverageCounters) -> float:
    total = counters.branch_covered + counters.branch_missed
    if total > 0:
        return counters.branch_covered / total
    # branch-free method: executed at all means fully covered
    executed = counters.line_covered + counters.instruction_covered
    return 1.0 if executed > 0 else 0.0


def lookup_rho(report: CoverageReport, key: MethodKey) -> list[tuple[str, float]]:
    """All report variants matching ``key``, as ``(descriptor, rho)`` pairs.

    More than one result means a same-arity overload the report cannot
    disambiguate; none means the method never appeared in the report.
    """
    return [(e.descriptor, branch_ratio(e.counters)) for e in report.matching(key)]


def counter_table(report: CoverageReport) -> list[dict]:
    """Flat rows of the parsed counters, in report order."""
    return [
        {
            "class_name": e.class_name,
            "method_name": e.method_name,
            "descriptor": e.descriptor,
            **vars(e.counters),
        }
        for e in report.entries
    ]
