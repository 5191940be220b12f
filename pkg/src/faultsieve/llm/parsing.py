"""Extract structure from free-text model replies."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Sequence


class ReplyParseError(ValueError):
    pass


class VerdictUnparseable(ReplyParseError):
    pass


class RankingUnparseable(ReplyParseError):
    pass


@dataclass(frozen=True)
class FailureDescription:
    expected_behavior: str
    observed_failure: str
    search_query: str
    degraded: bool = False

    def __post_init__(self) -> None:
        if not self.search_query.strip():
            raise ValueError("search_query must be non-empty")


@dataclass(frozen=True)
class ScreeningVerdict:
    verdict: bool
    justification: str


# A numbered point "n." / "n)" at a line start (optionally after markdown
# heading/bold/list noise) or inline after whitespace.
_POINT = "(?:^|(?<=\\s))(?:#+\\s*)?(?:\\*\\*)?\\s*{n}[.)](?:\\*\\*)?\\s+"
_HEADERS = (
    r"expected\s+behaviou?r",
    r"(?:actual\s+)?observed\s+failure|actual\s+failure|observed\s+error",
    r"search\s+query",
)
_HEADER = r"(?im)^\s*(?:#+\s*)?(?:[-*]\s*)?(?:\*\*)?\s*(?:{h})\s*(?:\*\*)?\s*:?\s*(?:\*\*)?"
_LEAD_LABEL = re.compile(
    r"^\s*(?:\*\*)?\s*(?:" + "|".join(_HEADERS) + r")\s*(?:\*\*)?\s*:?\s*(?:\*\*)?\s*:?\s*",
    re.IGNORECASE,
)


def _find_sections(text: str) -> list[tuple[int, int]] | None:
    """Start/content-start offsets of the three points, or None."""
    spots = []
    floor = 0
    for n in (1, 2, 3):
        m = re.compile(_POINT.format(n=n), re.MULTILINE).search(text, floor)
        if m is None:
            return None
        spots.append((m.start(), m.end()))
        floor = m.end()
    return spots


def _find_headers(text: str) -> list[tuple[int, int]] | None:
    spots = []
    floor = 0
    for h in _HEADERS:
        m = re.compile(_HEADER.format(h=h)).search(text, floor)
        if m is None:
            return None
        spots.append((m.start(), m.end()))
        floor = m.end()
    return spots


def _clean(segment: str) -> str:
    return _LEAD_LABEL.sub("", segment.strip(), count=1).strip()


def parse_failure_description(response_text: str) -> FailureDescription:
    """Split a stage-1 reply into expected / observed / search-query parts.

    Replies lacking the three numbered points (or the three bold headers)
    become a degraded description whose query is the whole reply.
    """
    text = response_text.strip()
    if not text:
        raise ReplyParseError("empty analysis reply")
    spots = _find_sections(text) or _find_headers(text)
    if spots is None:
        return FailureDescription("", "", text, degraded=True)
    bounds = [s for s, _ in spots[1:]] + [len(text)]
    parts = [_clean(text[c:e]) for (_, c), e in zip(spots, bounds)]
    if not parts[2]:
        return FailureDescription("", "", text, degraded=True)
    return FailureDescription(parts[0], parts[1], parts[2])


_VERDICT_LINE = re.compile(r"verdict\W*[:\-]\W*(.*)", re.IGNORECASE)
_NOT_SUSPICIOUS = re.compile(r"\bnot\W+suspicious\b", re.IGNORECASE)
_SUSPICIOUS = re.compile(r"\bsuspicious\b", re.IGNORECASE)
_JUSTIFICATION = re.compile(r"justification\W*:\W*(.*)", re.IGNORECASE | re.DOTALL)


def parse_verdict(response_text: str) -> ScreeningVerdict:
    """Read the last ``Verdict:`` line of a screening reply.

    "Not Suspicious" on the verdict line wins over a bare "Suspicious".
    """
    verdict = None
    verdict_end = 0
    for m in _VERDICT_LINE.finditer(response_text):
        line = m.group(1).splitlines()[0] if m.group(1) else ""
        if _NOT_SUSPICIOUS.search(line):
            verdict, verdict_end = False, m.end()
        elif _SUSPICIOUS.search(line):
            verdict, verdict_end = True, m.end()
    if verdict is None:
        raise VerdictUnparseable("no 'Verdict: (Not) Suspicious' line in reply")
    jm = _JUSTIFICATION.search(response_text)
    if jm and jm.group(1).strip():
        justification = jm.group(1).strip()
    else:
        rest = response_text[verdict_end:].strip()
        justification = rest or response_text.strip()
    return ScreeningVerdict(verdict, justification)


_ITEM = re.compile(r"(?:^|(?<=\s))(?:#+\s*)?(?:\*\*)?\s*\d+[.):](?:\*\*)?\s+", re.MULTILINE)


def _squash(text: str) -> str:
    # "divide (int a, int b )" and "divide(int,int)" must compare equal
    text = re.sub(r"\s*,\s*", ",", text)
    text = re.sub(r"(?<=[\w$])\s+\(", "(", text)
    text = re.sub(r"\(\s+", "(", text)
    return re.sub(r"\s+\)", ")", text)


def _label_pattern(label: str) -> re.Pattern[str]:
    return re.compile(r"(?<![\w$])" + re.escape(_squash(label)) + r"(?![\w$])")


def parse_ranking(
    response_text: str,
    expected_ids: Sequence[str],
    labels: Mapping[str, Sequence[str]] | None = None,
) -> list[str]:
    """Order ``expected_ids`` as the reply ranks them.

    Each id is recognised by any of its ``labels`` (default: the id itself).
    With a numbered list, each item contributes the first id it mentions;
    otherwise ids are taken in order of first mention. Repeats are dropped
    and unmentioned ids follow in their given order, so the result is always
    a permutation of ``expected_ids``.
    """
    if not expected_ids:
        raise ValueError("expected_ids must be non-empty")
    labels = labels or {i: [i] for i in expected_ids}
    patterns = {i: [_label_pattern(lab) for lab in labels.get(i, [i])] for i in expected_ids}

    text = _squash(response_text)
    items = list(_ITEM.finditer(text))
    mentioned: list[str] = []
    if items:
        bounds = [m.end() for m in items]
        ends = [m.start() for m in items[1:]] + [len(text)]
        for b, e in zip(bounds, ends):
            hits = _mentions(text[b:e], patterns)
            if hits:
                mentioned.append(hits[0][1])
    if not mentioned:
        mentioned = [doc_id for _, doc_id in _mentions(text, patterns)]
    if not mentioned:
        raise RankingUnparseable("reply mentions none of the expected candidates")
    ranked = list(dict.fromkeys(mentioned))
    return ranked + [i for i in expected_ids if i not in ranked]


def _mentions(
    text: str, patterns: Mapping[str, Sequence[re.Pattern[str]]]
) -> list[tuple[int, str]]:
    """(offset of first mention, id) for every id mentioned in ``text``."""
    hits = []
    for doc_id, pats in patterns.items():
        found = [m.start() for p in pats if (m := p.search(text))]
        if found:
            hits.append((min(found), doc_id))
    return sorted(hits)
