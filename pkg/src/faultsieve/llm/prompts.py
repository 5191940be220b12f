"""Prompt templates for the three LLM stages and their rendering."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

ANALYSIS = "analysis"
SCREENING = "screening"
RERANK = "rerank"

ANALYSIS_SYSTEM = (
    "You are an expert software debugger with deep knowledge of Java and common fault patterns."
)
ANALYSIS_USER = """\
Analyze the following failing test case:
{test_code}

Your response must address three points:
1. Explain the **expected behavior** of the tested functionality.
2. Explain the **actual observed failure**, including the error type and any relevant context from the stack trace.
3. Generate a concise **search query** (2-5 sentences) describing the likely faulty functionality in natural language, as if you were searching a codebase for the methods responsible for this behavior."""

SCREENING_SYSTEM = "You are a senior software engineer specializing in Java fault analysis."
SCREENING_USER = """\
A test is failing with the following error:
{error_output}

Failure description: {failure_description}

Examine the following method carefully:
{method_code}

Reason step-by-step about whether a defect in this method could produce the observed failure. Then answer:
**Verdict:** Suspicious or Not Suspicious
**Justification:** One to three sentences explaining your reasoning."""

RERANK_SYSTEM = "You are a senior software engineer performing final root-cause triage."
RERANK_USER = """\
A test is failing with the following error:
{error_output}

Failure description: {failure_description}

The following methods have each been identified as individually suspicious. For each, the method code and a preliminary analysis are provided:
{suspect_list_with_justifications}

Considering all suspects together, rank them from most to least likely to be the true fault site. Provide a one-sentence comparative justification for each position in your ranking."""

VERDICT_REMINDER = (
    "\n\nYour previous answer did not contain a verdict line. "
    "Answer with exactly one line 'Verdict: Suspicious' or 'Verdict: Not Suspicious', "
    "followed by 'Justification: ...'."
)
RANKING_REMINDER = (
    "\n\nYour previous answer did not contain a recognizable ranking. "
    "Answer with a numbered list of the suspect labels, most likely first."
)

TEMPLATES: dict[str, tuple[str, str]] = {
    ANALYSIS: (ANALYSIS_SYSTEM, ANALYSIS_USER),
    SCREENING: (SCREENING_SYSTEM, SCREENING_USER),
    RERANK: (RERANK_SYSTEM, RERANK_USER),
}

DEFAULT_BUDGETS = {ANALYSIS: 24_000, SCREENING: 24_000, RERANK: 48_000}

_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")
TRUNCATION_MARKER = "\n... [{n} characters omitted] ...\n"


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class PromptRendering:
    system_text: str
    user_text: str
    stage: str
    bound_variables: Mapping[str, str]
    # bug id for analysis/rerank, "<bug id>::<doc id>" for screening; keys mock replies
    subject: str = ""

    @property
    def fingerprint(self) -> str:
        return f"{self.stage}:{self.subject}"


def placeholders(template: str) -> list[str]:
    return _PLACEHOLDER.findall(template)


def render(stage: str, variables: Mapping[str, str], subject: str = "") -> PromptRendering:
    """Substitute ``variables`` into the stage template.

    Substituted content is never rescanned, so braces in Java code are safe.
    """
    system, user = TEMPLATES[stage]
    missing = [p for p in placeholders(user) if p not in variables]
    if missing:
        raise PromptError(f"unbound placeholders for {stage}: {missing}")
    text = _PLACEHOLDER.sub(lambda m: variables[m.group(1)], user)
    return PromptRendering(system, text, stage, dict(variables), subject)


def truncate_middle(text: str, limit: int) -> str:
    """Cut the middle of ``text`` so it fits in ``limit`` characters.

    Head and tail are kept; the cut is marked with the omitted count.
    Deterministic for fixed inputs.
    """
    if len(text) <= limit:
        return text
    omitted = len(text) - limit
    # marker length depends on the count; iterate until stable
    for _ in range(4):
        marker = TRUNCATION_MARKER.format(n=omitted)
        keep = max(limit - len(marker), 0)
        new_omitted = len(text) - keep
        if new_omitted == omitted:
            break
        omitted = new_omitted
    marker = TRUNCATION_MARKER.format(n=omitted)
    keep = max(limit - len(marker), 0)
    head = (keep + 1) // 2
    tail = keep - head
    return text[:head] + marker + (text[len(text) - tail :] if tail else "")


def _fixed_length(stage: str) -> int:
    _, user = TEMPLATES[stage]
    return len(_PLACEHOLDER.sub("", user))


# --------------------------------------------------------------------------
# stage-specific renderers


def render_analysis(
    test_code: str, error_output: str, bug_id: str = "", budget: int = DEFAULT_BUDGETS[ANALYSIS]
) -> PromptRendering:
    if not test_code or not test_code.strip():
        raise PromptError("failing test code is empty")
    room = max(budget - _fixed_length(ANALYSIS), 0)
    error_block = f"\n\nError output:\n{error_output}" if error_output.strip() else ""
    if len(error_block) > room // 2:
        error_block = truncate_middle(error_block, room // 2)
    code = truncate_middle(test_code, max(room - len(error_block), 0))
    return render(ANALYSIS, {"test_code": code + error_block}, subject=bug_id)


def describe_failure(expected: str, observed: str, query: str) -> str:
    parts = []
    if expected:
        parts.append(f"Expected behavior: {expected}")
    if observed:
        parts.append(f"Observed failure: {observed}")
    parts.append(f"Likely faulty functionality: {query}")
    return "\n".join(parts)


def render_screening(
    error_output: str,
    failure_description: str,
    method_code: str,
    doc_id: str = "",
    budget: int = DEFAULT_BUDGETS[SCREENING],
) -> PromptRendering:
    room = max(budget - _fixed_length(SCREENING), 0)
    shared = len(error_output) + len(failure_description)
    code = truncate_middle(method_code, max(room - shared, room // 2))
    left = max(room - len(code), 0)
    desc = truncate_middle(failure_description, max(left // 2, left - len(error_output)))
    err = truncate_middle(error_output, max(left - len(desc), 0))
    return render(
        SCREENING,
        {"error_output": err, "failure_description": desc, "method_code": code},
        subject=doc_id,
    )


@dataclass
class SuspectBlock:
    label: str
    signature: str
    file_path: str
    code: str
    justification: str = ""

    def render(self) -> str:
        return (
            f"[{self.label}] {self.signature} ({self.file_path})\n"
            f"```java\n{self.code}\n```\n"
            f"Preliminary analysis: {self.justification or '(none)'}"
        )


@dataclass
class _RerankParts:
    blocks: list[SuspectBlock] = field(default_factory=list)
    error_output: str = ""
    failure_description: str = ""

    def suspects_text(self) -> str:
        return "\n\n".join(b.render() for b in self.blocks)

    def size(self) -> int:
        return len(self.suspects_text()) + len(self.error_output) + len(self.failure_description)


def render_rerank(
    error_output: str,
    failure_description: str,
    suspects: Sequence[SuspectBlock],
    bug_id: str = "",
    budget: int = DEFAULT_BUDGETS[RERANK],
    justification_floor: int = 240,
) -> PromptRendering:
    """Render the comparative ranking prompt.

    Over budget, suspect blocks shrink first (justifications, then the middle
    of each method's code) and only then the shared error/description fields.
    """
    room = max(budget - _fixed_length(RERANK), 0)
    parts = _RerankParts(
        [SuspectBlock(**vars(b)) for b in suspects], error_output, failure_description
    )
    if parts.size() > room:
        for b in parts.blocks:
            b.justification = truncate_middle(b.justification, justification_floor)
    if parts.size() > room and parts.blocks:
        shared = len(parts.error_output) + len(parts.failure_description)
        overhead = len(parts.suspects_text()) - sum(len(b.code) for b in parts.blocks)
        per_code = max((room - shared - overhead) // len(parts.blocks), 200)
        for b in parts.blocks:
            b.code = truncate_middle(b.code, per_code)
    if parts.size() > room:
        left = max(room - len(parts.suspects_text()), 0)
        parts.failure_description = truncate_middle(parts.failure_description, left // 2)
        parts.error_output = truncate_middle(
            parts.error_output, max(left - len(parts.failure_description), 0)
        )
    return render(
        RERANK,
        {
            "error_output": parts.error_output,
            "failure_description": parts.failure_description,
            "suspect_list_with_justifications": parts.suspects_text(),
        },
        subject=bug_id,
    )
