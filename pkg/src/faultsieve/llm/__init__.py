from faultsieve.llm.backends import (
    BackendError,
    BackendUnavailable,
    ChatExchange,
    MockBackend,
    OllamaChatBackend,
    SamplingParams,
    chat,
)
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
from faultsieve.llm.prompts import PromptRendering, render_analysis, render_rerank, render_screening

__all__ = [
    "BackendError",
    "BackendUnavailable",
    "ChatExchange",
    "FailureDescription",
    "MockBackend",
    "OllamaChatBackend",
    "PromptRendering",
    "RankingUnparseable",
    "ReplyParseError",
    "SamplingParams",
    "ScreeningVerdict",
    "VerdictUnparseable",
    "chat",
    "parse_failure_description",
    "parse_ranking",
    "parse_verdict",
    "render_analysis",
    "render_rerank",
    "render_screening",
]
