"""Chat backends: an Ollama-compatible HTTP client and a scripted mock."""

from __future__ import annotations

import fnmatch
import json
import logging
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol

import httpx

from faultsieve.llm.prompts import PromptRendering

log = logging.getLogger(__name__)


class BackendError(RuntimeError):
    pass


class BackendUnavailable(BackendError):
    """Transport failures persisted through every retry."""


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.0
    seed: int | None = 0
    max_tokens: int | None = None


@dataclass(frozen=True)
class BackendReply:
    text: str
    tokens_in: int | None = None
    tokens_out: int | None = None


@dataclass(frozen=True)
class ChatRequest:
    model: str
    system_text: str
    user_text: str
    sampling: SamplingParams = SamplingParams()


@dataclass(frozen=True)
class ChatExchange:
    request: ChatRequest
    response_text: str
    tokens_in: int
    tokens_out: int
    latency: float
    estimated: bool = False


class ChatBackend(Protocol):
    model: str

    def complete(self, request: ChatRequest, rendering: PromptRendering) -> BackendReply: ...


def estimate_tokens(text: str) -> int:
    """Whitespace-token count; used when a backend reports no usage."""
    return len(text.split())


def chat(
    rendering: PromptRendering,
    backend: ChatBackend,
    sampling: SamplingParams = SamplingParams(),
    clock: Callable[[], float] = time.perf_counter,
) -> ChatExchange:
    request = ChatRequest(backend.model, rendering.system_text, rendering.user_text, sampling)
    t0 = clock()
    reply = backend.complete(request, rendering)
    latency = clock() - t0
    estimated = reply.tokens_in is None or reply.tokens_out is None
    tokens_in = (
        reply.tokens_in
        if reply.tokens_in is not None
        else estimate_tokens(rendering.system_text) + estimate_tokens(rendering.user_text)
    )
    tokens_out = reply.tokens_out if reply.tokens_out is not None else estimate_tokens(reply.text)
    return ChatExchange(request, reply.text, tokens_in, tokens_out, latency, estimated)


class OllamaChatBackend:
    """Non-streaming client for Ollama's ``/api/chat`` route.

    Transport errors (connection refused, timeouts) and 502/503/504 responses
    are retried with exponential backoff; other HTTP errors fail at once.
    """

    RETRY_STATUS = frozenset({502, 503, 504})

    def __init__(
        self,
        base_url: str = "http://localhost:11434",
        model: str = "llama3.1:8b",
        timeout: float = 600.0,
        retries: int = 3,
        backoff: float = 2.0,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.retries = retries
        self.backoff = backoff
        self._sleep = sleep
        self._client = httpx.Client(base_url=self.base_url, timeout=timeout, transport=transport)

    def _payload(self, request: ChatRequest) -> dict[str, Any]:
        options: dict[str, Any] = {"temperature": request.sampling.temperature}
        if request.sampling.seed is not None:
            options["seed"] = request.sampling.seed
        if request.sampling.max_tokens is not None:
            options["num_predict"] = request.sampling.max_tokens
        return {
            "model": request.model,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "stream": False,
            "options": options,
        }

    def complete(self, request: ChatRequest, rendering: PromptRendering) -> BackendReply:
        payload = self._payload(request)
        last_error = ""
        for attempt in range(self.retries + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post("/api/chat", json=payload)
            except httpx.TransportError as e:
                last_error = f"{type(e).__name__}: {e}"
                log.warning("chat attempt %d/%d failed: %s", attempt + 1, self.retries + 1, last_error)
                continue
            if resp.status_code in self.RETRY_STATUS:
                last_error = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise BackendError(f"HTTP {resp.status_code} from {self.base_url}: {resp.text[:300]}")
            data = resp.json()
            text = (data.get("message") or {}).get("content")
            if text is None:
                raise BackendError(f"chat response carries no message content: {str(data)[:300]}")
            return BackendReply(text, data.get("prompt_eval_count"), data.get("eval_count"))
        raise BackendUnavailable(
            f"{self.base_url} unavailable after {self.retries + 1} attempts ({last_error})"
        )


@dataclass
class MockCall:
    fingerprint: str
    stage: str
    subject: str


@dataclass
class MockBackend:
    """Replies from a script keyed by request fingerprint (``stage:subject``).

    Lookup order: exact fingerprint, then glob patterns in script order, then
    the bare stage name as a default. A value is a reply string, an object
    ``{"text", "tokens_in", "tokens_out"}``, or a list of those consumed in
    order (the last one repeats). Every call is logged in ``calls``.
    """

    script: dict[str, Any]
    model: str = "mock"
    calls: list[MockCall] = field(default_factory=list)
    _served: dict[str, int] = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @classmethod
    def from_file(cls, path: str | Path) -> MockBackend:
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def _lookup(self, fingerprint: str, stage: str) -> tuple[str, Any]:
        if fingerprint in self.script:
            return fingerprint, self.script[fingerprint]
        for pattern, value in self.script.items():
            if any(ch in pattern for ch in "*?[") and fnmatch.fnmatchcase(fingerprint, pattern):
                return pattern, value
        if stage in self.script:
            return stage, self.script[stage]
        raise BackendError(f"mock script has no reply for {fingerprint!r}")

    def complete(self, request: ChatRequest, rendering: PromptRendering) -> BackendReply:
        fp = rendering.fingerprint
        with self._lock:
            self.calls.append(MockCall(fp, rendering.stage, rendering.subject))
            key, value = self._lookup(fp, rendering.stage)
            if isinstance(value, list):
                served = self._served.get(fp, 0)
                self._served[fp] = served + 1
                value = value[min(served, len(value) - 1)]
        if isinstance(value, dict):
            if value.get("error") == "unavailable":
                raise BackendUnavailable(f"mock: scripted outage for {fp}")
            return BackendReply(value["text"], value.get("tokens_in"), value.get("tokens_out"))
        return BackendReply(str(value))

    def calls_for(self, stage: str) -> list[MockCall]:
        return [c for c in self.calls if c.stage == stage]
