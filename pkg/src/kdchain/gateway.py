"""Uniform chat-completion interface over remote HTTP providers and local scripts.

The chain engine only ever sees PromptBundle in, Completion out. A scripted
provider replays canned responses (keyed by prompt hash, or from an ordered
queue) so the whole pipeline runs offline and deterministically; the remote
provider speaks the common chat-completions wire protocol.
"""
from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Protocol, Union

import httpx

ENV_API_BASE = "KDC_API_BASE"
ENV_API_KEY = "KDC_API_KEY"

DEFAULT_TEMPERATURE = 0.0
DEFAULT_MAX_OUTPUT_TOKENS = 1024
DEFAULT_CANDIDATE_COUNT = 5

_ROLES = ("system", "user", "assistant")
_EXCERPT_BYTES = 256


class GatewayError(Exception):
    """Base class for provider and transport failures."""


class ProviderConfigError(GatewayError):
    """Provider handle cannot be built (bad spec, missing script, missing endpoint)."""


class TransportError(GatewayError):
    """Transient transport failures persisted past the retry budget."""


class TransientTransportFailure(GatewayError):
    """Single-attempt failure that is safe to retry (connection loss, 429, 5xx)."""


class DeadlineExceeded(GatewayError):
    """The per-call deadline would be blown by waiting for another attempt."""


class ProviderRejected(GatewayError):
    """Non-retryable provider refusal (4xx other than 429)."""

    def __init__(self, status: int, excerpt: str):
        super().__init__(f"provider rejected request with status {status}: {excerpt}")
        self.status = status
        self.excerpt = excerpt


class MalformedProviderResponse(GatewayError):
    """Provider answered but the body does not carry candidates."""

    def __init__(self, excerpt: str):
        super().__init__(f"malformed provider response: {excerpt}")
        self.excerpt = excerpt


class ScriptExhausted(GatewayError):
    """Scripted provider has no entry for the prompt and an empty queue."""


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in _ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if not self.content:
            raise ValueError("message content must be non-empty")


@dataclass(frozen=True)
class DecodeParams:
    temperature: float = DEFAULT_TEMPERATURE
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    candidate_count: int = DEFAULT_CANDIDATE_COUNT

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")
        if self.candidate_count < 1:
            raise ValueError("candidate_count must be >= 1")


@dataclass(frozen=True)
class PromptBundle:
    messages: tuple[Message, ...]
    params: DecodeParams = DecodeParams()

    def __post_init__(self):
        if not any(m.role == "user" for m in self.messages):
            raise ValueError("bundle must contain at least one user message")


@dataclass(frozen=True)
class Completion:
    candidates: tuple[str, ...]
    provider_id: str
    latency_ms: float
    token_usage: Optional[tuple[int, int]] = None  # (input, output)

    def __post_init__(self):
        if not self.candidates:
            raise ValueError("completion must carry at least one candidate")


def prompt_fingerprint(bundle: PromptBundle) -> str:
    """Stable sha256 over message content only; decode params do not key scripts."""
    payload = [{"content": m.content, "role": m.role} for m in bundle.messages]
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class Transcript:
    """Append-only JSONL sink; writes are serialized so concurrent calls interleave whole records."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self._lock = threading.Lock()
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.touch(exist_ok=True)

    def append(self, record: dict) -> None:
        line = json.dumps(record, sort_keys=True, ensure_ascii=False)
        with self._lock:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    @staticmethod
    def read(path: Union[str, Path]) -> list[dict]:
        out = []
        with Path(path).open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    out.append(json.loads(line))
        return out


class Provider(Protocol):
    provider_id: str

    def send(self, bundle: PromptBundle) -> Completion: ...


ScriptEntry = Union[str, list]


def _as_candidates(entry: ScriptEntry) -> tuple[str, ...]:
    if isinstance(entry, str):
        return (entry,)
    candidates = tuple(str(c) for c in entry)
    if not candidates:
        raise ProviderConfigError("script entry must carry at least one candidate")
    return candidates


class ScriptedProvider:
    """Deterministic local provider.

    Two kinds of entries: hash-keyed responses (matched by prompt fingerprint,
    reusable across calls) and an ordered fallback queue (each element consumed
    by exactly one unmatched call). Hash entries win over the queue.
    """

    provider_id = "scripted"

    def __init__(
        self,
        by_hash: Optional[dict[str, ScriptEntry]] = None,
        queue: Optional[Iterable[ScriptEntry]] = None,
    ):
        self.by_hash = dict(by_hash or {})
        self._queue = list(queue or [])
        if not self.by_hash and not self._queue:
            raise ProviderConfigError("script is empty")
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ScriptedProvider":
        p = Path(path)
        if not p.is_file():
            raise ProviderConfigError(f"script file not found: {p}")
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ProviderConfigError(f"script file is not valid JSON: {p}: {exc}") from exc
        if not isinstance(data, dict):
            raise ProviderConfigError("script file must hold a JSON object")
        queue = data.pop("queue", [])
        if not isinstance(queue, list):
            raise ProviderConfigError("script 'queue' must be a list")
        return cls(by_hash=data, queue=queue)

    @classmethod
    def from_transcript(cls, path: Union[str, Path]) -> "ScriptedProvider":
        """Rebuild a provider from a transcript log, keyed by prompt hash."""
        by_hash: dict[str, ScriptEntry] = {}
        for record in Transcript.read(path):
            request = record.get("request") or {}
            response = record.get("response") or {}
            messages = request.get("messages")
            candidates = response.get("candidates")
            if not messages or not candidates:
                continue
            bundle = PromptBundle(tuple(Message(m["role"], m["content"]) for m in messages))
            by_hash[prompt_fingerprint(bundle)] = list(candidates)
        if not by_hash:
            raise ProviderConfigError(f"transcript holds no replayable records: {path}")
        return cls(by_hash=by_hash)

    def send(self, bundle: PromptBundle) -> Completion:
        key = prompt_fingerprint(bundle)
        with self._lock:
            if key in self.by_hash:
                entry = self.by_hash[key]
            elif self._queue:
                entry = self._queue.pop(0)
            else:
                raise ScriptExhausted(f"no script entry for prompt {key[:12]} and queue is empty")
        return Completion(_as_candidates(entry), self.provider_id, 0.0)


class RemoteProvider:
    """Chat-completions HTTP client. One send() is one attempt; retries live in complete()."""

    def __init__(
        self,
        model: str,
        base_url: Optional[str] = None,
        api_key: Optional[str] = None,
        path: str = "/v1/chat/completions",
        transport: Optional[httpx.BaseTransport] = None,
        request_timeout: float = 30.0,
    ):
        import os

        self.model = model
        self.base_url = base_url if base_url is not None else os.environ.get(ENV_API_BASE)
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY)
        if not self.base_url:
            raise ProviderConfigError(f"remote provider needs an endpoint; set {ENV_API_BASE}")
        self.path = path
        self.provider_id = f"remote:{model}"
        self.request_timeout = request_timeout
        self._client = httpx.Client(
            base_url=self.base_url.rstrip("/"),
            transport=transport,
            timeout=request_timeout,
        )

    def payload(self, bundle: PromptBundle) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in bundle.messages],
            "temperature": bundle.params.temperature,
            "n": bundle.params.candidate_count,
            "max_tokens": bundle.params.max_output_tokens,
        }

    def send(self, bundle: PromptBundle) -> Completion:
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        started = time.monotonic()
        try:
            response = self._client.post(self.path, json=self.payload(bundle), headers=headers)
        except httpx.HTTPError as exc:
            raise TransientTransportFailure(f"transport failure: {exc}") from exc
        latency_ms = (time.monotonic() - started) * 1000.0
        body = response.content or b""
        excerpt = body[:_EXCERPT_BYTES].decode("utf-8", errors="replace")
        if response.status_code == 429 or response.status_code >= 500:
            raise TransientTransportFailure(f"status {response.status_code}: {excerpt}")
        if response.status_code >= 400:
            raise ProviderRejected(response.status_code, excerpt)
        try:
            data = response.json()
            candidates = tuple(c["message"]["content"] for c in data["choices"])
            if not candidates:
                raise KeyError("choices")
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedProviderResponse(excerpt) from exc
        usage = data.get("usage") or {}
        token_usage = None
        if "prompt_tokens" in usage and "completion_tokens" in usage:
            token_usage = (int(usage["prompt_tokens"]), int(usage["completion_tokens"]))
        return Completion(candidates, self.provider_id, latency_ms, token_usage)

    def close(self) -> None:
        self._client.close()


@dataclass(frozen=True)
class RetryPolicy:
    retries: int = 3
    backoff_base: float = 0.5  # seconds
    factor: float = 2.0
    deadline: float = 120.0  # seconds
    sleep: Callable[[float], None] = field(default=time.sleep, compare=False)
    clock: Callable[[], float] = field(default=time.monotonic, compare=False)

    def backoff(self, attempt: int) -> float:
        # attempt is 1-based: first retry waits backoff_base.
        return self.backoff_base * (self.factor ** (attempt - 1))


def complete(
    bundle: PromptBundle,
    provider: Provider,
    *,
    transcript: Optional[Transcript] = None,
    retry: Optional[RetryPolicy] = None,
    meta: Optional[dict] = None,
) -> Completion:
    """Send a bundle through a provider with retry, deadline, and transcript logging.

    Each attempt (success or failure) appends one transcript record. Only
    transient transport failures are retried; total attempts <= 1 + retries
    and the call never waits past the deadline.
    """
    policy = retry or RetryPolicy()
    started = policy.clock()
    request_view = {
        "messages": [{"role": m.role, "content": m.content} for m in bundle.messages],
        "temperature": bundle.params.temperature,
        "n": bundle.params.candidate_count,
        "max_tokens": bundle.params.max_output_tokens,
    }

    def log(response_view: dict, latency_ms: float) -> None:
        if transcript is None:
            return
        record = {
            "ts": time.time(),
            "provider": provider.provider_id,
            "request": request_view,
            "response": response_view,
            "latency_ms": latency_ms,
        }
        if meta:
            record.update(meta)
        transcript.append(record)

    attempt = 0
    while True:
        attempt += 1
        try:
            completion = provider.send(bundle)
        except TransientTransportFailure as exc:
            log({"error": str(exc)}, 0.0)
            if attempt > policy.retries:
                raise TransportError(f"gave up after {attempt} attempts: {exc}") from exc
            wait = policy.backoff(attempt)
            if policy.clock() - started + wait >= policy.deadline:
                raise DeadlineExceeded(
                    f"deadline of {policy.deadline}s would be exceeded after {attempt} attempts"
                ) from exc
            policy.sleep(wait)
            continue
        except GatewayError as exc:
            log({"error": str(exc)}, 0.0)
            raise
        log({"candidates": list(completion.candidates)}, completion.latency_ms)
        return completion


def provider_from_spec(spec: str) -> Provider:
    """Build a provider from 'scripted:<path>' or 'remote:<model>'."""
    kind, sep, rest = spec.partition(":")
    if not sep or not rest:
        raise ProviderConfigError(f"provider spec must look like scripted:<path> or remote:<model>, got {spec!r}")
    if kind == "scripted":
        return ScriptedProvider.from_file(rest)
    if kind == "remote":
        return RemoteProvider(rest)
    raise ProviderConfigError(f"unknown provider kind {kind!r}")
