"""Cached, rate-limited client for chat-completion endpoints.

Every request is content-addressed by a hash over all of its fields; the
first completion for a hash is stored on disk and every later identical
request is served from that file byte-for-byte. Reproducibility of a run is
therefore defined at the cache layer, not at the provider: hosted models
offer no sampling seed, but a warm cache replays any recorded run exactly.

Transports are injectable. The default one speaks the OpenAI-style chat
completions JSON over HTTPS; the mock transports in :mod:`dprecon.mocks`
drive the same code paths hermetically.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import requests

from .errors import ConfigError, GatewayAuthError, GatewayError, GatewayRetryError

logger = logging.getLogger(__name__)

_RETRYABLE_STATUS = {408, 429, 500, 502, 503, 504}
_AUTH_STATUS = {401, 403}


@dataclass(frozen=True)
class ChatRequest:
    """One chat-completion call, hashable over every field.

    ``attempt`` distinguishes deliberate re-asks of an otherwise identical
    request (for example judge retries); bumping it yields a fresh cache
    entry, so replays stay deterministic.
    """

    model: str
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    max_tokens: int | None = None
    attempt: int = 0

    def __post_init__(self):
        for role, _ in self.messages:
            if role not in ("system", "user", "assistant"):
                raise GatewayError(f"invalid message role {role!r}")

    def payload(self) -> dict:
        body = {
            "model": self.model,
            "messages": [{"role": r, "content": c} for r, c in self.messages],
            "temperature": self.temperature,
        }
        if self.max_tokens is not None:
            body["max_tokens"] = self.max_tokens
        return body

    def request_hash(self) -> str:
        canon = json.dumps(
            {
                "model": self.model,
                "messages": list(self.messages),
                "temperature": self.temperature,
                "max_tokens": self.max_tokens,
                "attempt": self.attempt,
            },
            sort_keys=True,
            ensure_ascii=False,
        )
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


@dataclass
class ChatResponse:
    content: str
    finish_reason: str = "stop"
    usage: dict = field(default_factory=dict)
    latency: float = 0.0
    source: str = "network"


@dataclass
class RetryPolicy:
    max_retries: int = 3
    backoff_base: float = 0.5
    backoff_max: float = 8.0

    def delay(self, attempt: int) -> float:
        """Backoff before retry ``attempt`` (1-based), deterministic."""
        return min(self.backoff_max, self.backoff_base * (2 ** (attempt - 1)))


class HttpTransport:
    """Default transport posting OpenAI-style chat JSON."""

    def __init__(self, timeout: float = 120.0):
        self.timeout = timeout
        self._session = requests.Session()

    def __call__(self, url: str, payload: dict, headers: dict) -> tuple[int, dict]:
        resp = self._session.post(url, json=payload, headers=headers, timeout=self.timeout)
        try:
            body = resp.json()
        except ValueError:
            body = {"raw": resp.text}
        return resp.status_code, body


def validate_chat_payload(payload: dict) -> None:
    """Schema check for an outgoing chat-completion request body.

    Raises GatewayError on a malformed payload. Servers claiming wire
    compatibility must accept everything this admits.
    """
    if not isinstance(payload.get("model"), str):
        raise GatewayError("payload.model must be a string")
    messages = payload.get("messages")
    if not isinstance(messages, list) or not messages:
        raise GatewayError("payload.messages must be a nonempty list")
    for msg in messages:
        if not isinstance(msg, dict):
            raise GatewayError("each message must be an object")
        if msg.get("role") not in ("system", "user", "assistant"):
            raise GatewayError(f"invalid message role {msg.get('role')!r}")
        if not isinstance(msg.get("content"), str):
            raise GatewayError("message content must be a string")
    if not isinstance(payload.get("temperature"), (int, float)):
        raise GatewayError("payload.temperature must be a number")
    if "max_tokens" in payload and not isinstance(payload["max_tokens"], int):
        raise GatewayError("payload.max_tokens must be an integer")


def validate_chat_completion(body: dict) -> str:
    """Extract the completion text from a chat-completion response body."""
    try:
        choices = body["choices"]
        content = choices[0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise GatewayError(f"malformed chat completion response: {exc}") from exc
    if not isinstance(content, str):
        raise GatewayError("completion content must be a string")
    return content


@dataclass
class EndpointConfig:
    base_url: str = ""
    api_key_env: str = ""
    transport: object | None = None


class ChatGateway:
    """Uniform entry point for every chat-completion call in the toolkit.

    One gateway serves many model ids; each model id maps to an endpoint
    (URL + credential env var) or to an injected transport. Concurrency is
    bounded by a semaphore, and concurrent identical requests are coalesced
    into a single network call per request hash.
    """

    def __init__(
        self,
        endpoints: dict[str, EndpointConfig],
        cache_dir: str | Path,
        retry: RetryPolicy | None = None,
        concurrency: int = 8,
        sleep_fn=time.sleep,
        clock=time.monotonic,
    ):
        if concurrency < 1:
            raise ConfigError("concurrency must be at least 1")
        self.endpoints = endpoints
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.retry = retry or RetryPolicy()
        self.concurrency = concurrency
        self._sleep = sleep_fn
        self._clock = clock
        self._semaphore = threading.BoundedSemaphore(concurrency)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()
        self._default_transport = HttpTransport()

    def _endpoint(self, model: str) -> EndpointConfig:
        try:
            return self.endpoints[model]
        except KeyError:
            raise ConfigError(f"no endpoint configured for model {model!r}") from None

    def _cache_path(self, request_hash: str) -> Path:
        return self.cache_dir / f"{request_hash}.json"

    def _read_cache(self, request_hash: str) -> ChatResponse | None:
        path = self._cache_path(request_hash)
        if not path.exists():
            return None
        entry = json.loads(path.read_text(encoding="utf-8"))
        stored = entry["response"]
        return ChatResponse(
            content=stored["content"],
            finish_reason=stored.get("finish_reason", "stop"),
            usage=stored.get("usage", {}),
            latency=stored.get("latency", 0.0),
            source="cache",
        )

    def _write_cache(self, request: ChatRequest, request_hash: str, response: ChatResponse):
        entry = {
            "request": {
                "model": request.model,
                "messages": list(request.messages),
                "temperature": request.temperature,
                "max_tokens": request.max_tokens,
                "attempt": request.attempt,
            },
            "response": {
                "content": response.content,
                "finish_reason": response.finish_reason,
                "usage": response.usage,
                "latency": response.latency,
            },
        }
        # Atomic write: never leave a half-written entry for a concurrent reader.
        fd, tmp = tempfile.mkstemp(dir=self.cache_dir, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(entry, fh, ensure_ascii=False)
        os.replace(tmp, self._cache_path(request_hash))

    def _hash_lock(self, request_hash: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(request_hash, threading.Lock())

    def complete_chat(self, request: ChatRequest, policy: RetryPolicy | None = None) -> ChatResponse:
        """Serve from cache, or send with bounded retries and store."""
        request_hash = request.request_hash()
        cached = self._read_cache(request_hash)
        if cached is not None:
            return cached
        with self._hash_lock(request_hash):
            cached = self._read_cache(request_hash)
            if cached is not None:
                return cached
            response = self._send(request, policy or self.retry)
            self._write_cache(request, request_hash, response)
            return response

    def _send(self, request: ChatRequest, policy: RetryPolicy) -> ChatResponse:
        endpoint = self._endpoint(request.model)
        transport = endpoint.transport or self._default_transport
        headers = {"Content-Type": "application/json"}
        if endpoint.api_key_env:
            key = os.environ.get(endpoint.api_key_env, "")
            if not key:
                raise GatewayAuthError(
                    f"credential env var {endpoint.api_key_env} is not set"
                )
            headers["Authorization"] = f"Bearer {key}"
        payload = request.payload()
        validate_chat_payload(payload)
        attempts = 0
        while True:
            attempts += 1
            started = self._clock()
            with self._semaphore:
                try:
                    status, body = transport(endpoint.base_url, payload, headers)
                except (requests.Timeout, requests.ConnectionError, TimeoutError, ConnectionError, OSError) as exc:
                    status, body = None, {"error": str(exc)}
            latency = self._clock() - started
            if status is not None and status in _AUTH_STATUS:
                raise GatewayAuthError(
                    f"endpoint rejected credentials for model {request.model!r} (HTTP {status})"
                )
            if status == 200:
                content = validate_chat_completion(body)
                return ChatResponse(
                    content=content,
                    finish_reason=(body.get("choices") or [{}])[0].get("finish_reason", "stop"),
                    usage=body.get("usage", {}),
                    latency=latency,
                    source="network",
                )
            if status is not None and status not in _RETRYABLE_STATUS:
                raise GatewayError(
                    f"endpoint returned HTTP {status} for model {request.model!r}"
                )
            if attempts > policy.max_retries:
                raise GatewayRetryError(
                    f"gave up after {attempts} attempt(s) for model {request.model!r}",
                    attempts=attempts,
                )
            self._sleep(policy.delay(attempts))
