"""Sentence-level DP via paraphrasing.

Two backends share one record format:

* ``dp_decode`` is the exact mechanism: per-step full-vocabulary logits are
  norm-clipped to C, turned into a distribution by a temperature-T softmax,
  and sampled. The token sampling instantiates the exponential mechanism,
  and emitting m tokens composes to a 2mC/T local-DP budget.
* ``api_paraphrase`` is the practical mode against a hosted chat model:
  a paraphrase instruction sent at sampling temperature T, with no clipping
  (hosted endpoints expose no logits to clip).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np
import requests

from .errors import ProviderError, SanitizeError
from .gateway import ChatGateway, ChatRequest
from .records import SanitizationRecord

DEFAULT_PARAPHRASE_TEMPLATE = "Paraphrase the following text: {text}"


@dataclass
class SentenceDpConfig:
    temperature: float = 1.5
    clip_bound: float = 50.0
    max_tokens: int = 64
    paraphrase_template: str = DEFAULT_PARAPHRASE_TEMPLATE
    provider_retries: int = 2

    def __post_init__(self):
        if self.temperature <= 0:
            raise SanitizeError("temperature must be positive")
        if self.clip_bound <= 0:
            raise SanitizeError("clip bound must be positive")
        if self.max_tokens < 1:
            raise SanitizeError("max_tokens must be at least 1")
        if self.paraphrase_template.count("{text}") != 1:
            raise SanitizeError("paraphrase template needs exactly one {text} slot")


@runtime_checkable
class LogitProvider(Protocol):
    """Next-token logits over a full vocabulary for a given prefix.

    ``next_logits`` must return a vector of length ``vocab_size`` and be
    deterministic for a fixed prefix. Providers that renormalize to a top-k
    subset must advertise ``returns_full_vocab = False``; they are rejected
    because clipping needs the true logit norm.
    """

    vocab_size: int
    eos_id: int | None

    def encode(self, text: str) -> list[int]: ...

    def decode(self, token_id: int) -> str: ...

    def next_logits(self, prefix: list[int]) -> np.ndarray: ...


def clip_logits(u: np.ndarray, clip_bound: float) -> np.ndarray:
    """Rescale ``u`` to Euclidean norm at most ``clip_bound``.

    Returns u * min(1, C/|u|); vectors already inside the ball (including
    the zero vector) are returned unchanged.
    """
    if clip_bound <= 0:
        raise SanitizeError("clip bound must be positive")
    u = np.asarray(u, dtype=np.float64)
    if not np.all(np.isfinite(u)):
        raise SanitizeError("logits must be finite")
    norm = float(np.linalg.norm(u))
    if norm <= clip_bound:
        return u
    return u * (clip_bound / norm)


def temperature_distribution(u: np.ndarray, temperature: float) -> np.ndarray:
    """Softmax of u / T, computed with max-subtraction for stability."""
    if temperature <= 0:
        raise SanitizeError("temperature must be positive")
    u = np.asarray(u, dtype=np.float64) / temperature
    u = u - u.max()
    exp = np.exp(u)
    return exp / exp.sum()


def ldp_budget(tokens: int, clip_bound: float, temperature: float) -> float:
    """Local-DP budget 2mC/T consumed by emitting ``tokens`` sampled tokens.

    Each exponential-mechanism draw over clipped logits contributes 2C/T;
    the per-token budgets compose additively. Zero tokens consume zero.
    """
    if tokens < 0:
        raise SanitizeError("token count must be non-negative")
    if clip_bound <= 0 or temperature <= 0:
        raise SanitizeError("clip bound and temperature must be positive")
    return 2.0 * tokens * clip_bound / temperature


def _provider_logits(provider: LogitProvider, prefix: list[int], retries: int) -> np.ndarray:
    attempts = 0
    while True:
        attempts += 1
        try:
            return np.asarray(provider.next_logits(prefix), dtype=np.float64)
        except Exception as exc:
            if attempts > retries:
                raise ProviderError(
                    f"logit provider failed after {attempts} attempt(s): {exc}",
                    attempts=attempts,
                ) from exc


def dp_decode(
    text: str,
    provider: LogitProvider,
    config: SentenceDpConfig,
    rng: np.random.Generator,
    doc_id: str = "",
    timestamp: str = "",
) -> SanitizationRecord:
    """Paraphrase ``text`` with the exact clipped exponential mechanism.

    Decodes up to ``config.max_tokens`` tokens, stopping early on the
    provider's end-of-sequence token. Only tokens actually emitted count
    toward the reported budget.
    """
    if not getattr(provider, "returns_full_vocab", True):
        raise SanitizeError("provider renormalizes to top-k; the exact backend needs full logits")
    prompt = config.paraphrase_template.replace("{text}", text)
    prefix = list(provider.encode(prompt))
    pieces: list[str] = []
    emitted = 0
    for _ in range(config.max_tokens):
        logits = _provider_logits(provider, prefix, config.provider_retries)
        if logits.shape != (provider.vocab_size,):
            raise SanitizeError(
                f"provider returned {logits.shape[0] if logits.ndim == 1 else logits.shape} "
                f"logits for vocab_size {provider.vocab_size}"
            )
        probs = temperature_distribution(
            clip_logits(logits, config.clip_bound), config.temperature
        )
        token = int(rng.choice(provider.vocab_size, p=probs / probs.sum()))
        if provider.eos_id is not None and token == provider.eos_id:
            break
        pieces.append(provider.decode(token))
        prefix.append(token)
        emitted += 1
    return SanitizationRecord(
        doc_id=doc_id,
        original=text,
        sanitized="".join(pieces).strip(),
        mechanism="sentence_level_exact",
        budget=config.temperature,
        timestamp=timestamp,
        tokens_emitted=emitted,
        template_hash=template_hash(config.paraphrase_template),
    )


def template_hash(template: str) -> str:
    return hashlib.sha256(template.encode("utf-8")).hexdigest()[:12]


def api_paraphrase(
    text: str,
    gateway: ChatGateway,
    temperature: float,
    template: str = DEFAULT_PARAPHRASE_TEMPLATE,
    model: str = "",
    doc_id: str = "",
    max_tokens: int | None = None,
    timestamp: str = "",
) -> SanitizationRecord:
    """Paraphrase through a chat endpoint at sampling temperature T.

    No clipping is applied; the temperature is the entire knob, matching how
    the mechanism is run against hosted models.
    """
    if temperature <= 0:
        raise SanitizeError("temperature must be positive")
    if template.count("{text}") != 1:
        raise SanitizeError("paraphrase template needs exactly one {text} slot")
    content = ""
    for attempt in range(2):
        request = ChatRequest(
            model=model,
            messages=(("user", template.replace("{text}", text)),),
            temperature=temperature,
            max_tokens=max_tokens,
            attempt=attempt,
        )
        content = gateway.complete_chat(request).content
        if content.strip():
            break
    if not content.strip():
        raise SanitizeError(f"empty paraphrase completion for doc {doc_id!r}")
    return SanitizationRecord(
        doc_id=doc_id,
        original=text,
        sanitized=content,
        mechanism="sentence_level_api",
        budget=temperature,
        timestamp=timestamp,
        template_hash=template_hash(template),
    )


class HttpLogitProvider:
    """LogitProvider backed by a local inference server over HTTP.

    Wire format: GET  {base}/meta             -> {"vocab_size", "eos_id"}
                 POST {base}/encode {"text"}  -> {"ids": [...]}
                 POST {base}/decode {"id"}    -> {"text": "..."}
                 POST {base}/logits {"prefix": [...]} -> {"logits": [...]}
    """

    returns_full_vocab = True

    def __init__(self, base_url: str, timeout: float = 30.0, session=None):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self._http = session or requests.Session()
        meta = self._http.get(f"{self.base_url}/meta", timeout=self.timeout).json()
        self.vocab_size = int(meta["vocab_size"])
        self.eos_id = meta.get("eos_id")
        self._decode_cache: dict[int, str] = {}

    def encode(self, text: str) -> list[int]:
        resp = self._http.post(
            f"{self.base_url}/encode", json={"text": text}, timeout=self.timeout
        )
        resp.raise_for_status()
        return list(resp.json()["ids"])

    def decode(self, token_id: int) -> str:
        if token_id not in self._decode_cache:
            resp = self._http.post(
                f"{self.base_url}/decode", json={"id": int(token_id)}, timeout=self.timeout
            )
            resp.raise_for_status()
            self._decode_cache[token_id] = resp.json()["text"]
        return self._decode_cache[token_id]

    def next_logits(self, prefix: list[int]) -> np.ndarray:
        resp = self._http.post(
            f"{self.base_url}/logits", json={"prefix": list(prefix)}, timeout=self.timeout
        )
        resp.raise_for_status()
        return np.asarray(resp.json()["logits"], dtype=np.float64)
