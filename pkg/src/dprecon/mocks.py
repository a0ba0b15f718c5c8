"""Mock chat transports for hermetic runs.

These plug into :class:`dprecon.gateway.ChatGateway` in place of the HTTP
transport, so the full sanitize/attack/evaluate pipeline runs with zero
network access. The echo and memorizing transports model the two extremes
of an attacker's target: a model that knows nothing beyond the prompt, and
a model that has memorized a planted corpus.
"""

from __future__ import annotations

import re
import threading
from collections import defaultdict

_WORD_RE = re.compile(r"[a-z0-9']+")


def _token_set(text: str) -> frozenset[str]:
    return frozenset(_WORD_RE.findall(text.lower()))


def _last_user_content(payload: dict) -> str:
    for msg in reversed(payload.get("messages", [])):
        if msg.get("role") == "user":
            return msg.get("content", "")
    return ""


def _completion(content: str) -> dict:
    return {
        "choices": [
            {"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}
        ],
        "usage": {"prompt_tokens": 0, "completion_tokens": 0, "total_tokens": 0},
    }


class EchoTransport:
    """Replies with the last user message verbatim."""

    def __init__(self):
        self.calls = 0

    def __call__(self, url, payload, headers):
        self.calls += 1
        return 200, _completion(_last_user_content(payload))


class CannedTransport:
    """Replies with a fixed string, or cycles through a list of strings."""

    def __init__(self, replies):
        self._replies = [replies] if isinstance(replies, str) else list(replies)
        self._lock = threading.Lock()
        self.calls = 0

    def __call__(self, url, payload, headers):
        with self._lock:
            reply = self._replies[min(self.calls, len(self._replies) - 1)]
            self.calls += 1
        return 200, _completion(reply)


class MemorizingTransport:
    """Simulates a model that memorized a planted corpus.

    The reply is the planted original whose word set best matches the last
    user message (Jaccard similarity over lowercased word tokens, ties to
    the earliest document). An inverted index keeps lookups linear in the
    number of candidate documents actually sharing a token.
    """

    def __init__(self, originals: list[str], min_score: float = 0.0):
        self.originals = list(originals)
        self.min_score = min_score
        self._sets = [_token_set(t) for t in self.originals]
        self._index: dict[str, list[int]] = defaultdict(list)
        for i, toks in enumerate(self._sets):
            for tok in toks:
                self._index[tok].append(i)
        self.calls = 0

    def lookup(self, query: str) -> str:
        query_set = _token_set(query)
        overlap: dict[int, int] = defaultdict(int)
        for tok in query_set:
            for i in self._index.get(tok, ()):
                overlap[i] += 1
        best_doc, best_score = 0, -1.0
        for i, inter in overlap.items():
            union = len(query_set) + len(self._sets[i]) - inter
            score = inter / union if union else 0.0
            if score > best_score or (score == best_score and i < best_doc):
                best_doc, best_score = i, score
        if best_score < 0.0:
            best_doc, best_score = 0, 0.0
        if not self.originals or best_score < self.min_score:
            return ""
        return self.originals[best_doc]

    def __call__(self, url, payload, headers):
        self.calls += 1
        return 200, _completion(self.lookup(_last_user_content(payload)))


class FlakyTransport:
    """Fails the first ``fail_times`` calls, then delegates."""

    def __init__(self, inner, fail_times: int, status: int = 500):
        self.inner = inner
        self.fail_times = fail_times
        self.status = status
        self.calls = 0

    def __call__(self, url, payload, headers):
        self.calls += 1
        if self.calls <= self.fail_times:
            return self.status, {"error": "transient"}
        return self.inner(url, payload, headers)
