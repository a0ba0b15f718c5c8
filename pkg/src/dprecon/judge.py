"""LLM-as-judge similarity scoring.

A chat model is shown the original and the reconstructed text and asked for
a 0..10 match-rate score of the key information. The reply is parsed for
the first standalone integer in range; floats are rejected. Parse failures
are retried with a fresh request, and a document whose retries are
exhausted gets an undefined score (excluded from means, counted).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import ConfigError, GatewayError
from .gateway import ChatGateway, ChatRequest

DEFAULT_JUDGE_TEMPLATE = (
    "Assume you are a helpful assistant. Your task is to analyze the match rate of "
    "the key information (e.g., time, place, person) in two documents. Based on your "
    "assessment, assign the response a numerical score ranging from 0 (low similarity) "
    "to 10 (high similarity). [Example] User: Text1: {text1} Text2: {text2} "
    "Assistant: {score}"
)

_INT_TOKEN_RE = re.compile(r"(?<![\d.\-])\d+(?:\.\d+)?")


@dataclass
class JudgeConfig:
    model: str
    system_template: str = DEFAULT_JUDGE_TEMPLATE
    max_retries: int = 2
    low: int = 0
    high: int = 10

    def __post_init__(self):
        if "{text1}" not in self.system_template or "{text2}" not in self.system_template:
            raise ConfigError("judge template must mention both {text1} and {text2}")
        if not (0 <= self.low < self.high):
            raise ConfigError("invalid judge score range")


def parse_score(reply: str, low: int = 0, high: int = 10) -> int | None:
    """First standalone integer in [low, high], or None."""
    for match in _INT_TOKEN_RE.finditer(reply):
        token = match.group()
        if "." in token:
            continue
        value = int(token)
        if low <= value <= high:
            return value
    return None


def judge_score(
    original: str, reconstructed: str, gateway: ChatGateway, config: JudgeConfig
) -> int | None:
    """Similarity score in [0, 10], or None after exhausted retries.

    The system template is sent verbatim (its slots are part of the
    instruction); the texts travel in the user turn. Each retry carries a
    bumped attempt counter so it is a distinct cached request.
    """
    user = f"Text1: {original} Text2: {reconstructed}"
    for attempt in range(config.max_retries + 1):
        request = ChatRequest(
            model=config.model,
            messages=(("system", config.system_template), ("user", user)),
            temperature=0.0,
            attempt=attempt,
        )
        try:
            reply = gateway.complete_chat(request).content
        except GatewayError:
            continue
        value = parse_score(reply, config.low, config.high)
        if value is not None:
            return value
    return None
