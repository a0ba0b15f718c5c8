"""PII sequence extraction and normalization.

All reconstruction metrics compare sets of (class, normalized surface)
pairs extracted from the original, sanitized, and reconstructed texts. Two
taggers produce them: a deterministic builtin rule tagger (regex rules for
numeric classes plus configurable gazetteers for named entities), which
keeps the whole test suite hermetic, and an adapter for an external NER
service for fidelity runs.

Extracted spans are never persisted as auxiliary attack knowledge.
"""

from __future__ import annotations

import json
import logging
import re
import unicodedata
from dataclasses import dataclass
from enum import Enum

import requests

from .errors import NerMappingError, NerTransportError

logger = logging.getLogger(__name__)


class PiiClass(str, Enum):
    CARDINAL = "cardinal"
    DATE = "date"
    EVENT = "event"
    FAC = "fac"
    GPE = "gpe"
    LANGUAGE = "language"
    LAW = "law"
    LOC = "loc"
    MONEY = "money"
    NORP = "norp"
    ORDINAL = "ordinal"
    ORG = "org"
    PERCENT = "percent"
    PERSON = "person"
    PRODUCT = "product"
    QUANTITY = "quantity"
    TIME = "time"
    WORK_OF_ART = "work_of_art"


@dataclass(frozen=True)
class PiiSpan:
    surface: str
    pii_class: PiiClass
    start: int
    end: int

    def __post_init__(self):
        if self.start >= self.end:
            raise ValueError("span start must precede end")


PiiSet = frozenset  # of (PiiClass, normalized surface) pairs

_WS_RE = re.compile(r"\s+")
_PUNCT_EDGE_RE = re.compile(r"^[\W_]+|[\W_]+$", re.UNICODE)


def normalize_pii(span: PiiSpan) -> tuple[PiiClass, str]:
    """Matching key for a span: NFKC, lowercase, collapsed whitespace,
    stripped edge punctuation. Idempotent."""
    text = unicodedata.normalize("NFKC", span.surface).lower()
    text = _WS_RE.sub(" ", text).strip()
    stripped = _PUNCT_EDGE_RE.sub("", text)
    # Keep fully-symbolic surfaces (e.g. money or percent strings would
    # otherwise lose their only characters).
    if stripped:
        text = stripped
    return (span.pii_class, text)


def pii_set(spans) -> PiiSet:
    return frozenset(normalize_pii(s) for s in spans)


def extract_pii(text: str, tagger) -> list[PiiSpan]:
    """Non-overlapping PII spans for ``text`` under the given tagger."""
    return tagger.tag(text)


# --- builtin rule tagger -----------------------------------------------------

_MONTHS = (
    "january|february|march|april|may|june|july|august|september|october|november|december"
)
_WORD_ORDINALS = (
    "first|second|third|fourth|fifth|sixth|seventh|eighth|ninth|tenth|eleventh|twelfth|"
    "twentieth|thirtieth|fortieth|fiftieth|hundredth"
)
_UNITS = (
    "metres?|meters?|kilometres?|kilometers?|km|miles?|kg|kilograms?|grams?|tonnes?|"
    "pounds?|feet|foot|inches|inch|cm|mm|litres?|liters?|acres?|hectares?"
)

_NUM = r"\d[\d,]*(?:\.\d+)?"

# (class, regex, priority); lower priority wins on equal-length overlap.
_NUMERIC_RULES: list[tuple[PiiClass, re.Pattern, int]] = [
    (PiiClass.TIME, re.compile(r"\b\d{1,2}:\d{2}(?::\d{2})?(?:\s?[ap]\.?m\.?)?", re.I), 1),
    (PiiClass.PERCENT, re.compile(rf"{_NUM}\s?(?:%|percent)", re.I), 1),
    (PiiClass.MONEY, re.compile(rf"[€$£¥]\s?{_NUM}(?:\s?(?:million|billion|trillion))?", re.I), 1),
    (PiiClass.QUANTITY, re.compile(rf"\b{_NUM}\s(?:{_UNITS})\b", re.I), 1),
    (PiiClass.DATE, re.compile(rf"\b\d{{1,2}}\s(?:{_MONTHS})\s\d{{4}}\b", re.I), 2),
    (PiiClass.DATE, re.compile(rf"\b(?:{_MONTHS})\s\d{{1,2}},?\s\d{{4}}\b", re.I), 2),
    (PiiClass.DATE, re.compile(rf"\b(?:{_MONTHS})\s\d{{4}}\b", re.I), 2),
    (PiiClass.DATE, re.compile(r"\b\d{4}-\d{2}-\d{2}\b"), 2),
    (PiiClass.DATE, re.compile(r"\b\d{1,2}/\d{1,2}/\d{4}\b"), 2),
    (PiiClass.DATE, re.compile(r"\b(?:1[5-9]\d{2}|20\d{2})s?\b"), 3),
    (PiiClass.ORDINAL, re.compile(rf"\b(?:\d+(?:st|nd|rd|th)|{_WORD_ORDINALS})\b", re.I), 3),
    (PiiClass.CARDINAL, re.compile(rf"\b{_NUM}\b"), 4),
]

# Classes a gazetteer may populate; numeric classes come from the rules.
_GAZETTEER_CLASSES = {
    PiiClass.PERSON, PiiClass.GPE, PiiClass.ORG, PiiClass.LOC, PiiClass.NORP,
    PiiClass.EVENT, PiiClass.FAC, PiiClass.LANGUAGE, PiiClass.LAW,
    PiiClass.PRODUCT, PiiClass.WORK_OF_ART,
}


class BuiltinRuleTagger:
    """Deterministic tagger: numeric regex rules plus gazetteer phrases.

    Gazetteer matching is case-insensitive on word boundaries so that
    lowercased sanitizer output still matches. Overlaps resolve to the
    longest span, then to gazetteer over numeric rules, then left to right.
    """

    def __init__(self, gazetteers: dict | None = None):
        self.gazetteers: dict[PiiClass, list[str]] = {}
        self._gazetteer_res: list[tuple[PiiClass, re.Pattern]] = []
        for key, entries in (gazetteers or {}).items():
            cls = PiiClass(key)
            if cls not in _GAZETTEER_CLASSES:
                raise NerMappingError(f"class {cls.value} is rule-based, not gazetteer-based")
            entries = [e for e in entries if e.strip()]
            self.gazetteers[cls] = entries
            for entry in entries:
                pattern = re.compile(rf"(?<!\w){re.escape(entry)}(?!\w)", re.I)
                self._gazetteer_res.append((cls, pattern))

    def tag(self, text: str) -> list[PiiSpan]:
        candidates: list[tuple[int, int, int, PiiClass]] = []
        for cls, pattern in self._gazetteer_res:
            for m in pattern.finditer(text):
                candidates.append((m.start(), m.end(), 0, cls))
        for cls, pattern, priority in _NUMERIC_RULES:
            for m in pattern.finditer(text):
                candidates.append((m.start(), m.end(), priority, cls))
        # Longest span first, gazetteer before numeric on equal length.
        candidates.sort(key=lambda c: (-(c[1] - c[0]), c[2], c[0]))
        taken: list[tuple[int, int]] = []
        spans: list[PiiSpan] = []
        for start, end, _, cls in candidates:
            if any(start < t_end and end > t_start for t_start, t_end in taken):
                continue
            taken.append((start, end))
            spans.append(PiiSpan(text[start:end], cls, start, end))
        spans.sort(key=lambda s: s.start)
        return spans


# --- external NER service adapter -------------------------------------------

DEFAULT_LABEL_MAP = {
    "PER": "person", "PERSON": "person",
    "LOC": "loc", "LOCATION": "loc",
    "GPE": "gpe",
    "ORG": "org", "ORGANIZATION": "org",
    "DATE": "date", "TIME": "time",
    "MONEY": "money", "PERCENT": "percent",
    "CARDINAL": "cardinal", "ORDINAL": "ordinal", "QUANTITY": "quantity",
    "EVENT": "event", "FAC": "fac", "LANGUAGE": "language", "LAW": "law",
    "NORP": "norp", "PRODUCT": "product", "WORK_OF_ART": "work_of_art",
}


def load_label_map(path) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


class ExternalNerTagger:
    """Adapter for an HTTP NER service.

    Wire format: POST {base_url} {"text": ...} ->
    {"entities": [{"text", "label", "start", "end"}, ...]}. Labels are
    mapped onto PiiClass through ``label_map``; unknown labels are dropped
    with a warning and counted on ``dropped_label_count``.
    """

    def __init__(self, base_url: str, label_map: dict[str, str] | None = None,
                 timeout: float = 30.0, session=None):
        self.base_url = base_url
        self.label_map = dict(DEFAULT_LABEL_MAP if label_map is None else label_map)
        self.timeout = timeout
        self._http = session or requests.Session()
        self.dropped_label_count = 0

    def tag(self, text: str) -> list[PiiSpan]:
        try:
            resp = self._http.post(self.base_url, json={"text": text}, timeout=self.timeout)
        except (requests.ConnectionError, requests.Timeout, OSError) as exc:
            raise NerTransportError(f"NER service unreachable at {self.base_url}: {exc}") from exc
        if resp.status_code != 200:
            raise NerTransportError(f"NER service returned HTTP {resp.status_code}")
        try:
            entities = resp.json()["entities"]
        except (ValueError, KeyError) as exc:
            raise NerMappingError(f"unusable NER response: {exc}") from exc
        spans: list[PiiSpan] = []
        for ent in entities:
            try:
                label, surface = ent["label"], ent["text"]
                start, end = int(ent["start"]), int(ent["end"])
            except (KeyError, TypeError, ValueError) as exc:
                raise NerMappingError(f"malformed entity {ent!r}: {exc}") from exc
            mapped = self.label_map.get(label)
            if mapped is None:
                self.dropped_label_count += 1
                logger.warning("dropping span with unknown NER label %r", label)
                continue
            spans.append(PiiSpan(surface, PiiClass(mapped), start, end))
        return spans
