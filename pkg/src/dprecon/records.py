"""Provenance records emitted by the sanitizers and consumed by the attacks."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

from .errors import CorpusError

MECHANISMS = ("word_level", "sentence_level_exact", "sentence_level_api")


@dataclass
class SanitizationRecord:
    """One (original, sanitized) document pair with full replay provenance.

    ``budget`` is the word-level epsilon or the sentence-level temperature,
    depending on ``mechanism``. Records are append-only: downstream code
    never mutates them.
    """

    doc_id: str
    original: str
    sanitized: str
    mechanism: str
    budget: float
    seed: int | None = None
    timestamp: str = ""
    oov_count: int | None = None
    tokens_emitted: int | None = None
    template_hash: str | None = None

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.mechanism!r}")
        if self.budget is None:
            raise ValueError("budget must be populated")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SanitizationRecord":
        known = {f: data[f] for f in cls.__dataclass_fields__ if f in data}
        return cls(**known)


def write_records_jsonl(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), ensure_ascii=False) + "\n")


def read_records_jsonl(path) -> list[SanitizationRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(SanitizationRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, TypeError, ValueError) as exc:
                raise CorpusError(f"{path}: bad record on line {lineno}: {exc}") from exc
    return records
