"""Corpus ingestion, truncation, and deterministic splitting."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import CorpusError


@dataclass
class Document:
    id: str
    text: str
    source: str = ""

    def __post_init__(self):
        if not self.text:
            raise CorpusError(f"document {self.id!r} has empty text")


@dataclass
class SplitSpec:
    train: int
    validation: int
    test: int
    seed: int = 0

    def total(self) -> int:
        return self.train + self.validation + self.test


def load_corpus(path) -> list[Document]:
    """Read a JSONL corpus; each line needs "text", "id" is optional.

    Missing ids are assigned as zero-padded line numbers. Input order is
    preserved.
    """
    docs: list[Document] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}: malformed JSON on line {lineno}: {exc}") from exc
            if not isinstance(obj, dict) or "text" not in obj:
                raise CorpusError(f"{path}: line {lineno} lacks a \"text\" field")
            doc_id = str(obj.get("id", f"{lineno - 1:06d}"))
            docs.append(Document(id=doc_id, text=obj["text"], source=obj.get("source", "")))
    ids = [d.id for d in docs]
    if len(set(ids)) != len(ids):
        raise CorpusError(f"{path}: duplicate document ids")
    return docs


def save_corpus(docs: list[Document], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            obj = {"id": doc.id, "text": doc.text}
            if doc.source:
                obj["source"] = doc.source
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def truncate_doc(doc: Document, max_words: int) -> Document:
    """Keep the first ``max_words`` whitespace-delimited words. Idempotent."""
    if max_words < 1:
        raise CorpusError("max_words must be at least 1")
    words = doc.text.split()
    if len(words) <= max_words:
        return doc
    return Document(id=doc.id, text=" ".join(words[:max_words]), source=doc.source)


def split_corpus(
    docs: list[Document], spec: SplitSpec
) -> tuple[list[Document], list[Document], list[Document]]:
    """Seeded uniform shuffle, then contiguous train/validation/test slices."""
    if spec.total() > len(docs):
        raise CorpusError(
            f"split sizes sum to {spec.total()} but corpus has only {len(docs)} documents"
        )
    order = np.random.default_rng(spec.seed).permutation(len(docs))
    shuffled = [docs[i] for i in order]
    train = shuffled[: spec.train]
    validation = shuffled[spec.train : spec.train + spec.validation]
    test = shuffled[spec.train + spec.validation : spec.total()]
    return train, validation, test
