"""Pair dataset loading and batching.

Consumes the (sanitized, original, separator) JSONL emitted by the attack
toolkit's pair exporter; the schema is the interface, nothing else is
shared. Each pair becomes one training sequence
``<bos> sanitized <sep-words> original <eos>``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import torch

from .tokenizer import WordTokenizer


@dataclass
class Pair:
    sanitized: str
    original: str
    separator: str
    doc_id: str = ""

    @property
    def concatenated(self) -> str:
        return self.sanitized + self.separator + self.original


def read_pairs(path) -> list[Pair]:
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                pairs.append(
                    Pair(
                        sanitized=obj["sanitized"],
                        original=obj["original"],
                        separator=obj["separator"],
                        doc_id=obj.get("doc_id", ""),
                    )
                )
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValueError(f"{path}: bad pair on line {lineno}: {exc}") from exc
    return pairs


def build_tokenizer(pairs: list[Pair]) -> WordTokenizer:
    return WordTokenizer.from_texts(p.concatenated for p in pairs)


@dataclass
class EncodedPair:
    ids: list[int]
    prefix_len: int  # tokens up to and including the separator


def encode_pairs(
    pairs: list[Pair], tokenizer: WordTokenizer, max_seq_len: int
) -> tuple[list[EncodedPair], int]:
    """Token sequences for training; overlong pairs are dropped and counted."""
    encoded: list[EncodedPair] = []
    dropped = 0
    for pair in pairs:
        prefix = tokenizer.encode(pair.sanitized + pair.separator, bos=True)
        full = prefix + tokenizer.encode(pair.original, eos=True)
        if len(full) > max_seq_len:
            dropped += 1
            continue
        encoded.append(EncodedPair(ids=full, prefix_len=len(prefix)))
    return encoded, dropped


def collate(batch: list[EncodedPair], pad_id: int, mask_prefix: bool):
    """Batch tensors plus next-token targets; -100 marks ignored positions."""
    width = max(len(e.ids) for e in batch)
    ids = torch.full((len(batch), width), pad_id, dtype=torch.long)
    targets = torch.full((len(batch), width), -100, dtype=torch.long)
    for row, enc in enumerate(batch):
        seq = torch.tensor(enc.ids, dtype=torch.long)
        ids[row, : len(seq)] = seq
        # position i predicts token i+1; the whole sequence contributes by
        # default, including the sanitized prefix
        targets[row, : len(seq) - 1] = seq[1:]
        if mask_prefix:
            targets[row, : enc.prefix_len - 1] = -100
    return ids, targets
