"""Whitespace word tokenizer with special tokens.

The vocabulary is built from the training pairs themselves; anything unseen
at training time maps to <unk>. Decoding joins tokens with single spaces,
which round-trips whitespace-normalized text.
"""

from __future__ import annotations

from dataclasses import dataclass

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIALS = [PAD, BOS, EOS, UNK]


@dataclass
class WordTokenizer:
    vocab: list[str]

    def __post_init__(self):
        self.index = {tok: i for i, tok in enumerate(self.vocab)}
        self.pad_id = self.index[PAD]
        self.bos_id = self.index[BOS]
        self.eos_id = self.index[EOS]
        self.unk_id = self.index[UNK]

    @classmethod
    def from_texts(cls, texts) -> "WordTokenizer":
        seen: dict[str, None] = {}
        for text in texts:
            for word in text.split():
                seen.setdefault(word, None)
        return cls(SPECIALS + list(seen))

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def encode(self, text: str, bos: bool = False, eos: bool = False) -> list[int]:
        ids = [self.index.get(w, self.unk_id) for w in text.split()]
        if bos:
            ids = [self.bos_id] + ids
        if eos:
            ids = ids + [self.eos_id]
        return ids

    def decode(self, ids) -> str:
        words = []
        for i in ids:
            tok = self.vocab[int(i)]
            if tok in (PAD, BOS, EOS):
                continue
            words.append(tok)
        return " ".join(words)
