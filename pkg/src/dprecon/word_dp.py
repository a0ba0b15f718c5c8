"""Word-level metric-DP sanitizer.

Each word token is mapped to its embedding, perturbed with isotropic
multivariate Laplace noise calibrated to the budget epsilon, and replaced by
the vocabulary word nearest to the noisy point. Tokens without an embedding
and punctuation separators pass through unchanged, so the token count is
always preserved.

The noise law is the standard m-dimensional Laplace with density
proportional to exp(-epsilon * |z|): a radius drawn from
Gamma(shape=m, scale=1/epsilon) times a uniform direction on the unit
sphere. This is the distribution under which the mechanism's privacy bound
scales with Euclidean distance between word embeddings.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .embeddings import EmbeddingTable, nearest_indices
from .errors import SanitizeError
from .records import SanitizationRecord

# Characters peeled off token edges into separator tokens. Interior
# punctuation (apostrophes, hyphens) stays inside the word.
_EDGE_PUNCT = set("!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~…“”‘’«»¡¿")
_NO_SPACE_BEFORE = set(".,!?;:%)]}…'\"’”»")
_NO_SPACE_AFTER = set("([{“‘«¡¿")


@dataclass
class WordDpConfig:
    """Budget and replay parameters for the word-level mechanism."""

    epsilon: float
    dim: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise SanitizeError("epsilon must be positive")
        if self.dim < 1:
            raise SanitizeError("dim must be positive")


@dataclass
class TokenizedText:
    """Whitespace/punctuation tokenization with per-token flags.

    ``tokens`` keeps original casing; ``lower`` holds the lowercased copy
    used for embedding lookup. ``oov`` is filled in by the sanitizer.
    """

    tokens: list[str] = field(default_factory=list)
    is_word: list[bool] = field(default_factory=list)
    lower: list[str] = field(default_factory=list)
    oov: list[bool] = field(default_factory=list)

    def word_tokens(self) -> list[str]:
        return [t for t, w in zip(self.tokens, self.is_word) if w]


def tokenize(text: str) -> TokenizedText:
    """Split on whitespace, peeling edge punctuation into separator tokens."""
    out = TokenizedText()

    def _push(token: str, is_word: bool):
        out.tokens.append(token)
        out.is_word.append(is_word)
        out.lower.append(token.lower() if is_word else token)
        out.oov.append(False)

    for chunk in text.split():
        lead: list[str] = []
        trail: list[str] = []
        while chunk and chunk[0] in _EDGE_PUNCT:
            lead.append(chunk[0])
            chunk = chunk[1:]
        while chunk and chunk[-1] in _EDGE_PUNCT:
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        for p in lead:
            _push(p, False)
        if chunk:
            _push(chunk, True)
        for p in reversed(trail):
            _push(p, False)
    return out


def detokenize(tokens: list[str], is_word: list[bool]) -> str:
    """Join tokens back into text, reattaching punctuation separators."""
    parts: list[str] = []
    glue_next = False
    for token, word in zip(tokens, is_word):
        if not parts:
            parts.append(token)
        elif (not word and token and token[0] in _NO_SPACE_BEFORE) or glue_next:
            parts.append(token)
        else:
            parts.append(" " + token)
        glue_next = not word and bool(token) and token[-1] in _NO_SPACE_AFTER
    return "".join(parts)


def sample_laplace_noise(
    epsilon: float, dim: int, rng: np.random.Generator, size: int | None = None
) -> np.ndarray:
    """Draw from the m-dimensional Laplace density p(z) ~ exp(-epsilon |z|).

    Returns a single ``dim``-vector, or a ``(size, dim)`` matrix when
    ``size`` is given. The radius is Gamma(shape=dim, scale=1/epsilon), so
    E|z| = dim / epsilon; the direction is uniform on the unit sphere.
    """
    if epsilon <= 0:
        raise SanitizeError("epsilon must be positive")
    if dim < 1:
        raise SanitizeError("dim must be positive")
    n = 1 if size is None else int(size)
    radius = rng.gamma(shape=dim, scale=1.0 / epsilon, size=n)
    direction = rng.standard_normal((n, dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    noise = radius[:, None] * direction
    return noise[0] if size is None else noise


def rng_for_doc(seed: int, doc_id: str) -> np.random.Generator:
    """Independent, reproducible RNG stream for one document.

    Derived from (seed, sha256(doc_id)) so parallel and serial runs over the
    same corpus produce identical output.
    """
    digest = hashlib.sha256(doc_id.encode("utf-8")).digest()
    return np.random.default_rng([seed, int.from_bytes(digest[:8], "little")])


def sanitize_word_level(
    text: str,
    table: EmbeddingTable,
    config: WordDpConfig,
    doc_id: str = "",
    rng: np.random.Generator | None = None,
    timestamp: str = "",
) -> SanitizationRecord:
    """Apply the word-level mechanism to one document.

    Every in-vocabulary word token is independently perturbed and re-projected
    onto the vocabulary; out-of-vocabulary tokens and separators are emitted
    verbatim and counted. Replacements are emitted in vocabulary casing.
    """
    if config.dim != table.dim:
        raise SanitizeError(
            f"config dim {config.dim} does not match table dim {table.dim}"
        )
    if rng is None:
        rng = rng_for_doc(config.seed, doc_id)
    toks = tokenize(text)
    in_vocab = [
        i for i, (w, low) in enumerate(zip(toks.is_word, toks.lower)) if w and low in table
    ]
    in_vocab_set = set(in_vocab)
    for i, word in enumerate(toks.is_word):
        toks.oov[i] = word and i not in in_vocab_set
    out_tokens = list(toks.tokens)
    if in_vocab:
        base = table.vectors[[table.word_index[toks.lower[i]] for i in in_vocab]]
        noise = sample_laplace_noise(config.epsilon, config.dim, rng, size=len(in_vocab))
        replacement_rows = nearest_indices(table, base + noise)
        for i, row in zip(in_vocab, replacement_rows):
            out_tokens[i] = table.words[row]
    assert len(out_tokens) == len(toks.tokens)
    return SanitizationRecord(
        doc_id=doc_id,
        original=text,
        sanitized=detokenize(out_tokens, toks.is_word),
        mechanism="word_level",
        budget=config.epsilon,
        seed=config.seed,
        timestamp=timestamp,
        oov_count=sum(toks.oov),
    )
