"""Word embedding table with exact nearest-neighbor lookup.

The table maps a vocabulary to fixed-dimension real vectors and answers
argmin-of-Euclidean-distance queries. Two query modes are provided:

* ``exact-bruteforce`` scans every row and is the reference oracle.
* ``accelerated`` runs a BLAS scan over ``|v|^2 - 2 v.q`` and then re-ranks
  the near-ties with the brute-force kernel, so it returns the identical
  word for every query. Approximate answers are never produced.
"""

from __future__ import annotations

import logging

import numpy as np

from .errors import EmbeddingError

logger = logging.getLogger(__name__)

# Queries per block in the accelerated batch scan; bounds peak memory at
# roughly block * vocab * 8 bytes.
_QUERY_BLOCK = 1024
# Slack factor when collecting near-ties for exact re-ranking. The slack must
# exceed the float64 discrepancy between the dot-product and difference
# kernels (a few ulps of dim * magnitude); a loose value only re-ranks more
# candidates, it never changes the result.
_RERANK_TOL = 1e-9


class EmbeddingTable:
    """Immutable vocabulary plus an (n, dim) matrix of embedding vectors.

    Words are stored lowercased and must be unique. Row order is the load
    order, which also defines the tie-break for equidistant neighbors.
    """

    def __init__(self, words: list[str], vectors: np.ndarray):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise EmbeddingError("vectors must be a 2-D matrix")
        if len(words) != vectors.shape[0]:
            raise EmbeddingError(
                f"word count {len(words)} does not match row count {vectors.shape[0]}"
            )
        if not np.all(np.isfinite(vectors)):
            raise EmbeddingError("embedding vectors must be finite")
        lowered = [w.lower() for w in words]
        if len(set(lowered)) != len(lowered):
            raise EmbeddingError("duplicate words after lowercasing")
        self.words: list[str] = lowered
        self.vectors: np.ndarray = vectors
        self.vectors.setflags(write=False)
        self.dim: int = int(vectors.shape[1]) if vectors.size else 0
        self.word_index: dict[str, int] = {w: i for i, w in enumerate(lowered)}
        self.duplicate_count: int = 0
        # |v|^2 per row, precomputed for the accelerated scan.
        self._sq_norms = np.einsum("ij,ij->i", vectors, vectors)

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word.lower() in self.word_index

    def vector(self, word: str) -> np.ndarray | None:
        """Vector for ``word`` (lowercased before lookup), or None if absent."""
        idx = self.word_index.get(word.lower())
        return None if idx is None else self.vectors[idx]


def load_embeddings(path, expected_dim: int) -> EmbeddingTable:
    """Parse a ``word c1 ... cm`` text file into an EmbeddingTable.

    Every nonempty line must carry exactly ``expected_dim`` decimal
    coordinates. Duplicate words (after lowercasing) keep their first
    vector; the number skipped is stored on ``table.duplicate_count``.

    Raises EmbeddingError naming the offending line on dimension mismatch
    or a non-numeric coordinate, and on an empty file.
    """
    if expected_dim < 1:
        raise EmbeddingError("expected_dim must be positive")
    words: list[str] = []
    rows: list[np.ndarray] = []
    seen: set[str] = set()
    duplicates = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split()
            word, coords = parts[0].lower(), parts[1:]
            if len(coords) != expected_dim:
                raise EmbeddingError(
                    f"line {lineno}: expected {expected_dim} coordinates, got {len(coords)}"
                )
            try:
                vec = np.array([float(c) for c in coords], dtype=np.float64)
            except ValueError as exc:
                raise EmbeddingError(f"line {lineno}: non-numeric coordinate ({exc})") from exc
            if not np.all(np.isfinite(vec)):
                raise EmbeddingError(f"line {lineno}: non-finite coordinate")
            if word in seen:
                duplicates += 1
                continue
            seen.add(word)
            words.append(word)
            rows.append(vec)
    if not words:
        raise EmbeddingError(f"no embedding rows found in {path}")
    table = EmbeddingTable(words, np.vstack(rows))
    table.duplicate_count = duplicates
    if duplicates:
        logger.warning("skipped %d duplicate word(s) while loading %s", duplicates, path)
    return table


def _exact_sq_dists(rows: np.ndarray, query: np.ndarray) -> np.ndarray:
    diff = rows - query
    return np.einsum("ij,ij->i", diff, diff)


def _check_query(table: EmbeddingTable, query: np.ndarray) -> np.ndarray:
    if len(table) == 0:
        raise EmbeddingError("nearest-neighbor query against an empty table")
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    if query.shape[0] != table.dim:
        raise EmbeddingError(
            f"query dimension {query.shape[0]} does not match table dimension {table.dim}"
        )
    return query


def nearest_word(table: EmbeddingTable, query: np.ndarray, mode: str = "accelerated") -> str:
    """Vocabulary word whose vector minimizes Euclidean distance to ``query``.

    Ties are broken toward the lowest row index. Distances are compared in
    squared form; the argmin is identical.
    """
    query = _check_query(table, query)
    if mode == "exact-bruteforce":
        return table.words[int(np.argmin(_exact_sq_dists(table.vectors, query)))]
    if mode == "accelerated":
        return table.words[int(nearest_indices(table, query[None, :])[0])]
    raise EmbeddingError(f"unknown mode {mode!r}")


def nearest_indices(table: EmbeddingTable, queries: np.ndarray) -> np.ndarray:
    """Row indices of the nearest vocabulary word for a (k, dim) query batch.

    This is the accelerated path: a blocked ``|v|^2 - 2 v.q`` scan followed
    by exact re-ranking of candidates within ``_RERANK_TOL`` of the best
    score. The output matches ``exact-bruteforce`` for every query.
    """
    if len(table) == 0:
        raise EmbeddingError("nearest-neighbor query against an empty table")
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim != 2 or queries.shape[1] != table.dim:
        raise EmbeddingError(
            f"query batch must have shape (k, {table.dim}), got {queries.shape}"
        )
    vectors = table.vectors
    max_sq = float(table._sq_norms.max()) if len(table) else 0.0
    out = np.empty(queries.shape[0], dtype=np.int64)
    for start in range(0, queries.shape[0], _QUERY_BLOCK):
        block = queries[start : start + _QUERY_BLOCK]
        # |v|^2 - 2 v.q equals the squared distance up to the constant |q|^2.
        scores = table._sq_norms[None, :] - 2.0 * (block @ vectors.T)
        best = np.argmin(scores, axis=1)
        rows = np.arange(block.shape[0])
        mins = scores[rows, best]
        q_sq = np.einsum("ij,ij->i", block, block)
        tol = _RERANK_TOL * table.dim * (max_sq + q_sq + 1.0)
        out[start : start + block.shape[0]] = best
        # Rows with near-ties get re-ranked with the brute-force kernel;
        # continuous data almost never lands here, exact ties always do.
        near = scores <= (mins + tol)[:, None]
        ambiguous = np.flatnonzero(near.sum(axis=1) > 1)
        for r in ambiguous:
            cand = np.flatnonzero(near[r])
            exact = _exact_sq_dists(vectors[cand], block[r])
            out[start + r] = cand[int(np.argmin(exact))]
    return out


def nearest_words(table: EmbeddingTable, queries: np.ndarray, mode: str = "accelerated") -> list[str]:
    """Batch variant of :func:`nearest_word`."""
    if mode == "exact-bruteforce":
        queries = np.asarray(queries, dtype=np.float64)
        return [nearest_word(table, q, mode="exact-bruteforce") for q in queries]
    if mode == "accelerated":
        return [table.words[i] for i in nearest_indices(table, queries)]
    raise EmbeddingError(f"unknown mode {mode!r}")
