"""Shared fixtures: synthetic embedding tables, corpora, and gateways."""

import numpy as np
import pytest

from dprecon.embeddings import EmbeddingTable
from dprecon.gateway import ChatGateway, EndpointConfig, RetryPolicy

FIRST_NAMES = [
    "steven", "maria", "ahmed", "yuki", "carlos", "ingrid", "tariq", "elena",
    "piotr", "amara", "johann", "lucia", "dmitri", "sofia", "kwame", "harriet",
]
CITY_NAMES = [
    "copenhagen", "taichung", "valparaiso", "windhoek", "tallinn", "cusco",
    "bergen", "marseille", "kyoto", "adelaide", "tbilisi", "porto",
]
FILLER_WORDS = [
    "the", "a", "visited", "from", "during", "meeting", "signed", "report",
    "travelled", "before", "after", "sent", "letter", "about", "contract",
    "spoke", "with", "near", "harbor", "museum", "festival", "concert",
]


def random_table(n_words: int, dim: int, scale: float = 1.0, seed: int = 0,
                 words: list[str] | None = None) -> EmbeddingTable:
    rng = np.random.default_rng(seed)
    if words is None:
        words = [f"w{i:05d}" for i in range(n_words)]
    vectors = rng.standard_normal((len(words), dim)) * scale
    return EmbeddingTable(words, vectors)


def content_table(dim: int = 10, scale: float = 1.0, seed: int = 0,
                  extra_words: int = 0) -> EmbeddingTable:
    """Table containing the name/city/filler vocabulary plus padding words."""
    words = FIRST_NAMES + CITY_NAMES + FILLER_WORDS
    words += [f"pad{i:05d}" for i in range(extra_words)]
    return random_table(len(words), dim, scale=scale, seed=seed, words=words)


def write_embedding_file(path, table: EmbeddingTable):
    with open(path, "w", encoding="utf-8") as fh:
        for word, vec in zip(table.words, table.vectors):
            fh.write(word + " " + " ".join(f"{x:.8f}" for x in vec) + "\n")


def mock_gateway(tmp_path, transports: dict, concurrency: int = 8,
                 retry: RetryPolicy | None = None, **kwargs) -> ChatGateway:
    endpoints = {
        model: EndpointConfig(base_url=f"mock://{model}", transport=t)
        for model, t in transports.items()
    }
    return ChatGateway(
        endpoints,
        cache_dir=tmp_path / "cache",
        retry=retry or RetryPolicy(max_retries=3, backoff_base=0.01, backoff_max=0.05),
        concurrency=concurrency,
        **kwargs,
    )


@pytest.fixture
def tiny_table():
    return EmbeddingTable(
        ["alpha", "beta", "gamma", "delta", "kappa"],
        np.array(
            [
                [0.0, 0.0],
                [1.0, 0.0],
                [0.0, 1.0],
                [-1.0, 0.0],
                [0.0, -1.0],
            ]
        ),
    )
