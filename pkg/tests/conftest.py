"""Shared fixtures: deterministic synthetic corpora and offline providers."""

from __future__ import annotations

import random

import pytest

from ragforge.corpus import Corpus, Document
from ragforge.embedder import LocalHashEmbedder
from ragforge.llm import MockLlm

WORDS = (
    "alpha bravo charlie delta echo foxtrot golf hotel india juliet kilo lima "
    "mike november oscar papa quebec romeo sierra tango uniform victor whiskey "
    "xray yankee zulu harbor lantern meadow orchard"
).split()


def synth_text(rng: random.Random, n_chars: int, marker: str = "") -> str:
    """Deterministic pseudo-prose of roughly n_chars characters."""
    parts: list[str] = []
    if marker:
        parts.append(marker)
    total = len(marker)
    while total < n_chars:
        word = rng.choice(WORDS)
        parts.append(word)
        total += len(word) + 1
        if rng.random() < 0.08:
            parts[-1] += "."
    return " ".join(parts)[:n_chars]


def synth_corpus(n_docs: int, n_chars: int, seed: int = 7) -> Corpus:
    rng = random.Random(seed)
    docs = [
        Document(
            doc_id=f"doc{i:03d}.txt",
            text=synth_text(rng, n_chars, marker=f"topic-{i}"),
            metadata={"filename": f"doc{i:03d}.txt"},
        )
        for i in range(n_docs)
    ]
    return Corpus.from_documents(docs)


@pytest.fixture(scope="session")
def local_embedder() -> LocalHashEmbedder:
    return LocalHashEmbedder()


@pytest.fixture()
def mock_llm() -> MockLlm:
    return MockLlm()


@pytest.fixture(scope="session")
def small_corpus() -> Corpus:
    return synth_corpus(n_docs=8, n_chars=600, seed=11)
