"""TF-IDF chunk index with smoothed idf and cosine scoring.

Tokenization: lowercase, split on non-alphanumeric characters, drop empties.
idf(t) = ln((1 + N) / (1 + df(t))) + 1 over chunk frequencies. Chunk rows are
tf * idf, L2-normalized; rows with no in-vocabulary terms stay all-zero.
Queries are scored with the corpus idf (unseen terms ignored).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .corpus import Chunk

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass
class TfIdfIndex:
    chunks: list[Chunk]
    vocabulary: dict[str, int]
    idf: np.ndarray  # float32, per term_id
    rows: sparse.csr_matrix  # |chunks| x |vocab|, L2-normalized float32

    def query_scores(self, query: str) -> np.ndarray:
        """Cosine between the query tf-idf vector and every chunk row."""
        counts: dict[int, int] = {}
        for token in tokenize(query):
            term_id = self.vocabulary.get(token)
            if term_id is not None:
                counts[term_id] = counts.get(term_id, 0) + 1
        if not counts:
            return np.zeros(len(self.chunks), dtype=np.float64)
        ids = np.fromiter(counts.keys(), dtype=np.int64)
        weights = np.array(
            [counts[i] * float(self.idf[i]) for i in counts], dtype=np.float64
        )
        norm = np.linalg.norm(weights)
        if norm > 0:
            weights /= norm
        qvec = sparse.csr_matrix(
            (weights, (np.zeros_like(ids), ids)), shape=(1, len(self.vocabulary))
        )
        return np.asarray((self.rows @ qvec.T).todense(), dtype=np.float64).ravel()


def build_tfidf(chunks: list[Chunk]) -> TfIdfIndex:
    """Build a TF-IDF index over chunk texts (chunks must be non-empty)."""
    if not chunks:
        raise ValueError("build_tfidf requires at least one chunk")
    tokenized = [tokenize(c.text) for c in chunks]

    vocabulary: dict[str, int] = {}
    df: dict[int, int] = {}
    for tokens in tokenized:
        seen: set[int] = set()
        for token in tokens:
            term_id = vocabulary.setdefault(token, len(vocabulary))
            seen.add(term_id)
        for term_id in seen:
            df[term_id] = df.get(term_id, 0) + 1

    n = len(chunks)
    idf = np.zeros(len(vocabulary), dtype=np.float32)
    for term_id, freq in df.items():
        idf[term_id] = math.log((1 + n) / (1 + freq)) + 1.0

    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for tokens in tokenized:
        counts: dict[int, int] = {}
        for token in tokens:
            term_id = vocabulary[token]
            counts[term_id] = counts.get(term_id, 0) + 1
        row_ids = sorted(counts)
        row_weights = np.array(
            [counts[i] * float(idf[i]) for i in row_ids], dtype=np.float64
        )
        norm = np.linalg.norm(row_weights)
        if norm > 0:
            row_weights /= norm
        indices.extend(row_ids)
        data.extend(np.asarray(row_weights, dtype=np.float32).tolist())
        indptr.append(len(indices))

    rows = sparse.csr_matrix(
        (np.array(data, dtype=np.float32), np.array(indices, dtype=np.int64), np.array(indptr)),
        shape=(n, len(vocabulary)),
    )
    return TfIdfIndex(chunks=list(chunks), vocabulary=vocabulary, idf=idf, rows=rows)
