"""TF-IDF formula and scoring checks against hand-computed values."""

from __future__ import annotations

import math

import numpy as np
import pytest

from ragforge.corpus import Chunk
from ragforge.tfidf import build_tfidf, tokenize


def chunks3() -> list[Chunk]:
    texts = ["a b", "a c", "c c"]
    return [Chunk(chunk_id=f"c{i}", doc_id="d", start=0, end=len(t), text=t) for i, t in enumerate(texts)]


class TestTokenize:
    def test_lowercase_and_split(self):
        assert tokenize("Hello, World-42!") == ["hello", "world", "42"]

    def test_underscore_splits(self):
        assert tokenize("foo_bar") == ["foo", "bar"]

    def test_empty(self):
        assert tokenize("...") == []


class TestIdfFormula:
    def test_documented_values(self):
        index = build_tfidf(chunks3())
        idf_b = index.idf[index.vocabulary["b"]]
        idf_a = index.idf[index.vocabulary["a"]]
        idf_c = index.idf[index.vocabulary["c"]]
        assert idf_b == pytest.approx(math.log(4 / 2) + 1, abs=1e-4)  # ~1.6931
        assert idf_a == pytest.approx(math.log(4 / 3) + 1, abs=1e-4)  # ~1.2877
        assert idf_c == pytest.approx(math.log(4 / 3) + 1, abs=1e-4)

    def test_manual_formula_for_every_term(self):
        index = build_tfidf(chunks3())
        docs = [tokenize(c.text) for c in chunks3()]
        n = len(docs)
        for term, term_id in index.vocabulary.items():
            df = sum(1 for tokens in docs if term in tokens)
            assert index.idf[term_id] == pytest.approx(math.log((1 + n) / (1 + df)) + 1, abs=1e-6)


class TestScoring:
    def test_disjoint_support_ranking(self):
        index = build_tfidf(chunks3())
        scores = index.query_scores("b")
        assert scores[0] > 0
        assert scores[1] == 0.0
        assert scores[2] == 0.0

    def test_query_score_value(self):
        # chunk "a b": weights (idf_a, idf_b), normalized; query "b" -> unit b axis
        index = build_tfidf(chunks3())
        idf_a = float(index.idf[index.vocabulary["a"]])
        idf_b = float(index.idf[index.vocabulary["b"]])
        expected = idf_b / math.sqrt(idf_a**2 + idf_b**2)
        assert index.query_scores("b")[0] == pytest.approx(expected, abs=1e-6)

    def test_unseen_terms_score_zero(self):
        index = build_tfidf(chunks3())
        assert np.all(index.query_scores("zebra quux") == 0.0)

    def test_scores_non_negative(self):
        index = build_tfidf(chunks3())
        for query in ("a", "a b c", "c c c"):
            assert np.all(index.query_scores(query) >= 0.0)

    def test_rows_unit_norm_or_zero(self):
        texts = ["alpha beta", "beta gamma delta", "", "!!!"]
        chunks = [Chunk(f"c{i}", "d", 0, len(t), t) for i, t in enumerate(texts)]
        index = build_tfidf(chunks)
        rows = index.rows.toarray()
        for i in range(rows.shape[0]):
            norm = np.linalg.norm(rows[i])
            assert norm == pytest.approx(1.0, abs=1e-5) or norm == 0.0
        assert np.linalg.norm(rows[2]) == 0.0  # empty text -> all-zero row

    def test_empty_chunk_list_rejected(self):
        with pytest.raises(ValueError):
            build_tfidf([])
