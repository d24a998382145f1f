"""MMR greedy selection against hand-evaluated and brute-force oracles."""

from __future__ import annotations

import numpy as np
import pytest

from ragforge.mmr import mmr_order


def unit_rows(vectors: list[list[float]]) -> np.ndarray:
    matrix = np.array(vectors, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return matrix / norms


def greedy_oracle(query, matrix, ids, k, lam):
    """Independent re-implementation: literal greedy over the objective."""
    selected: list[int] = []
    out = []
    for _ in range(min(k, len(ids))):
        best = None
        for i in range(len(ids)):
            if i in selected:
                continue
            rel = float(np.dot(matrix[i], query))
            if selected:
                max_sim = max(float(np.dot(matrix[i], matrix[j])) for j in selected)
            else:
                max_sim = 0.0
            obj = lam * rel - (1 - lam) * max_sim
            cand = (obj, rel, ids[i], i)
            if best is None or (cand[0], cand[1]) > (best[0], best[1]) or (
                cand[0] == best[0] and cand[1] == best[1] and cand[2] < best[2]
            ):
                best = cand
        out.append((best[3], best[0]))
        selected.append(best[3])
    return out


class TestMmrSelection:
    def test_lambda_one_is_pure_cosine_order(self):
        rng = np.random.default_rng(0)
        matrix = unit_rows(rng.normal(size=(12, 8)).tolist())
        query = matrix[3]
        ids = [f"c{i:02d}" for i in range(12)]
        picks = mmr_order(query, matrix, ids, k=6, lam=1.0)
        rel = matrix @ query
        expected = sorted(range(12), key=lambda i: (-rel[i], ids[i]))[:6]
        assert [i for i, _ in picks] == expected
        for (i, obj) in picks:
            assert obj == pytest.approx(rel[i], abs=1e-12)

    def test_lambda_zero_hand_example(self):
        # query (1,0); candidates (1,0), (0.99,0.14), (0,1)
        matrix = unit_rows([[1.0, 0.0], [0.99, 0.14], [0.0, 1.0]])
        query = np.array([1.0, 0.0])
        ids = ["c0", "c1", "c2"]
        picks = mmr_order(query, matrix, ids, k=2, lam=0.0)
        # first pick: all objectives 0, tie broken by relevance -> (1,0)
        assert picks[0][0] == 0
        assert picks[0][1] == pytest.approx(0.0)
        # second pick: (0,1) minimizes similarity to the selected set
        assert picks[1][0] == 2
        assert picks[1][1] == pytest.approx(0.0)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(42)
        matrix = unit_rows(rng.normal(size=(6, 5)).tolist())
        query = unit_rows([rng.normal(size=5).tolist()])[0]
        ids = [f"c{i}" for i in range(6)]
        for lam in (0.0, 0.3, 0.5, 1.0):
            got = mmr_order(query, matrix, ids, k=3, lam=lam)
            want = greedy_oracle(query, matrix, ids, 3, lam)
            assert [i for i, _ in got] == [i for i, _ in want]
            for (gi, gobj), (wi, wobj) in zip(got, want):
                assert gobj == pytest.approx(wobj, abs=1e-9)

    def test_objective_non_increasing_after_first_pick(self):
        # The empty-set penalty is pinned at 0, so the rank-1 objective can sit
        # below rank 2 when every candidate is anti-similar to the first pick;
        # from rank 2 onward the per-candidate penalty only grows.
        rng = np.random.default_rng(9)
        matrix = unit_rows(rng.normal(size=(20, 6)).tolist())
        query = matrix[0]
        picks = mmr_order(query, matrix, [f"c{i:02d}" for i in range(20)], k=10, lam=0.5)
        objectives = [obj for _, obj in picks[1:]]
        assert objectives == sorted(objectives, reverse=True)

    def test_ties_break_by_chunk_id(self):
        matrix = unit_rows([[1.0, 0.0], [1.0, 0.0]])
        query = np.array([1.0, 0.0])
        picks = mmr_order(query, matrix, ["zz", "aa"], k=2, lam=1.0)
        assert picks[0][0] == 1  # "aa" first

    def test_k_clamped_to_candidates(self):
        matrix = unit_rows([[1.0, 0.0]])
        picks = mmr_order(np.array([1.0, 0.0]), matrix, ["only"], k=5, lam=0.5)
        assert len(picks) == 1

    def test_invalid_lambda(self):
        matrix = unit_rows([[1.0, 0.0]])
        with pytest.raises(ValueError):
            mmr_order(np.array([1.0, 0.0]), matrix, ["c"], k=1, lam=1.5)
