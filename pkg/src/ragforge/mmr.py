"""Maximal marginal relevance selection over embedding vectors.

Greedy: each step picks the remaining candidate maximizing
lambda * cos(query, d) - (1 - lambda) * max_{s in selected} cos(d, s),
with the max over an empty selected set defined as 0. Ties are broken by
higher query relevance, then ascending chunk id.
"""

from __future__ import annotations

import numpy as np


def mmr_order(
    query_vec: np.ndarray,
    candidate_matrix: np.ndarray,
    candidate_ids: list[str],
    k: int,
    lam: float,
) -> list[tuple[int, float]]:
    """Return [(candidate_index, objective_at_selection), ...] of length <= k.

    candidate_matrix rows and query_vec must be L2-normalized (zero rows are
    tolerated; their cosines are their dot products, i.e. 0).
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"mmr lambda must be in [0, 1], got {lam}")
    n = candidate_matrix.shape[0]
    if n == 0:
        return []
    k = min(k, n)

    matrix = candidate_matrix.astype(np.float64, copy=False)
    qvec = np.asarray(query_vec, dtype=np.float64)
    relevance = matrix @ qvec
    best_sim: np.ndarray | None = None  # max cosine to the selected set; None while empty
    taken = np.zeros(n, dtype=bool)

    out: list[tuple[int, float]] = []
    for _ in range(k):
        if best_sim is None:
            objective = lam * relevance  # max over the empty set is 0
        else:
            objective = lam * relevance - (1.0 - lam) * best_sim
        objective[taken] = -np.inf
        best = float(np.max(objective))
        tied = np.flatnonzero(objective == best)
        if len(tied) > 1:
            tie_rel = relevance[tied]
            tied = tied[tie_rel == tie_rel.max()]
            if len(tied) > 1:
                tied = sorted(tied, key=lambda i: candidate_ids[i])
        pick = int(tied[0])
        out.append((pick, best))
        taken[pick] = True
        sims_to_pick = matrix @ matrix[pick]
        best_sim = sims_to_pick if best_sim is None else np.maximum(best_sim, sims_to_pick)
    return out
