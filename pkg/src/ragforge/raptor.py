"""Hierarchical summary-tree retrieval structure.

Built bottom-up: the current level's nodes are grouped by deterministic
k-means over their embeddings (k = ceil(n / branching), fixed seed, 25
iterations, empty clusters re-seeded from the farthest point), each group is
capped at ``branching`` members, summarized by the LLM provider, and the
summary is embedded to participate in the next level. Retrieval uses the
collapsed tree: cosine over the union of leaf and internal-node embeddings.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import Chunk
from .llm import LlmProvider, LlmRequest, generate

SUMMARY_PROMPT_TEMPLATE = (
    "Summarize the following passages into one coherent paragraph preserving "
    "all named entities and numbers:\n{children}"
)
SUMMARY_MAX_TOKENS = 256
KMEANS_ITERATIONS = 25
KMEANS_SEED = 0


@dataclass
class RaptorNode:
    node_id: str
    child_ids: list[str]  # chunk_ids (level-0 children) or node_ids
    summary_text: str
    level: int


@dataclass
class RaptorTree:
    leaf_chunks: list[Chunk]
    leaf_matrix: np.ndarray  # |leaves| x D float32, L2-normalized rows
    nodes: list[RaptorNode] = field(default_factory=list)
    node_matrix: np.ndarray | None = None  # |nodes| x D float32
    roots: list[str] = field(default_factory=list)

    def node_by_id(self, node_id: str) -> RaptorNode:
        for node in self.nodes:
            if node.node_id == node_id:
                return node
        raise KeyError(node_id)

    def reachable_leaf_ids(self) -> set[str]:
        leaf_ids = {c.chunk_id for c in self.leaf_chunks}
        by_id = {n.node_id: n for n in self.nodes}
        reached: set[str] = set()
        stack = list(self.roots)
        while stack:
            ident = stack.pop()
            if ident in leaf_ids:
                reached.add(ident)
            elif ident in by_id:
                stack.extend(by_id[ident].child_ids)
        return reached

    def digest(self) -> str:
        """Structure + content hash, for determinism checks."""
        payload = {
            "leaves": [c.chunk_id for c in self.leaf_chunks],
            "nodes": [
                {
                    "id": n.node_id,
                    "children": n.child_ids,
                    "summary": n.summary_text,
                    "level": n.level,
                }
                for n in self.nodes
            ],
            "roots": self.roots,
        }
        blob = json.dumps(payload, sort_keys=True, ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def _kmeans(matrix: np.ndarray, k: int) -> list[list[int]]:
    """Deterministic k-means; returns member-index lists per cluster."""
    n = matrix.shape[0]
    data = matrix.astype(np.float64)
    centroid_idx = [min(n - 1, (i * n) // k) for i in range(k)]
    centroids = data[centroid_idx].copy()

    assign = np.zeros(n, dtype=np.int64)
    for _ in range(KMEANS_ITERATIONS):
        dists = np.linalg.norm(data[:, None, :] - centroids[None, :, :], axis=2)
        assign = np.argmin(dists, axis=1)
        own_dist = dists[np.arange(n), assign]
        used: set[int] = set()
        for c in range(k):
            members = np.flatnonzero(assign == c)
            if len(members) == 0:
                order = np.argsort(-own_dist, kind="stable")
                far = next(int(i) for i in order if int(i) not in used)
                used.add(far)
                centroids[c] = data[far]
                assign[far] = c
            else:
                centroids[c] = data[members].mean(axis=0)
    clusters = [list(map(int, np.flatnonzero(assign == c))) for c in range(k)]
    return [c for c in clusters if c]


def _group_level(matrix: np.ndarray, branching: int) -> list[list[int]]:
    """Cluster one level into groups of size <= branching.

    Singleton k-means clusters are merged into the nearest other cluster;
    oversized clusters are split into balanced consecutive groups ordered by
    distance to the cluster centroid, so a singleton group only appears as a
    forced remainder (e.g. 3 members with branching 2).
    """
    n = matrix.shape[0]
    if n <= branching:
        return [list(range(n))]
    k = math.ceil(n / branching)
    clusters = _kmeans(matrix, k)

    if len(clusters) > 1:
        centroids = [matrix[c].mean(axis=0) for c in clusters]
        merged: list[list[int]] = []
        singles: list[int] = []
        for i, members in enumerate(clusters):
            if len(members) == 1:
                singles.append(i)
            else:
                merged.append(list(members))
        if merged:
            for i in singles:
                point = matrix[clusters[i][0]]
                target = min(
                    range(len(merged)),
                    key=lambda j: float(np.linalg.norm(point - np.mean(matrix[merged[j]], axis=0))),
                )
                merged[target].append(clusters[i][0])
        else:
            merged = [list(clusters[i]) for i in singles]
        clusters = [sorted(c) for c in merged]

    groups: list[list[int]] = []
    for members in clusters:
        if len(members) <= branching:
            groups.append(members)
            continue
        centroid = matrix[members].mean(axis=0)
        ordered = sorted(
            members, key=lambda i: (float(np.linalg.norm(matrix[i] - centroid)), i)
        )
        g = math.ceil(len(ordered) / branching)
        base = len(ordered) // g
        extra = len(ordered) % g
        pos = 0
        for gi in range(g):
            size = base + (1 if gi < extra else 0)
            groups.append(sorted(ordered[pos : pos + size]))
            pos += size
    return groups


def build_raptor(
    chunks: list[Chunk],
    leaf_matrix: np.ndarray,
    embed_texts,
    llm_provider: LlmProvider,
    branching: int = 4,
    max_levels: int = 5,
) -> RaptorTree:
    """Build the summary tree bottom-up from pre-embedded leaf chunks.

    embed_texts: callable(list[str]) -> float32 matrix of normalized rows.
    """
    if not chunks:
        raise ValueError("build_raptor requires at least one chunk")
    if branching < 2:
        raise ValueError("branching must be >= 2")

    tree = RaptorTree(leaf_chunks=list(chunks), leaf_matrix=leaf_matrix)
    if len(chunks) == 1:
        tree.roots = [chunks[0].chunk_id]
        tree.node_matrix = np.zeros((0, leaf_matrix.shape[1]), dtype=np.float32)
        return tree

    level_ids = [c.chunk_id for c in chunks]
    level_texts = [c.text for c in chunks]
    level_matrix = leaf_matrix
    level = 0
    node_counter = 0
    node_vectors: list[np.ndarray] = []

    while len(level_ids) > 1 and level < max_levels:
        level += 1
        groups = _group_level(level_matrix, branching)
        summaries: list[str] = []
        new_nodes: list[RaptorNode] = []
        for members in groups:
            children_text = "\n\n".join(level_texts[i] for i in members)
            prompt = SUMMARY_PROMPT_TEMPLATE.format(children=children_text)
            response = generate(
                llm_provider, LlmRequest(prompt=prompt, max_tokens=SUMMARY_MAX_TOKENS)
            )
            node = RaptorNode(
                node_id=f"L{level}N{node_counter}",
                child_ids=[level_ids[i] for i in members],
                summary_text=response.text,
                level=level,
            )
            node_counter += 1
            new_nodes.append(node)
            summaries.append(response.text)
        summary_matrix = embed_texts(summaries)
        tree.nodes.extend(new_nodes)
        node_vectors.extend(summary_matrix)

        level_ids = [n.node_id for n in new_nodes]
        level_texts = summaries
        level_matrix = summary_matrix

    tree.roots = list(level_ids)
    tree.node_matrix = (
        np.vstack(node_vectors).astype(np.float32)
        if node_vectors
        else np.zeros((0, leaf_matrix.shape[1]), dtype=np.float32)
    )
    return tree


def collapsed_units(tree: RaptorTree) -> tuple[list[Chunk], np.ndarray]:
    """Leaf chunks plus synthetic summary chunks, with their embedding matrix."""
    units = list(tree.leaf_chunks)
    for node in tree.nodes:
        text = node.summary_text
        units.append(
            Chunk(
                chunk_id=f"raptor:{node.node_id}",
                doc_id=f"raptor:{node.node_id}",
                start=0,
                end=len(text),
                text=text,
            )
        )
    if tree.node_matrix is not None and tree.node_matrix.shape[0] > 0:
        matrix = np.vstack([tree.leaf_matrix, tree.node_matrix]).astype(np.float32)
    else:
        matrix = tree.leaf_matrix.astype(np.float32)
    return units, matrix
