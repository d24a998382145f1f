"""Pre-materialized retrieval indexes over a (chunk config x method) grid.

Every index is built once, persisted under one directory per key, and served
from an in-memory cache afterwards, so a retrieval-parameter change at debug
time is a lookup instead of a rebuild. On-disk layout per key:

    manifest.json   key, counts, provider id, build stats, format version
    chunks.jsonl    one chunk per line
    vectors.f32     row-major little-endian float32 (vector methods)
    vocab.json      term -> id plus idf values (tfidf)
    postings.jsonl  sparse normalized rows (tfidf)
    tree.json       node structure (raptor)
    node_vectors.f32  internal-node embeddings (raptor)
"""

from __future__ import annotations

import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import sparse

from . import raptor as raptor_mod
from .corpus import Chunk, ChunkConfig, Corpus, chunk_corpus
from .embedder import EmbeddingCache, EmbeddingProvider, embed_batch
from .errors import EmptyQuery, IndexMissing, ProviderUnavailable
from .llm import LlmProvider
from .mmr import mmr_order
from .tfidf import TfIdfIndex, build_tfidf

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
DEFAULT_MMR_LAMBDA = 0.5

DEFAULT_GRID_SIZES = (100, 150, 200, 300, 400, 500, 800, 1200, 2000)
DEFAULT_GRID_OVERLAPS = (0, 50, 100, 200, 400)


class RetrievalMethod(str, Enum):
    COSINE = "cosine"
    TFIDF = "tfidf"
    MMR = "mmr"
    RAPTOR = "raptor"


ALL_METHODS = tuple(RetrievalMethod)
EMBEDDING_METHODS = (RetrievalMethod.COSINE, RetrievalMethod.MMR, RetrievalMethod.RAPTOR)


def default_grid(
    sizes: tuple[int, ...] = DEFAULT_GRID_SIZES,
    overlaps: tuple[int, ...] = DEFAULT_GRID_OVERLAPS,
) -> list[ChunkConfig]:
    """All valid (size, overlap) pairs of the grid, overlap < size."""
    return [
        ChunkConfig(chunk_size=s, chunk_overlap=o)
        for s in sorted(sizes)
        for o in sorted(overlaps)
        if o < s
    ]


@dataclass(frozen=True, order=True)
class IndexKey:
    corpus_digest: str
    chunk_size: int
    chunk_overlap: int
    method: RetrievalMethod

    def dirname(self) -> str:
        return (
            f"{self.corpus_digest[:16]}-s{self.chunk_size}"
            f"-o{self.chunk_overlap}-{self.method.value}"
        )

    def to_json(self) -> dict:
        return {
            "corpus_digest": self.corpus_digest,
            "chunk_size": self.chunk_size,
            "chunk_overlap": self.chunk_overlap,
            "method": self.method.value,
        }

    @classmethod
    def from_json(cls, data: dict) -> "IndexKey":
        return cls(
            corpus_digest=data["corpus_digest"],
            chunk_size=int(data["chunk_size"]),
            chunk_overlap=int(data["chunk_overlap"]),
            method=RetrievalMethod(data["method"]),
        )

    @property
    def config(self) -> ChunkConfig:
        return ChunkConfig(chunk_size=self.chunk_size, chunk_overlap=self.chunk_overlap)


@dataclass(frozen=True)
class ScoredChunk:
    chunk: Chunk
    score: float
    rank: int
    selected: bool

    def to_json(self) -> dict:
        return {
            "chunk_id": self.chunk.chunk_id,
            "doc_id": self.chunk.doc_id,
            "start": self.chunk.start,
            "end": self.chunk.end,
            "text": self.chunk.text,
            "score": self.score,
            "score_display": f"{self.score:.4f}",
            "rank": self.rank,
            "selected": self.selected,
        }


class RetrievalResult(list):
    """A list of ScoredChunk with attached warnings."""

    def __init__(self, chunks: list[ScoredChunk], warnings: list[str] | None = None) -> None:
        super().__init__(chunks)
        self.warnings: list[str] = warnings or []


@dataclass
class ManifestEntry:
    key: IndexKey
    chunk_count: int
    unit_count: int
    build_ms: float
    size_bytes: int
    reused: bool


@dataclass
class StoreManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    @property
    def built_count(self) -> int:
        return sum(1 for e in self.entries if not e.reused)

    @property
    def reused_count(self) -> int:
        return sum(1 for e in self.entries if e.reused)

    def keys(self) -> list[IndexKey]:
        return [e.key for e in self.entries]


@dataclass
class _LoadedIndex:
    """Uniform in-memory view: retrievable units plus a scoring backend."""

    key: IndexKey
    units: list[Chunk]  # leaves plus summary nodes for raptor
    chunk_count: int  # corpus chunks under the key's config
    id_rank: np.ndarray  # per unit, its position in chunk_id sort order
    matrix: np.ndarray | None = None  # vector methods: |units| x D normalized, f64
    tfidf: TfIdfIndex | None = None
    tree: raptor_mod.RaptorTree | None = None
    id_to_row: dict[str, int] = field(default_factory=dict)

    def relevance_scores(self, query_vec: np.ndarray | None, query: str) -> np.ndarray:
        if self.tfidf is not None:
            return self.tfidf.query_scores(query)
        assert self.matrix is not None and query_vec is not None
        return self.matrix @ np.asarray(query_vec, dtype=np.float64)


def _id_rank(unit_ids: list[str]) -> np.ndarray:
    order = sorted(range(len(unit_ids)), key=lambda i: unit_ids[i])
    rank = np.empty(len(unit_ids), dtype=np.int64)
    for pos, i in enumerate(order):
        rank[i] = pos
    return rank


def _ranked_order(scores: np.ndarray, id_rank: np.ndarray) -> np.ndarray:
    """Indices sorted by score descending, chunk_id ascending on ties."""
    return np.lexsort((id_rank, -scores))


def _read_jsonl(path: Path) -> list[dict]:
    # json.dumps never emits raw newlines inside a record, so the whole file
    # parses as one array; this is much faster than per-line json.loads.
    text = path.read_text(encoding="utf-8")
    lines = [line for line in text.splitlines() if line]
    if not lines:
        return []
    return json.loads("[" + ",".join(lines) + "]")


class IndexStore:
    """Builds, persists, caches, and queries the index grid for one corpus."""

    def __init__(
        self,
        root: str | Path,
        corpus: Corpus,
        embedder: EmbeddingProvider,
        llm_provider: LlmProvider | None = None,
        *,
        embed_cache: EmbeddingCache | None = None,
        raptor_branching: int = 4,
        raptor_max_levels: int = 5,
        max_workers: int = 4,
        cache_capacity: int = 16,
    ) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.corpus = corpus
        self.embedder = embedder
        self.llm_provider = llm_provider
        self.embed_cache = embed_cache
        self.raptor_branching = raptor_branching
        self.raptor_max_levels = raptor_max_levels
        self.max_workers = max_workers
        self.build_count = 0  # incremented per index actually built
        self._cache_capacity = cache_capacity
        self._loaded: dict[IndexKey, _LoadedIndex] = {}
        self._chunk_lists: dict[ChunkConfig, list[Chunk]] = {}
        self._lock = threading.Lock()

    # ---------- chunk and embedding plumbing ----------

    def chunks_for(self, cfg: ChunkConfig) -> list[Chunk]:
        with self._lock:
            cached = self._chunk_lists.get(cfg)
        if cached is not None:
            return cached
        chunks = chunk_corpus(self.corpus, cfg)
        with self._lock:
            self._chunk_lists[cfg] = chunks
        return chunks

    def _embed_texts(self, texts: list[str]) -> np.ndarray:
        vecs = embed_batch(self.embedder, texts, self.embed_cache)
        return np.vstack([e.values for e in vecs]).astype(np.float32)

    def _embed_query(self, query: str) -> np.ndarray:
        return embed_batch(self.embedder, [query], self.embed_cache)[0].values

    # ---------- building ----------

    def key_for(self, cfg: ChunkConfig, method: RetrievalMethod) -> IndexKey:
        return IndexKey(
            corpus_digest=self.corpus.digest,
            chunk_size=cfg.chunk_size,
            chunk_overlap=cfg.chunk_overlap,
            method=method,
        )

    def has(self, key: IndexKey) -> bool:
        return (self.root / key.dirname() / "manifest.json").is_file()

    def build_all(
        self,
        grid: list[ChunkConfig] | None = None,
        methods: tuple[RetrievalMethod, ...] = ALL_METHODS,
    ) -> StoreManifest:
        """Build every missing (config, method) index; idempotent.

        If the embedding provider fails, remaining embedding-dependent builds
        are aborted but TF-IDF builds still complete, then the provider error
        is re-raised.
        """
        grid = grid if grid is not None else default_grid()
        methods = tuple(methods)
        provider_error: ProviderUnavailable | None = None
        abort_embeddings = threading.Event()
        manifest = StoreManifest()
        manifest_lock = threading.Lock()

        def build_config(cfg: ChunkConfig) -> None:
            nonlocal provider_error
            chunks = self.chunks_for(cfg)
            matrix: np.ndarray | None = None
            for method in methods:
                key = self.key_for(cfg, method)
                if self.has(key):
                    entry = self._manifest_entry(key, reused=True)
                    with manifest_lock:
                        manifest.entries.append(entry)
                    continue
                if method in EMBEDDING_METHODS and abort_embeddings.is_set():
                    continue
                started = time.perf_counter()
                try:
                    if method in EMBEDDING_METHODS and matrix is None:
                        matrix = self._embed_texts([c.text for c in chunks]) if chunks else None
                    self._build_one(key, chunks, matrix, started)
                except ProviderUnavailable as exc:
                    abort_embeddings.set()
                    with manifest_lock:
                        if provider_error is None:
                            provider_error = exc
                    continue
                self.build_count += 1
                entry = self._manifest_entry(key, reused=False)
                with manifest_lock:
                    manifest.entries.append(entry)

        if len(grid) == 1 or self.max_workers <= 1:
            for cfg in grid:
                build_config(cfg)
        else:
            with ThreadPoolExecutor(max_workers=min(self.max_workers, len(grid))) as pool:
                list(pool.map(build_config, grid))

        manifest.entries.sort(key=lambda e: e.key)
        if provider_error is not None:
            raise provider_error
        return manifest

    def _build_one(
        self,
        key: IndexKey,
        chunks: list[Chunk],
        matrix: np.ndarray | None,
        started: float | None = None,
    ) -> None:
        tmp = self.root / f".{key.dirname()}.tmp-{threading.get_ident()}"
        if tmp.exists():
            for p in tmp.iterdir():
                p.unlink()
        tmp.mkdir(parents=True, exist_ok=True)

        meta: dict = {
            "format_version": FORMAT_VERSION,
            "key": key.to_json(),
            "chunk_count": len(chunks),
            "unit_count": len(chunks),
            "provider_id": self.embedder.provider_id,
            "dimension": self.embedder.dimension,
        }
        with (tmp / "chunks.jsonl").open("w", encoding="utf-8") as fh:
            for c in chunks:
                fh.write(
                    json.dumps(
                        {
                            "chunk_id": c.chunk_id,
                            "doc_id": c.doc_id,
                            "start": c.start,
                            "end": c.end,
                            "text": c.text,
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )

        if key.method in (RetrievalMethod.COSINE, RetrievalMethod.MMR):
            assert matrix is not None
            matrix.astype("<f4").tofile(tmp / "vectors.f32")
        elif key.method is RetrievalMethod.TFIDF:
            index = build_tfidf(chunks)
            with (tmp / "vocab.json").open("w", encoding="utf-8") as fh:
                json.dump(
                    {
                        "vocabulary": index.vocabulary,
                        "idf": [float(v) for v in index.idf],
                    },
                    fh,
                    ensure_ascii=False,
                )
            rows = index.rows
            with (tmp / "postings.jsonl").open("w", encoding="utf-8") as fh:
                for i in range(rows.shape[0]):
                    lo, hi = rows.indptr[i], rows.indptr[i + 1]
                    fh.write(
                        json.dumps(
                            {
                                "i": [int(t) for t in rows.indices[lo:hi]],
                                "w": [float(w) for w in rows.data[lo:hi]],
                            }
                        )
                        + "\n"
                    )
            # binary sidecar of the same rows; the loader prefers it because
            # parsing postings.jsonl dominates cold-load latency at 10k chunks
            np.savez(
                tmp / "postings.npz",
                indices=rows.indices.astype(np.int32),
                data=rows.data.astype(np.float32),
                indptr=rows.indptr.astype(np.int64),
            )
        elif key.method is RetrievalMethod.RAPTOR:
            assert matrix is not None
            if self.llm_provider is None:
                raise ProviderUnavailable("raptor build requires an LLM provider", attempts=0)
            tree = raptor_mod.build_raptor(
                chunks,
                matrix,
                self._embed_texts,
                self.llm_provider,
                branching=self.raptor_branching,
                max_levels=self.raptor_max_levels,
            )
            matrix.astype("<f4").tofile(tmp / "vectors.f32")
            assert tree.node_matrix is not None
            tree.node_matrix.astype("<f4").tofile(tmp / "node_vectors.f32")
            with (tmp / "tree.json").open("w", encoding="utf-8") as fh:
                json.dump(
                    {
                        "roots": tree.roots,
                        "nodes": [
                            {
                                "node_id": n.node_id,
                                "child_ids": n.child_ids,
                                "summary_text": n.summary_text,
                                "level": n.level,
                            }
                            for n in tree.nodes
                        ],
                        "digest": tree.digest(),
                    },
                    fh,
                    ensure_ascii=False,
                )
            meta["unit_count"] = len(chunks) + len(tree.nodes)

        if started is not None:
            meta["build_ms"] = round((time.perf_counter() - started) * 1000.0, 3)
        with (tmp / "manifest.json").open("w", encoding="utf-8") as fh:
            json.dump(meta, fh)

        final = self.root / key.dirname()

        def discard_tmp() -> None:
            for p in tmp.iterdir():
                p.unlink()
            tmp.rmdir()

        if final.exists():
            discard_tmp()
            return
        try:
            tmp.rename(final)
        except OSError:
            if final.exists():  # lost the rename race to a concurrent builder
                discard_tmp()
            else:
                raise

    def _manifest_entry(self, key: IndexKey, reused: bool) -> ManifestEntry:
        index_dir = self.root / key.dirname()
        meta = json.loads((index_dir / "manifest.json").read_text(encoding="utf-8"))
        size = sum(p.stat().st_size for p in index_dir.iterdir())
        return ManifestEntry(
            key=key,
            chunk_count=meta["chunk_count"],
            unit_count=meta.get("unit_count", meta["chunk_count"]),
            build_ms=meta.get("build_ms", 0.0),
            size_bytes=size,
            reused=reused,
        )

    def list_built(self) -> list[IndexKey]:
        keys = []
        for path in self.root.iterdir():
            manifest = path / "manifest.json"
            if path.is_dir() and manifest.is_file():
                meta = json.loads(manifest.read_text(encoding="utf-8"))
                keys.append(IndexKey.from_json(meta["key"]))
        return sorted(keys)

    def preload(self, keys: list[IndexKey] | None = None) -> int:
        """Load indexes into the in-memory cache so first queries are instant.

        The server calls this at startup; what-if calls then never pay disk
        or parse costs. Returns the number of indexes now resident.
        """
        keys = keys if keys is not None else self.list_built()
        self._cache_capacity = max(self._cache_capacity, len(keys))
        for key in keys:
            self._load(key)
        return len(keys)

    # ---------- loading ----------

    def _load(self, key: IndexKey) -> _LoadedIndex:
        with self._lock:
            hit = self._loaded.get(key)
        if hit is not None:
            return hit
        index_dir = self.root / key.dirname()
        if not (index_dir / "manifest.json").is_file():
            raise IndexMissing(
                f"no index for (size={key.chunk_size}, overlap={key.chunk_overlap}, "
                f"method={key.method.value}); run `ragforge index build` first",
                key=key,
            )
        meta = json.loads((index_dir / "manifest.json").read_text(encoding="utf-8"))
        chunks = [
            Chunk(
                chunk_id=rec["chunk_id"],
                doc_id=rec["doc_id"],
                start=rec["start"],
                end=rec["end"],
                text=rec["text"],
            )
            for rec in _read_jsonl(index_dir / "chunks.jsonl")
        ]
        dim = meta["dimension"]

        units = chunks
        matrix: np.ndarray | None = None
        tfidf: TfIdfIndex | None = None
        tree: raptor_mod.RaptorTree | None = None

        if key.method in (RetrievalMethod.COSINE, RetrievalMethod.MMR):
            matrix = self._read_matrix(index_dir / "vectors.f32", len(chunks), dim, np.float64)
        elif key.method is RetrievalMethod.TFIDF:
            vocab_data = json.loads((index_dir / "vocab.json").read_text(encoding="utf-8"))
            vocabulary = {t: int(i) for t, i in vocab_data["vocabulary"].items()}
            idf = np.array(vocab_data["idf"], dtype=np.float32)
            npz_path = index_dir / "postings.npz"
            if npz_path.is_file():
                with np.load(npz_path) as npz:
                    rows = sparse.csr_matrix(
                        (
                            npz["data"].astype(np.float32),
                            npz["indices"].astype(np.int64),
                            npz["indptr"],
                        ),
                        shape=(len(chunks), len(vocabulary)),
                    )
            else:
                indptr = [0]
                indices: list[int] = []
                data: list[float] = []
                for rec in _read_jsonl(index_dir / "postings.jsonl"):
                    indices.extend(rec["i"])
                    data.extend(rec["w"])
                    indptr.append(len(indices))
                rows = sparse.csr_matrix(
                    (
                        np.array(data, dtype=np.float32),
                        np.array(indices, dtype=np.int64),
                        np.array(indptr),
                    ),
                    shape=(len(chunks), len(vocabulary)),
                )
            tfidf = TfIdfIndex(chunks=chunks, vocabulary=vocabulary, idf=idf, rows=rows)
        elif key.method is RetrievalMethod.RAPTOR:
            leaf_matrix = self._read_matrix(index_dir / "vectors.f32", len(chunks), dim)
            tree_data = json.loads((index_dir / "tree.json").read_text(encoding="utf-8"))
            nodes = [
                raptor_mod.RaptorNode(
                    node_id=n["node_id"],
                    child_ids=list(n["child_ids"]),
                    summary_text=n["summary_text"],
                    level=int(n["level"]),
                )
                for n in tree_data["nodes"]
            ]
            node_matrix = self._read_matrix(index_dir / "node_vectors.f32", len(nodes), dim)
            tree = raptor_mod.RaptorTree(
                leaf_chunks=chunks,
                leaf_matrix=leaf_matrix,
                nodes=nodes,
                node_matrix=node_matrix,
                roots=list(tree_data["roots"]),
            )
            units, matrix = raptor_mod.collapsed_units(tree)

        loaded = _LoadedIndex(
            key=key,
            units=units,
            chunk_count=len(chunks),
            id_rank=_id_rank([u.chunk_id for u in units]),
            matrix=np.asarray(matrix, dtype=np.float64) if matrix is not None else None,
            tfidf=tfidf,
            tree=tree,
            id_to_row={u.chunk_id: i for i, u in enumerate(units)},
        )
        with self._lock:
            if len(self._loaded) >= self._cache_capacity:
                self._loaded.pop(next(iter(self._loaded)))
            self._loaded[key] = loaded
        return loaded

    @staticmethod
    def _read_matrix(path: Path, rows: int, dim: int, dtype=np.float32) -> np.ndarray:
        if rows == 0:
            return np.zeros((0, dim), dtype=dtype)
        mm = np.memmap(path, dtype="<f4", mode="r")
        return np.array(mm, dtype=dtype).reshape(rows, dim)

    # ---------- querying ----------

    def retrieve(
        self,
        key: IndexKey,
        query: str,
        k: int,
        mmr_lambda: float = DEFAULT_MMR_LAMBDA,
    ) -> RetrievalResult:
        """Method-specific top-k; results are marked selected with dense ranks."""
        if not query or not query.strip():
            raise EmptyQuery("query must be non-empty")
        if k < 1:
            raise ValueError("k must be >= 1")
        index = self._load(key)
        warnings: list[str] = []
        n = len(index.units)
        if k > n:
            warnings.append(f"k={k} clamped to {n} available chunks")
            k = n

        query_vec = None
        if key.method is not RetrievalMethod.TFIDF:
            query_vec = self._embed_query(query)
        scores = index.relevance_scores(query_vec, query)

        if key.method is RetrievalMethod.MMR:
            assert index.matrix is not None and query_vec is not None
            unit_ids = [u.chunk_id for u in index.units]
            picks = mmr_order(query_vec, index.matrix, unit_ids, k, mmr_lambda)
            chunks = [
                ScoredChunk(chunk=index.units[i], score=float(obj), rank=r + 1, selected=True)
                for r, (i, obj) in enumerate(picks)
            ]
            return RetrievalResult(chunks, warnings)

        if key.method is RetrievalMethod.TFIDF and (n == 0 or float(scores.max()) <= 0.0):
            warnings.append("degenerate ranking: no query term appears in any chunk")
        order = _ranked_order(scores, index.id_rank)[:k]
        chunks = [
            ScoredChunk(
                chunk=index.units[int(i)],
                score=float(scores[int(i)]),
                rank=r + 1,
                selected=True,
            )
            for r, i in enumerate(order)
        ]
        return RetrievalResult(chunks, warnings)

    def score_all(self, key: IndexKey, query: str) -> list[ScoredChunk]:
        """Scores for every retrievable unit, sorted descending.

        Under MMR this reports the pure relevance component (the greedy
        objective has no corpus-wide static value).
        """
        if not query or not query.strip():
            raise EmptyQuery("query must be non-empty")
        index = self._load(key)
        query_vec = None
        if key.method is not RetrievalMethod.TFIDF:
            query_vec = self._embed_query(query)
        scores = index.relevance_scores(query_vec, query)
        order = _ranked_order(scores, index.id_rank)
        return [
            ScoredChunk(
                chunk=index.units[int(i)],
                score=float(scores[int(i)]),
                rank=r + 1,
                selected=False,
            )
            for r, i in enumerate(order)
        ]

    def unit_count(self, key: IndexKey) -> int:
        return len(self._load(key).units)

    def lookup_chunks(self, key: IndexKey, chunk_ids: list[str]) -> list[Chunk]:
        index = self._load(key)
        out = []
        for cid in chunk_ids:
            row = index.id_to_row.get(cid)
            if row is None:
                raise KeyError(f"chunk_id {cid!r} not present in index {key.dirname()}")
            out.append(index.units[row])
        return out

    def score_chunks(self, key: IndexKey, query: str, chunk_ids: list[str]) -> list[float]:
        """Relevance scores for specific chunk ids under the key's method."""
        index = self._load(key)
        query_vec = None
        if key.method is not RetrievalMethod.TFIDF:
            query_vec = self._embed_query(query)
        scores = index.relevance_scores(query_vec, query)
        out = []
        for cid in chunk_ids:
            row = index.id_to_row.get(cid)
            if row is None:
                raise KeyError(f"chunk_id {cid!r} not present in index {key.dirname()}")
            out.append(float(scores[row]))
        return out
