"""Text embedding providers and a persistent embedding cache.

Two providers are shipped:

* ``LocalHashEmbedder`` — deterministic, offline. A text is embedded as the
  bucketed counts of its character 3-grams (sliding window over the text
  wrapped in STX/ETX sentinels). Each gram is hashed with 64-bit FNV-1a over
  its UTF-8 bytes; bucket = (hash >> 8) mod D, sign = +1 if the lowest hash
  bit is 0 else -1. The count vector is L2-normalized. D is 256. These
  constants are part of the provider id and must not change.
* ``RemoteEmbedder`` — generic JSON-over-HTTP batch embedding API
  (OpenAI-compatible request/response shape); vectors are L2-normalized on
  receipt.

The cache is an append-only binary file of float32 vectors plus a JSONL
manifest, keyed by (provider_id, sha256(text)).
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol

import numpy as np
from filelock import FileLock

from .errors import DimensionMismatch, EmptyText, ProviderUnavailable

logger = logging.getLogger(__name__)

ENV_ENDPOINT = "RAGFORGE_EMBED_ENDPOINT"
ENV_MODEL = "RAGFORGE_EMBED_MODEL"
ENV_API_KEY = "RAGFORGE_EMBED_API_KEY"

DEFAULT_MAX_CHARS = 8000

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF
_SENTINEL_BEGIN = "\x02"
_SENTINEL_END = "\x03"

_gram_memo: dict[str, tuple[int, float]] = {}
_GRAM_MEMO_CAP = 1_000_000


@dataclass(frozen=True)
class Embedding:
    values: np.ndarray  # float32, L2-normalized for non-degenerate inputs

    def __post_init__(self) -> None:
        self.values.setflags(write=False)

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values.astype(np.float64)))


class EmbeddingProvider(Protocol):
    provider_id: str
    dimension: int
    kind: str  # "local" | "remote"

    def embed_many(self, texts: list[str]) -> list[np.ndarray]: ...


def _fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def _gram_bucket_sign(gram: str, dim: int) -> tuple[int, float]:
    cached = _gram_memo.get(gram)
    if cached is not None:
        return cached
    h = _fnv1a(gram.encode("utf-8"))
    out = ((h >> 8) % dim, 1.0 if (h & 1) == 0 else -1.0)
    if len(_gram_memo) < _GRAM_MEMO_CAP:
        _gram_memo[gram] = out
    return out


class LocalHashEmbedder:
    """Deterministic character-3-gram hashing embedder (see module docstring)."""

    provider_id = "local-3gram-fnv1a-256"
    dimension = 256
    kind = "local"

    def embed_many(self, texts: list[str]) -> list[np.ndarray]:
        return [self._embed_one(t) for t in texts]

    def _embed_one(self, text: str) -> np.ndarray:
        s = _SENTINEL_BEGIN + text + _SENTINEL_END
        vec = np.zeros(self.dimension, dtype=np.float64)
        counts: dict[str, int] = {}
        for i in range(len(s) - 2):
            gram = s[i : i + 3]
            counts[gram] = counts.get(gram, 0) + 1
        first_bucket = None
        for gram, count in counts.items():
            bucket, sign = _gram_bucket_sign(gram, self.dimension)
            if first_bucket is None:
                first_bucket = bucket
            vec[bucket] += sign * count
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            # Degenerate cancellation; pin a single deterministic component.
            vec[:] = 0.0
            vec[first_bucket or 0] = 1.0
            norm = 1.0
        return (vec / norm).astype(np.float32)


class RemoteEmbedder:
    """JSON-over-HTTP embedding client (OpenAI-compatible wire shape).

    POSTs {"model": ..., "input": [texts]} and expects
    {"data": [{"embedding": [...]}, ...]} in input order. Vectors are
    L2-normalized on receipt and cast to float32.
    """

    kind = "remote"

    def __init__(
        self,
        endpoint: str | None = None,
        model: str | None = None,
        api_key: str | None = None,
        dimension: int = 3072,
        *,
        max_attempts: int = 3,
        backoff_base_s: float = 0.5,
        timeout_s: float = 60.0,
        transport=None,
    ) -> None:
        self.endpoint = endpoint or os.environ.get(ENV_ENDPOINT, "")
        self.model = model or os.environ.get(ENV_MODEL, "text-embedding-3-large")
        self.api_key = api_key or os.environ.get(ENV_API_KEY, "")
        self.dimension = dimension
        self.provider_id = f"remote:{self.model}"
        self.max_attempts = max_attempts
        self.backoff_base_s = backoff_base_s
        self.timeout_s = timeout_s
        self._transport = transport

    def embed_many(self, texts: list[str]) -> list[np.ndarray]:
        import httpx

        if not self.endpoint:
            raise ProviderUnavailable(
                f"no embedding endpoint configured (set {ENV_ENDPOINT})", attempts=0
            )
        payload = {"model": self.model, "input": texts}
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        last_error: Exception | None = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                with httpx.Client(transport=self._transport, timeout=self.timeout_s) as client:
                    resp = client.post(self.endpoint, json=payload, headers=headers)
                resp.raise_for_status()
                data = resp.json()["data"]
                if len(data) != len(texts):
                    raise ProviderUnavailable(
                        f"embedding API returned {len(data)} vectors for {len(texts)} inputs",
                        attempts=attempt,
                    )
                return [_normalize_received(item["embedding"]) for item in data]
            except ProviderUnavailable:
                raise
            except Exception as exc:  # connection/auth/shape failures
                last_error = exc
                if attempt < self.max_attempts:
                    time.sleep(self.backoff_base_s * (2 ** (attempt - 1)))
        raise ProviderUnavailable(
            f"embedding provider failed after {self.max_attempts} attempts: {last_error}",
            attempts=self.max_attempts,
        )


def _normalize_received(values: list[float]) -> np.ndarray:
    vec = np.asarray(values, dtype=np.float64)
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec = vec / norm
    return vec.astype(np.float32)


def text_key(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class EmbeddingCache:
    """Append-only vector cache: vectors.bin + manifest.jsonl.

    Entries are keyed by "provider_id:sha256(text)". Appends are serialized
    by an in-process lock plus a file lock so concurrent writers from other
    processes cannot interleave records.
    """

    def __init__(self, directory: str | Path) -> None:
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.bin_path = self.dir / "vectors.bin"
        self.manifest_path = self.dir / "manifest.jsonl"
        self._lock = threading.Lock()
        self._file_lock = FileLock(str(self.dir / ".write.lock"))
        self._entries: dict[str, tuple[int, int]] = {}  # key -> (offset_floats, dim)
        self._load_manifest()

    def _load_manifest(self) -> None:
        if not self.manifest_path.exists():
            return
        with self.manifest_path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                self._entries[rec["key"]] = (rec["offset"], rec["dim"])

    def __len__(self) -> int:
        return len(self._entries)

    @staticmethod
    def entry_key(provider_id: str, text: str) -> str:
        return f"{provider_id}:{text_key(text)}"

    def get(self, provider_id: str, text: str) -> np.ndarray | None:
        entry = self._entries.get(self.entry_key(provider_id, text))
        if entry is None:
            return None
        offset, dim = entry
        mm = np.memmap(self.bin_path, dtype="<f4", mode="r")
        if offset + dim > mm.shape[0]:  # record not fully on disk yet
            return None
        return np.array(mm[offset : offset + dim])

    def put_many(self, provider_id: str, pairs: Iterable[tuple[str, np.ndarray]]) -> None:
        with self._lock, self._file_lock:
            new_entries: dict[str, tuple[int, int]] = {}
            with self.bin_path.open("ab") as bin_fh, self.manifest_path.open(
                "a", encoding="utf-8"
            ) as man_fh:
                offset = bin_fh.tell() // 4
                for text, vec in pairs:
                    key = self.entry_key(provider_id, text)
                    if key in self._entries or key in new_entries:
                        continue
                    arr = np.ascontiguousarray(vec, dtype="<f4")
                    bin_fh.write(arr.tobytes())
                    man_fh.write(
                        json.dumps({"key": key, "offset": offset, "dim": int(arr.shape[0])}) + "\n"
                    )
                    new_entries[key] = (offset, int(arr.shape[0]))
                    offset += int(arr.shape[0])
            # publish only after both files are flushed and closed, so a
            # concurrent reader never maps an offset past end-of-file
            self._entries.update(new_entries)


def embed_batch(
    provider: EmbeddingProvider,
    texts: list[str],
    cache: EmbeddingCache | None = None,
    *,
    max_chars: int = DEFAULT_MAX_CHARS,
) -> list[Embedding]:
    """Embed texts in order, consulting the cache first and writing misses back.

    Texts longer than max_chars are truncated with a warning before hashing
    and embedding, so the cache key always matches what was embedded.
    """
    if not texts:
        raise EmptyText("embed_batch requires a non-empty list of texts")
    prepared: list[str] = []
    for i, text in enumerate(texts):
        if not text:
            raise EmptyText(f"text at index {i} is empty", index=i)
        if len(text) > max_chars:
            logger.warning("truncating text %d from %d to %d chars", i, len(text), max_chars)
            text = text[:max_chars]
        prepared.append(text)

    vectors: list[np.ndarray | None] = [None] * len(prepared)
    misses: list[int] = []
    if cache is not None:
        for i, text in enumerate(prepared):
            hit = cache.get(provider.provider_id, text)
            if hit is not None:
                vectors[i] = hit
            else:
                misses.append(i)
    else:
        misses = list(range(len(prepared)))

    if misses:
        # De-duplicate identical texts within one provider call.
        unique: dict[str, list[int]] = {}
        for i in misses:
            unique.setdefault(prepared[i], []).append(i)
        fresh = provider.embed_many(list(unique.keys()))
        for text, vec in zip(unique.keys(), fresh):
            for i in unique[text]:
                vectors[i] = vec
        if cache is not None:
            cache.put_many(provider.provider_id, zip(unique.keys(), fresh))

    return [Embedding(values=np.asarray(v, dtype=np.float32)) for v in vectors]


def embed_one(
    provider: EmbeddingProvider,
    text: str,
    cache: EmbeddingCache | None = None,
    *,
    max_chars: int = DEFAULT_MAX_CHARS,
) -> Embedding:
    return embed_batch(provider, [text], cache, max_chars=max_chars)[0]


def cosine(a: Embedding | np.ndarray, b: Embedding | np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; 0.0 if either vector has zero norm."""
    va = (a.values if isinstance(a, Embedding) else np.asarray(a)).astype(np.float64)
    vb = (b.values if isinstance(b, Embedding) else np.asarray(b)).astype(np.float64)
    if va.shape != vb.shape:
        raise DimensionMismatch(f"dimensions differ: {va.shape} vs {vb.shape}")
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(np.dot(va, vb) / (na * nb), -1.0, 1.0))
