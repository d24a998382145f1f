"""Corpus loading and character-window chunking.

Documents are plain text (.txt/.md, UTF-8). Chunking is a sliding character
window: width ``chunk_size``, stride ``chunk_size - chunk_overlap``. A
trailing window whose span is fully contained in the previous chunk's span
is dropped, which keeps chunk counts minimal without losing coverage.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .errors import IoError, NoDocuments

logger = logging.getLogger(__name__)

DEFAULT_INCLUDE_GLOBS = ("**/*.txt", "**/*.md")


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    metadata: dict[str, str] = field(default_factory=dict)

    @property
    def char_count(self) -> int:
        return len(self.text)


@dataclass(frozen=True)
class Corpus:
    documents: tuple[Document, ...]
    digest: str

    @classmethod
    def from_documents(cls, documents: list[Document]) -> "Corpus":
        """Build a corpus with documents sorted by doc_id and a content digest."""
        docs = tuple(sorted(documents, key=lambda d: d.doc_id))
        seen: set[str] = set()
        for doc in docs:
            if doc.doc_id in seen:
                raise ValueError(f"duplicate doc_id {doc.doc_id!r}")
            seen.add(doc.doc_id)
        return cls(documents=docs, digest=corpus_digest(docs))

    def __len__(self) -> int:
        return len(self.documents)


def corpus_digest(documents: tuple[Document, ...] | list[Document]) -> str:
    """SHA-256 over (doc_id, text) pairs in doc_id order."""
    h = hashlib.sha256()
    for doc in documents:
        h.update(doc.doc_id.encode("utf-8"))
        h.update(b"\x1f")
        h.update(doc.text.encode("utf-8"))
        h.update(b"\x1e")
    return h.hexdigest()


@dataclass(frozen=True)
class ChunkConfig:
    chunk_size: int
    chunk_overlap: int = 0

    def __post_init__(self) -> None:
        if self.chunk_size <= 0:
            raise ValueError(f"chunk_size must be positive, got {self.chunk_size}")
        if not 0 <= self.chunk_overlap < self.chunk_size:
            raise ValueError(
                f"chunk_overlap must satisfy 0 <= overlap < size, "
                f"got overlap={self.chunk_overlap} size={self.chunk_size}"
            )

    @property
    def stride(self) -> int:
        return self.chunk_size - self.chunk_overlap


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    start: int
    end: int
    text: str


def normalize_text(raw: bytes | str) -> str:
    """Decode UTF-8 (lossy) and normalize line endings to \\n."""
    text = raw.decode("utf-8", errors="replace") if isinstance(raw, bytes) else raw
    return text.replace("\r\n", "\n").replace("\r", "\n")


def load_corpus(root_dir: str | Path, include_globs: tuple[str, ...] = DEFAULT_INCLUDE_GLOBS) -> Corpus:
    """Load every file matching include_globs under root_dir into a Corpus.

    Documents are keyed by their path relative to root_dir, sorted by that id.
    Empty documents (after normalization) are dropped with a warning.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise IoError(f"corpus directory does not exist: {root}", path=str(root))

    paths: set[Path] = set()
    for pattern in include_globs:
        paths.update(p for p in root.glob(pattern) if p.is_file())
    if not paths:
        raise NoDocuments(f"no files matching {list(include_globs)} under {root}")

    documents: list[Document] = []
    for path in sorted(paths):
        try:
            raw = path.read_bytes()
        except OSError as exc:
            raise IoError(f"cannot read {path}: {exc}", path=str(path)) from exc
        text = normalize_text(raw)
        doc_id = path.relative_to(root).as_posix()
        if not text:
            logger.warning("dropping empty document: %s", doc_id)
            continue
        documents.append(Document(doc_id=doc_id, text=text, metadata={"filename": path.name}))

    if not documents:
        raise NoDocuments(f"all files under {root} were empty")
    return Corpus.from_documents(documents)


def chunk_document(doc: Document, cfg: ChunkConfig) -> list[Chunk]:
    """Sliding-window chunks of one document.

    Windows start at 0 and advance by the stride; the final window is
    truncated at the document end and dropped entirely if its span is
    contained in the previous chunk's span.
    """
    text = doc.text
    n = len(text)
    chunks: list[Chunk] = []
    start = 0
    while start < n:
        end = min(start + cfg.chunk_size, n)
        if chunks and chunks[-1].start <= start and end <= chunks[-1].end:
            break
        chunks.append(
            Chunk(
                chunk_id=f"{doc.doc_id}#{start}..{end}",
                doc_id=doc.doc_id,
                start=start,
                end=end,
                text=text[start:end],
            )
        )
        start += cfg.stride
    return chunks


def chunk_corpus(corpus: Corpus, cfg: ChunkConfig) -> list[Chunk]:
    """Concatenation of chunk_document over documents in corpus order."""
    out: list[Chunk] = []
    for doc in corpus.documents:
        out.extend(chunk_document(doc, cfg))
    return out
