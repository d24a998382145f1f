"""Corpus loading and chunking contracts."""

from __future__ import annotations

import logging
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ragforge.corpus import (
    Chunk,
    ChunkConfig,
    Corpus,
    Document,
    chunk_corpus,
    chunk_document,
    load_corpus,
)
from ragforge.errors import IoError, NoDocuments

from conftest import synth_corpus


def doc(text: str, doc_id: str = "d.txt") -> Document:
    return Document(doc_id=doc_id, text=text)


class TestLoadCorpus:
    def test_documents_sorted_by_doc_id(self, tmp_path):
        (tmp_path / "b.md").write_text("hello")
        (tmp_path / "a.md").write_text("world")
        corpus = load_corpus(tmp_path)
        assert [d.doc_id for d in corpus.documents] == ["a.md", "b.md"]

    def test_empty_documents_dropped_with_warning(self, tmp_path, caplog):
        (tmp_path / "empty.txt").write_text("")
        (tmp_path / "full.txt").write_text("content")
        with caplog.at_level(logging.WARNING, logger="ragforge.corpus"):
            corpus = load_corpus(tmp_path)
        assert len(corpus.documents) == 1
        assert corpus.documents[0].doc_id == "full.txt"
        assert sum("empty" in r.message for r in caplog.records) == 1

    def test_same_directory_yields_identical_digest(self, tmp_path):
        (tmp_path / "x.txt").write_text("alpha beta")
        (tmp_path / "y.md").write_text("gamma")
        assert load_corpus(tmp_path).digest == load_corpus(tmp_path).digest

    def test_digest_changes_with_content(self, tmp_path):
        (tmp_path / "x.txt").write_text("alpha")
        before = load_corpus(tmp_path).digest
        (tmp_path / "x.txt").write_text("beta")
        assert load_corpus(tmp_path).digest != before

    def test_digest_changes_with_doc_id(self):
        a = Corpus.from_documents([doc("same", "one.txt")])
        b = Corpus.from_documents([doc("same", "two.txt")])
        assert a.digest != b.digest

    def test_no_matching_files(self, tmp_path):
        (tmp_path / "data.csv").write_text("not text")
        with pytest.raises(NoDocuments):
            load_corpus(tmp_path)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(IoError):
            load_corpus(tmp_path / "nope")

    def test_line_endings_normalized(self, tmp_path):
        (tmp_path / "crlf.txt").write_bytes(b"one\r\ntwo\rthree\n")
        corpus = load_corpus(tmp_path)
        assert corpus.documents[0].text == "one\ntwo\nthree\n"

    def test_nested_directories(self, tmp_path):
        (tmp_path / "sub").mkdir()
        (tmp_path / "sub" / "inner.txt").write_text("nested")
        (tmp_path / "top.txt").write_text("top")
        corpus = load_corpus(tmp_path)
        assert [d.doc_id for d in corpus.documents] == ["sub/inner.txt", "top.txt"]

    def test_duplicate_doc_id_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            Corpus.from_documents([doc("a", "x.txt"), doc("b", "x.txt")])


class TestChunkConfig:
    def test_overlap_must_be_smaller_than_size(self):
        with pytest.raises(ValueError):
            ChunkConfig(chunk_size=100, chunk_overlap=100)
        with pytest.raises(ValueError):
            ChunkConfig(chunk_size=0)
        with pytest.raises(ValueError):
            ChunkConfig(chunk_size=10, chunk_overlap=-1)
        assert ChunkConfig(chunk_size=100, chunk_overlap=99).stride == 1


class TestChunkDocument:
    def test_exact_tiling(self):
        chunks = chunk_document(doc("abcdefghij"), ChunkConfig(4, 0))
        assert [c.text for c in chunks] == ["abcd", "efgh", "ij"]

    def test_overlap_with_contained_trailing_window_dropped(self):
        chunks = chunk_document(doc("abcdefghij"), ChunkConfig(4, 2))
        assert [c.text for c in chunks] == ["abcd", "cdef", "efgh", "ghij"]

    def test_document_shorter_than_window(self):
        chunks = chunk_document(doc("abc"), ChunkConfig(100, 0))
        assert [c.text for c in chunks] == ["abc"]
        assert chunks[0].chunk_id == "d.txt#0..3"

    def test_chunk_ids_carry_offsets(self):
        chunks = chunk_document(doc("abcdefghij"), ChunkConfig(4, 0))
        assert [c.chunk_id for c in chunks] == ["d.txt#0..4", "d.txt#4..8", "d.txt#8..10"]


class TestChunkCorpus:
    def test_two_docs_three_chunks_each(self):
        corpus = Corpus.from_documents([doc("0123456789", "a.txt"), doc("9876543210", "b.txt")])
        assert len(chunk_corpus(corpus, ChunkConfig(4, 0))) == 6

    def test_deterministic(self):
        corpus = synth_corpus(5, 300)
        cfg = ChunkConfig(64, 16)
        assert chunk_corpus(corpus, cfg) == chunk_corpus(corpus, cfg)

    def test_chunk_invariants_on_larger_corpus(self):
        corpus = synth_corpus(220, 500, seed=3)
        cfg = ChunkConfig(200, 0)
        by_id = {d.doc_id: d for d in corpus.documents}
        chunks = chunk_corpus(corpus, cfg)
        assert chunks
        for chunk in chunks:
            assert chunk.end - chunk.start <= cfg.chunk_size
            assert chunk.text == by_id[chunk.doc_id].text[chunk.start : chunk.end]
        per_doc: dict[str, list[Chunk]] = {}
        for chunk in chunks:
            per_doc.setdefault(chunk.doc_id, []).append(chunk)
        for doc_chunks in per_doc.values():
            starts = [c.start for c in doc_chunks]
            assert starts == sorted(starts)
            for prev, cur in zip(starts, starts[1:]):
                assert cur - prev == cfg.stride


def assert_chunk_invariants(document: Document, cfg: ChunkConfig, chunks: list[Chunk]) -> None:
    assert chunks, "non-empty document must produce at least one chunk"
    covered = set()
    for i, chunk in enumerate(chunks):
        assert chunk.end - chunk.start <= cfg.chunk_size
        assert chunk.text == document.text[chunk.start : chunk.end]
        if i + 1 < len(chunks):
            assert chunks[i + 1].start - chunk.start == cfg.stride
        covered.update(range(chunk.start, chunk.end))
    assert covered == set(range(len(document.text)))
    # reconstruction: strip the overlap prefix of every chunk except the first
    rebuilt = chunks[0].text + "".join(c.text[cfg.chunk_overlap :] for c in chunks[1:])
    assert rebuilt == document.text


class TestChunkProperties:
    @given(
        text=st.text(min_size=1, max_size=400),
        size=st.integers(min_value=1, max_value=64),
        data=st.data(),
    )
    @settings(max_examples=200, deadline=None)
    def test_reconstruction_and_coverage(self, text, size, data):
        overlap = data.draw(st.integers(min_value=0, max_value=size - 1))
        cfg = ChunkConfig(size, overlap)
        document = doc(text)
        assert_chunk_invariants(document, cfg, chunk_document(document, cfg))

    def test_chunk_count_monotone_in_size(self):
        rng = random.Random(5)
        corpus = synth_corpus(3, 700)
        for overlap in (0, 10, 40):
            sizes = sorted(rng.sample(range(overlap + 1 or 1, 400), 6))
            counts = [len(chunk_corpus(corpus, ChunkConfig(s, overlap))) for s in sizes]
            assert counts == sorted(counts, reverse=True)
