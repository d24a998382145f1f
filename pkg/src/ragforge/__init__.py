"""ragforge: interactive debugging engine for RAG pipelines."""

from .corpus import Chunk, ChunkConfig, Corpus, Document, chunk_corpus, chunk_document, load_corpus
from .embedder import Embedding, EmbeddingCache, LocalHashEmbedder, RemoteEmbedder, cosine, embed_batch
from .engine import (
    Engine,
    SelectChunks,
    Session,
    SetLlmParams,
    SetOutput,
    SetPrompt,
    SetQuery,
    SetRetrieverParams,
    StepOverride,
    TraceStep,
    trace_digest,
)
from .evalstore import GoldenAnswer, GoldenStore, SuiteReport, check_similarity, run_suite
from .index_store import IndexKey, IndexStore, RetrievalMethod, ScoredChunk, default_grid
from .llm import LlmRequest, LlmResponse, MockLlm, RemoteLlm, generate, parse_json_list
from .pipeline import PipelineDef, StepDef, StepKind, baseline_pipeline, load_pipeline

__version__ = "0.1.0"

__all__ = [
    "Chunk",
    "ChunkConfig",
    "Corpus",
    "Document",
    "Embedding",
    "EmbeddingCache",
    "Engine",
    "GoldenAnswer",
    "GoldenStore",
    "IndexKey",
    "IndexStore",
    "LlmRequest",
    "LlmResponse",
    "LocalHashEmbedder",
    "MockLlm",
    "PipelineDef",
    "RemoteEmbedder",
    "RemoteLlm",
    "RetrievalMethod",
    "ScoredChunk",
    "SelectChunks",
    "Session",
    "SetLlmParams",
    "SetOutput",
    "SetPrompt",
    "SetQuery",
    "SetRetrieverParams",
    "StepDef",
    "StepKind",
    "StepOverride",
    "SuiteReport",
    "TraceStep",
    "baseline_pipeline",
    "check_similarity",
    "chunk_corpus",
    "chunk_document",
    "cosine",
    "default_grid",
    "embed_batch",
    "generate",
    "load_corpus",
    "load_pipeline",
    "parse_json_list",
    "run_suite",
    "trace_digest",
]
