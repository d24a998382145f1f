"""Golden-answer store and regression suite.

Goldens live in a single human-diffable JSON file; overwrites archive the
previous version to a JSONL history. New pipeline outputs are scored against
goldens by embedding cosine similarity.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from filelock import FileLock

from .embedder import EmbeddingCache, EmbeddingProvider, cosine, embed_batch
from .engine import AnswerOutput, Engine, Session
from .errors import EmptyText, StepFailure
from .pipeline import PipelineDef

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.85
EXCERPT_CHARS = 200


def normalize_query(text: str) -> str:
    """Trim and collapse internal whitespace."""
    return " ".join(text.split())


def query_id(text: str) -> str:
    return hashlib.sha256(normalize_query(text).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class GoldenAnswer:
    query_id: str
    query_text: str
    answer_text: str
    saved_at: str  # ISO-8601 UTC
    pipeline_digest: str
    edited: bool

    def to_json(self) -> dict:
        return {
            "query_id": self.query_id,
            "query_text": self.query_text,
            "answer_text": self.answer_text,
            "saved_at": self.saved_at,
            "pipeline_digest": self.pipeline_digest,
            "edited": self.edited,
        }

    @classmethod
    def from_json(cls, data: dict) -> "GoldenAnswer":
        return cls(
            query_id=data["query_id"],
            query_text=data["query_text"],
            answer_text=data["answer_text"],
            saved_at=data["saved_at"],
            pipeline_digest=data["pipeline_digest"],
            edited=bool(data["edited"]),
        )


class GoldenStore:
    """File-backed store: goldens.json plus goldens_history.jsonl."""

    def __init__(self, directory: str | Path) -> None:
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.path = self.dir / "goldens.json"
        self.history_path = self.dir / "goldens_history.jsonl"
        self._lock = threading.Lock()
        self._file_lock = FileLock(str(self.dir / ".goldens.lock"))

    def _read(self) -> dict[str, dict]:
        if not self.path.exists():
            return {}
        return json.loads(self.path.read_text(encoding="utf-8")).get("goldens", {})

    def save_answer(
        self,
        query_text: str,
        answer_text: str,
        pipeline_digest: str,
        edited: bool = False,
    ) -> GoldenAnswer:
        """Persist one golden; an existing golden for the query is archived."""
        if not query_text.strip() or not answer_text.strip():
            raise EmptyText("query_text and answer_text must be non-empty")
        golden = GoldenAnswer(
            query_id=query_id(query_text),
            query_text=query_text,
            answer_text=answer_text,
            saved_at=datetime.now(timezone.utc).isoformat(),
            pipeline_digest=pipeline_digest,
            edited=edited,
        )
        with self._lock, self._file_lock:
            goldens = self._read()
            previous = goldens.get(golden.query_id)
            if previous is not None:
                with self.history_path.open("a", encoding="utf-8") as fh:
                    fh.write(
                        json.dumps(
                            {"archived_at": golden.saved_at, "golden": previous},
                            ensure_ascii=False,
                        )
                        + "\n"
                    )
            goldens[golden.query_id] = golden.to_json()
            payload = {"version": 1, "goldens": goldens}
            self.path.write_text(
                json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
                encoding="utf-8",
            )
        return golden

    def get(self, query_text: str) -> GoldenAnswer | None:
        data = self._read().get(query_id(query_text))
        return GoldenAnswer.from_json(data) if data else None

    def all(self) -> list[GoldenAnswer]:
        return sorted(
            (GoldenAnswer.from_json(d) for d in self._read().values()),
            key=lambda g: g.query_id,
        )

    def history_count(self) -> int:
        if not self.history_path.exists():
            return 0
        with self.history_path.open("r", encoding="utf-8") as fh:
            return sum(1 for line in fh if line.strip())


def check_similarity(
    current_answer: str,
    golden: GoldenAnswer,
    embedder: EmbeddingProvider,
    cache: EmbeddingCache | None = None,
) -> float:
    """Cosine similarity between the two answers' embeddings."""
    pair = embed_batch(embedder, [current_answer, golden.answer_text], cache)
    return cosine(pair[0], pair[1])


def similarity_display(value: float) -> str:
    return f"{value:.2f}"


@dataclass
class SuiteRow:
    query_id: str
    query_text: str
    similarity: float | None
    passed: bool
    answer_excerpt: str
    error: str | None = None

    def to_json(self) -> dict:
        return {
            "query_id": self.query_id,
            "query_text": self.query_text,
            "similarity": self.similarity,
            "similarity_display": (
                similarity_display(self.similarity) if self.similarity is not None else None
            ),
            "passed": self.passed,
            "answer_excerpt": self.answer_excerpt,
            "error": self.error,
        }


@dataclass
class SuiteReport:
    threshold: float
    rows: list[SuiteRow] = field(default_factory=list)

    @property
    def pass_count(self) -> int:
        return sum(1 for r in self.rows if r.passed)

    @property
    def all_passed(self) -> bool:
        return bool(self.rows) and self.pass_count == len(self.rows)

    @property
    def mean_similarity(self) -> float:
        scored = [r.similarity for r in self.rows if r.similarity is not None]
        return sum(scored) / len(scored) if scored else 0.0

    def to_json(self) -> dict:
        return {
            "threshold": self.threshold,
            "rows": [r.to_json() for r in self.rows],
            "pass_count": self.pass_count,
            "row_count": len(self.rows),
            "mean_similarity": self.mean_similarity,
        }


def run_suite(
    pipeline: PipelineDef,
    goldens: list[GoldenAnswer],
    engine: Engine,
    embedder: EmbeddingProvider,
    *,
    threshold: float = DEFAULT_THRESHOLD,
    cache: EmbeddingCache | None = None,
) -> SuiteReport:
    """Run the pipeline on every golden query and score against the goldens.

    Each query gets a fresh trace (never a resume). Step failures are
    captured per row and the suite continues. The golden store is not
    mutated.
    """
    if not goldens:
        raise ValueError("run_suite requires at least one golden answer")
    report = SuiteReport(threshold=threshold)
    for golden in goldens:
        session: Session = engine.new_session(pipeline)
        try:
            engine.run_pipeline(session, golden.query_text)
            final = session.trace[-1].output
            answer = final.text if isinstance(final, AnswerOutput) else ""
            similarity = check_similarity(answer, golden, embedder, cache)
            report.rows.append(
                SuiteRow(
                    query_id=golden.query_id,
                    query_text=golden.query_text,
                    similarity=similarity,
                    passed=similarity >= threshold,
                    answer_excerpt=answer[:EXCERPT_CHARS],
                )
            )
        except StepFailure as exc:
            logger.warning("suite row failed for %r: %s", golden.query_text, exc)
            report.rows.append(
                SuiteRow(
                    query_id=golden.query_id,
                    query_text=golden.query_text,
                    similarity=None,
                    passed=False,
                    answer_excerpt="",
                    error=str(exc),
                )
            )
    return report
