"""HTTP service exposing sessions, traces, what-if runs, and golden actions.

JSON over HTTP plus one server-push stream of newline-delimited JSON run
events. Mutations are POSTs serialized by the engine's single-session
ownership rule (contention returns 409); reads serve immutable snapshots.
Error bodies always carry {code, message, step_index?}.
"""

from __future__ import annotations

import json
import math
import queue
import threading
from pathlib import Path
from typing import Any, Iterator

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import HTMLResponse, JSONResponse, PlainTextResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles

from .engine import (
    AnswerOutput,
    ChunksOutput,
    GenerationOutput,
    QueryOutput,
    SelectChunks,
    SetLlmParams,
    SetOutput,
    SetPrompt,
    SetQuery,
    SetRetrieverParams,
    StepOverride,
    StringListOutput,
    TraceStep,
)
from .errors import (
    EmptyQuery,
    EmptyText,
    IncompatibleOverride,
    ProviderUnavailable,
    RagforgeError,
    ReplayDivergence,
    RunInProgress,
    StepFailure,
    TemplateError,
)
from .evalstore import check_similarity, similarity_display
from .index_store import RetrievalMethod
from .pipeline import StepKind, pipeline_digest
from .project import ProjectRuntime

DEFAULT_PORT = 8642
HISTOGRAM_BINS = 20

_FALLBACK_PAGE = """<!doctype html>
<html><head><title>ragforge</title></head>
<body><h1>ragforge server</h1>
<p>No UI bundle is installed. The JSON API is live under <code>/api</code>;
see <a href="/api/schema">/api/schema</a>.</p></body></html>
"""


class EventHub:
    """Fan-out of run lifecycle events with a bounded replayable history."""

    def __init__(self, capacity: int = 1000) -> None:
        self._capacity = capacity
        self._history: list[dict] = []
        self._subscribers: list[queue.Queue] = []
        self._seq = 0
        self._lock = threading.Lock()

    def emit(self, event: dict) -> None:
        with self._lock:
            self._seq += 1
            record = {"seq": self._seq, **event}
            self._history.append(record)
            if len(self._history) > self._capacity:
                self._history = self._history[-self._capacity :]
            subscribers = list(self._subscribers)
        for q in subscribers:
            q.put(record)

    def snapshot(self, since: int = 0) -> list[dict]:
        with self._lock:
            return [e for e in self._history if e["seq"] > since]

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue()
        with self._lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)


def _error_body(code: str, message: str, step_index: int | None = None) -> dict:
    body: dict[str, Any] = {"code": code, "message": message}
    if step_index is not None:
        body["step_index"] = step_index
    return body


def _error_response(exc: Exception) -> JSONResponse:
    if isinstance(exc, RunInProgress):
        return JSONResponse(status_code=409, content=_error_body(exc.code, exc.message))
    if isinstance(exc, ReplayDivergence):
        return JSONResponse(
            status_code=409, content=_error_body(exc.code, exc.message, exc.index)
        )
    if isinstance(exc, (EmptyQuery, EmptyText, IncompatibleOverride, TemplateError)):
        return JSONResponse(status_code=422, content=_error_body(exc.code, exc.message))
    if isinstance(exc, StepFailure):
        return JSONResponse(
            status_code=500, content=_error_body(exc.code, exc.message, exc.index)
        )
    if isinstance(exc, ProviderUnavailable):
        return JSONResponse(status_code=502, content=_error_body(exc.code, exc.message))
    if isinstance(exc, IndexError):
        return JSONResponse(status_code=404, content=_error_body("NotFound", str(exc)))
    if isinstance(exc, RagforgeError):
        return JSONResponse(status_code=500, content=_error_body(exc.code, exc.message))
    return JSONResponse(status_code=500, content=_error_body("Internal", str(exc)))


def create_app(runtime: ProjectRuntime, events: EventHub, static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="ragforge", docs_url=None, redoc_url=None)

    # ---------- snapshot helpers ----------

    def step_key(step: TraceStep):
        return runtime.store.key_for(
            runtime.engine._cfg(step.resolved_params),
            RetrievalMethod(step.resolved_params["method"]),
        )

    def answer_similarity(answer_text: str) -> tuple[float | None, bool]:
        active = runtime.session.active_trace
        golden = runtime.goldens.get(active.query_text) if active else None
        if golden is None:
            return None, False
        try:
            return check_similarity(answer_text, golden, runtime.embedder, runtime.embed_cache), True
        except RagforgeError:
            return None, True

    def cell_view(step: TraceStep) -> dict:
        cell: dict[str, Any] = {
            "index": step.index,
            "kind": step.kind.value,
            "title": step.step_name,
            "resolved_params": step.resolved_params,
            "stale": step.stale,
            "origin": step.origin,
        }
        output = step.output
        if isinstance(output, QueryOutput):
            cell["output"] = {"query_text": output.text}
        elif isinstance(output, ChunksOutput):
            cell["output"] = {
                "chunks": [c.to_json() for c in output.chunks],
                "warnings": list(output.warnings),
            }
        elif isinstance(output, GenerationOutput):
            cell["output"] = {
                "prompt": step.resolved_params.get("prompt", ""),
                "text": output.text,
                "edited": output.edited,
                "finish_reason": output.finish_reason,
            }
        elif isinstance(output, StringListOutput):
            cell["output"] = {
                "prompt": step.resolved_params.get("prompt", ""),
                "text": output.raw_text,
                "items": list(output.items),
                "edited": output.edited,
            }
        elif isinstance(output, AnswerOutput):
            similarity, has_golden = answer_similarity(output.text)
            cell["output"] = {
                "answer_text": output.text,
                "has_golden": has_golden,
                "similarity": similarity,
                "similarity_display": (
                    similarity_display(similarity) if similarity is not None else None
                ),
            }
        return cell

    def snapshot() -> dict:
        session = runtime.session
        active = session.active_trace
        return {
            "session_id": session.session_id,
            "pipeline": session.pipeline.to_json(),
            "pipeline_digest": pipeline_digest(session.pipeline),
            "generation_counter": session.generation_counter,
            "query_text": active.query_text if active else None,
            "cells": [cell_view(s) for s in (active.steps if active else [])],
        }

    def get_step(index: int) -> TraceStep:
        active = runtime.session.active_trace
        if active is None or not 0 <= index < len(active.steps):
            raise IndexError(f"no step at index {index}")
        return active.steps[index]

    def parse_override(index: int, body: dict) -> StepOverride:
        known = {
            "retriever_params",
            "manual_chunks",
            "prompt_text",
            "llm_params",
            "edited_output",
            "query_text",
        }
        keys = [k for k in body.keys() if k in known]
        if len(keys) != 1 or len(body) != len(keys):
            raise IncompatibleOverride(
                f"override body must contain exactly one of {sorted(known)}"
            )
        kind = keys[0]
        value = body[kind]
        if kind == "retriever_params":
            if not isinstance(value, dict):
                raise IncompatibleOverride("retriever_params must be an object")
            allowed = {"k", "chunk_size", "chunk_overlap", "method", "mmr_lambda"}
            unknown = set(value) - allowed
            if unknown:
                raise IncompatibleOverride(f"unknown retriever params {sorted(unknown)}")
            try:
                coerced = {
                    name: (
                        int(raw)
                        if name in ("k", "chunk_size", "chunk_overlap")
                        else float(raw)
                        if name == "mmr_lambda"
                        else str(raw)
                    )
                    for name, raw in value.items()
                }
            except (TypeError, ValueError) as exc:
                raise IncompatibleOverride(f"bad retriever param value: {exc}") from exc
            return StepOverride(index, SetRetrieverParams(**coerced))
        if kind == "manual_chunks":
            if not isinstance(value, list):
                raise IncompatibleOverride("manual_chunks must be a list")
            selections = tuple(
                (item["chunk_id"], bool(item.get("selected", True))) for item in value
            )
            return StepOverride(index, SelectChunks(selections))
        if kind == "prompt_text":
            return StepOverride(index, SetPrompt(str(value)))
        if kind == "llm_params":
            if not isinstance(value, dict):
                raise IncompatibleOverride("llm_params must be an object")
            allowed = {"max_tokens", "temperature"}
            unknown = set(value) - allowed
            if unknown:
                raise IncompatibleOverride(f"unknown llm params {sorted(unknown)}")
            return StepOverride(index, SetLlmParams(**value))
        if kind == "edited_output":
            return StepOverride(index, SetOutput(str(value)))
        return StepOverride(index, SetQuery(str(value)))

    # ---------- API routes ----------

    @app.get("/api/session")
    def api_session() -> JSONResponse:
        return JSONResponse(snapshot())

    @app.post("/api/run")
    async def api_run(request: Request) -> JSONResponse:
        body = await request.json()
        query_text = (body or {}).get("query_text", "")
        try:
            runtime.maybe_reload_pipeline()
            runtime.engine.run_pipeline(runtime.session, query_text)
        except Exception as exc:  # noqa: BLE001 - mapped to the closed code set
            return _error_response(exc)
        return JSONResponse(snapshot())

    @app.post("/api/steps/{index}/run_step")
    async def api_run_step(index: int, request: Request) -> JSONResponse:
        body = await request.json()
        try:
            get_step(index)
            override = parse_override(index, body or {})
            runtime.maybe_reload_pipeline()
            runtime.engine.run_step(runtime.session, override)
        except Exception as exc:  # noqa: BLE001
            return _error_response(exc)
        return JSONResponse(snapshot())

    @app.post("/api/steps/{index}/run_all")
    async def api_run_all(index: int, request: Request) -> JSONResponse:
        body = await request.json()
        try:
            get_step(index)
            override = parse_override(index, body or {})
            runtime.maybe_reload_pipeline()
            runtime.engine.run_all(runtime.session, override)
        except Exception as exc:  # noqa: BLE001
            return _error_response(exc)
        return JSONResponse(snapshot())

    @app.get("/api/steps/{index}/chunks")
    def api_chunks(index: int, search: str = "", page: int = 1, page_size: int = 50) -> JSONResponse:
        try:
            step = get_step(index)
            if step.kind is not StepKind.RETRIEVE:
                raise IndexError(f"step {index} is not a retriever cell")
            key = step_key(step)
            scored = runtime.store.score_all(key, step.resolved_params["query"])
        except Exception as exc:  # noqa: BLE001
            return _error_response(exc)
        assert isinstance(step.output, ChunksOutput)
        selected_ids = {c.chunk.chunk_id for c in step.output.chunks if c.selected}
        if search:
            needle = search.lower()
            scored = [s for s in scored if needle in s.chunk.text.lower()]
        total = len(scored)
        page = max(1, page)
        page_size = max(1, min(page_size, 500))
        start = (page - 1) * page_size
        rows = []
        for item in scored[start : start + page_size]:
            row = item.to_json()
            row["selected"] = item.chunk.chunk_id in selected_ids
            rows.append(row)
        return JSONResponse(
            {
                "total": total,
                "page": page,
                "page_size": page_size,
                "total_pages": max(1, math.ceil(total / page_size)),
                "chunks": rows,
            }
        )

    @app.get("/api/steps/{index}/histogram")
    def api_histogram(index: int) -> JSONResponse:
        try:
            step = get_step(index)
            if step.kind is not StepKind.RETRIEVE:
                raise IndexError(f"step {index} is not a retriever cell")
            key = step_key(step)
            scored = runtime.store.score_all(key, step.resolved_params["query"])
        except Exception as exc:  # noqa: BLE001
            return _error_response(exc)
        assert isinstance(step.output, ChunksOutput)
        selected_ids = {c.chunk.chunk_id for c in step.output.chunks if c.selected}
        values = np.array([s.score for s in scored], dtype=np.float64)
        selected_values = np.array(
            [s.score for s in scored if s.chunk.chunk_id in selected_ids], dtype=np.float64
        )
        if values.size == 0:
            return JSONResponse({"bin_edges": [], "counts_all": [], "counts_selected": []})
        lo, hi = float(values.min()), float(values.max())
        if lo == hi:
            return JSONResponse(
                {
                    "bin_edges": [lo, hi],
                    "counts_all": [int(values.size)],
                    "counts_selected": [int(selected_values.size)],
                }
            )
        edges = np.linspace(lo, hi, HISTOGRAM_BINS + 1)
        counts_all, _ = np.histogram(values, bins=edges)
        counts_selected, _ = np.histogram(selected_values, bins=edges)
        return JSONResponse(
            {
                "bin_edges": [float(e) for e in edges],
                "counts_all": [int(c) for c in counts_all],
                "counts_selected": [int(c) for c in counts_selected],
            }
        )

    @app.post("/api/answers/save")
    async def api_save_answer(request: Request) -> JSONResponse:
        body = await request.json() or {}
        try:
            active = runtime.session.active_trace
            if active is None:
                raise IndexError("no trace yet; run the pipeline first")
            final = active.steps[-1].output
            default_answer = final.text if isinstance(final, AnswerOutput) else ""
            answer_text = body.get("answer_text", default_answer)
            edited = bool(body.get("edited", answer_text != default_answer))
            golden = runtime.goldens.save_answer(
                query_text=body.get("query_text", active.query_text),
                answer_text=answer_text,
                pipeline_digest=pipeline_digest(runtime.session.pipeline),
                edited=edited,
            )
        except Exception as exc:  # noqa: BLE001
            return _error_response(exc)
        return JSONResponse(golden.to_json())

    @app.post("/api/answers/check")
    async def api_check_answer(request: Request) -> JSONResponse:
        body = await request.json() or {}
        try:
            active = runtime.session.active_trace
            query_text = body.get("query_text") or (active.query_text if active else None)
            if not query_text:
                raise EmptyQuery("no query to check against")
            golden = runtime.goldens.get(query_text)
            if golden is None:
                raise IndexError(f"no golden answer saved for this query")
            answer_text = body.get("answer_text")
            if answer_text is None:
                final = active.steps[-1].output if active else None
                answer_text = final.text if isinstance(final, AnswerOutput) else ""
            similarity = check_similarity(
                answer_text, golden, runtime.embedder, runtime.embed_cache
            )
        except Exception as exc:  # noqa: BLE001
            return _error_response(exc)
        return JSONResponse(
            {"similarity": similarity, "display": similarity_display(similarity)}
        )

    @app.get("/api/export/step/{index}")
    def api_export(index: int) -> PlainTextResponse:
        try:
            get_step(index)
            fragment = runtime.engine.export_step(runtime.session, index)
        except Exception as exc:  # noqa: BLE001
            err = _error_response(exc)
            return PlainTextResponse(
                content=json.dumps(json.loads(err.body)), status_code=err.status_code
            )
        return PlainTextResponse(fragment)

    @app.get("/api/events")
    def api_events(since: int = 0, follow: bool = True, max_events: int = 0) -> StreamingResponse:
        def stream() -> Iterator[bytes]:
            sent = 0
            for event in events.snapshot(since):
                yield (json.dumps(event) + "\n").encode("utf-8")
                sent += 1
                if max_events and sent >= max_events:
                    return
            if not follow:
                return
            q = events.subscribe()
            try:
                while True:
                    try:
                        event = q.get(timeout=30.0)
                    except queue.Empty:
                        yield b'{"event": "heartbeat"}\n'
                        continue
                    yield (json.dumps(event) + "\n").encode("utf-8")
                    sent += 1
                    if max_events and sent >= max_events:
                        return
            finally:
                events.unsubscribe(q)

        return StreamingResponse(stream(), media_type="application/x-ndjson")

    @app.get("/api/schema")
    def api_schema() -> JSONResponse:
        return JSONResponse(app.openapi())

    # ---------- static UI ----------

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")
    else:

        @app.get("/", response_class=HTMLResponse)
        def index() -> str:
            return _FALLBACK_PAGE

    return app


def serve(
    project_dir: str | Path,
    port: int = DEFAULT_PORT,
    host: str = "127.0.0.1",
    static_dir: str | Path | None = None,
) -> None:
    """Open the project and serve the API (blocking)."""
    import uvicorn

    events = EventHub()
    runtime = ProjectRuntime.open(project_dir, event_sink=events.emit)
    loaded = runtime.store.preload()
    print(f"ragforge: {loaded} indexes resident; serving on http://{host}:{port}")
    app = create_app(runtime, events, static_dir=static_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
