"""Pipeline execution with recorded traces and replay-based what-if resumes.

Every primitive invocation is recorded as a TraceStep. Resuming from a step
replays the recorded prefix (verifying it still matches the pipeline
definition), applies an override at the target, and re-executes everything
downstream. This requires pipelines to be deterministic functions of step
outputs; divergence between the recorded prefix and the current definition
is detected and reported instead of being silently mis-replayed.

run_step recomputes a single step against recorded upstream outputs and
marks downstream cells stale without touching them; run_all supersedes the
whole trace. A step's overrides accumulate across run_step calls until a
full re-run resets them.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import threading
import time
import uuid
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Union

from .errors import (
    EmptyQuery,
    IncompatibleOverride,
    RagforgeError,
    ReplayDivergence,
    RunInProgress,
    StepFailure,
    TemplateError,
)
from .index_store import IndexStore, RetrievalMethod, RetrievalResult, ScoredChunk
from .llm import DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE, LlmProvider, LlmRequest, generate, parse_json_list
from .pipeline import (
    PipelineDef,
    StepDef,
    StepKind,
    escape_template,
    render_template,
    step_fragment,
    validate_pipeline,
)

# ---------- step outputs ----------


@dataclass(frozen=True)
class QueryOutput:
    text: str


@dataclass(frozen=True)
class ChunksOutput:
    chunks: tuple[ScoredChunk, ...]
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class GenerationOutput:
    text: str
    edited: bool = False
    finish_reason: str = "stop"


@dataclass(frozen=True)
class StringListOutput:
    items: tuple[str, ...]
    raw_text: str = ""
    edited: bool = False


@dataclass(frozen=True)
class AnswerOutput:
    text: str


StepOutput = Union[QueryOutput, ChunksOutput, GenerationOutput, StringListOutput, AnswerOutput]


def render_output(output: StepOutput | list[str] | str) -> str:
    """Render a step output (or env value) for template substitution."""
    if isinstance(output, str):
        return output
    if isinstance(output, list):
        return "\n".join(output)
    if isinstance(output, QueryOutput):
        return output.text
    if isinstance(output, ChunksOutput):
        return "\n\n".join(
            f"[{c.rank}] {c.chunk.text}" for c in output.chunks if c.selected
        )
    if isinstance(output, GenerationOutput):
        return output.text
    if isinstance(output, StringListOutput):
        return "\n".join(output.items)
    if isinstance(output, AnswerOutput):
        return output.text
    raise TypeError(f"cannot render {type(output)}")


def output_to_json(output: StepOutput) -> dict:
    if isinstance(output, QueryOutput):
        return {"type": "query_text", "text": output.text}
    if isinstance(output, ChunksOutput):
        return {
            "type": "chunks",
            "chunks": [c.to_json() for c in output.chunks],
            "warnings": list(output.warnings),
        }
    if isinstance(output, GenerationOutput):
        return {
            "type": "generation",
            "text": output.text,
            "edited": output.edited,
            "finish_reason": output.finish_reason,
        }
    if isinstance(output, StringListOutput):
        return {
            "type": "string_list",
            "items": list(output.items),
            "raw_text": output.raw_text,
            "edited": output.edited,
        }
    if isinstance(output, AnswerOutput):
        return {"type": "final_answer", "text": output.text}
    raise TypeError(f"cannot serialize {type(output)}")


# ---------- overrides ----------


@dataclass(frozen=True)
class SetRetrieverParams:
    k: int | None = None
    chunk_size: int | None = None
    chunk_overlap: int | None = None
    method: str | None = None
    mmr_lambda: float | None = None


@dataclass(frozen=True)
class SelectChunks:
    selections: tuple[tuple[str, bool], ...]


@dataclass(frozen=True)
class SetPrompt:
    text: str


@dataclass(frozen=True)
class SetLlmParams:
    max_tokens: int | None = None
    temperature: float | None = None


@dataclass(frozen=True)
class SetOutput:
    text: str


@dataclass(frozen=True)
class SetQuery:
    text: str


OverridePayload = Union[SetRetrieverParams, SelectChunks, SetPrompt, SetLlmParams, SetOutput, SetQuery]


@dataclass(frozen=True)
class StepOverride:
    target_index: int
    payload: OverridePayload


_COMPATIBLE: dict[type, tuple[StepKind, ...]] = {
    SetRetrieverParams: (StepKind.RETRIEVE,),
    SelectChunks: (StepKind.RETRIEVE,),
    SetPrompt: (StepKind.LLM,),
    SetLlmParams: (StepKind.LLM,),
    SetOutput: (StepKind.LLM, StepKind.ANSWER),
    SetQuery: (StepKind.QUERY,),
}


def _check_compatible(kind: StepKind, payload: OverridePayload) -> None:
    allowed = _COMPATIBLE.get(type(payload), ())
    if kind not in allowed:
        raise IncompatibleOverride(
            f"{type(payload).__name__} cannot target a {kind.value} step"
        )


def _merge_override(applied: dict[str, Any], payload: OverridePayload) -> dict[str, Any]:
    merged = dict(applied)
    if isinstance(payload, SetRetrieverParams):
        for name in ("k", "chunk_size", "chunk_overlap", "method", "mmr_lambda"):
            value = getattr(payload, name)
            if value is not None:
                merged[name] = value.value if isinstance(value, RetrievalMethod) else value
        merged.pop("manual_chunks", None)  # fresh params re-enable auto retrieval
    elif isinstance(payload, SelectChunks):
        merged["manual_chunks"] = [cid for cid, sel in payload.selections if sel]
    elif isinstance(payload, SetPrompt):
        merged["prompt_text"] = payload.text
        merged.pop("edited_output", None)
    elif isinstance(payload, SetLlmParams):
        if payload.max_tokens is not None:
            merged["max_tokens"] = payload.max_tokens
        if payload.temperature is not None:
            merged["temperature"] = payload.temperature
        merged.pop("edited_output", None)
    elif isinstance(payload, SetOutput):
        merged["edited_output"] = payload.text
    elif isinstance(payload, SetQuery):
        merged["query_text"] = payload.text
    else:
        raise IncompatibleOverride(f"unknown override payload {type(payload)}")
    return merged


# ---------- trace ----------

ORIGIN_RECORDED = "recorded"
ORIGIN_REPLAYED = "replayed"
ORIGIN_OVERRIDDEN = "overridden"


@dataclass
class TraceStep:
    index: int
    step_name: str
    kind: StepKind
    resolved_params: dict[str, Any]
    input_digest: str
    output: StepOutput
    duration_ms: float
    origin: str
    stale: bool = False
    def_path: tuple[int, ...] = ()
    env_refs: dict[str, dict] = field(default_factory=dict)
    applied_overrides: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "step_name": self.step_name,
            "kind": self.kind.value,
            "resolved_params": self.resolved_params,
            "input_digest": self.input_digest,
            "output": output_to_json(self.output),
            "duration_ms": self.duration_ms,
            "origin": self.origin,
            "stale": self.stale,
        }


@dataclass
class Trace:
    trace_id: int
    steps: list[TraceStep]
    parent_id: int | None
    query_text: str


@dataclass
class Session:
    session_id: str
    pipeline: PipelineDef
    traces: list[Trace] = field(default_factory=list)
    generation_counter: int = 0
    _run_lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def active_trace(self) -> Trace | None:
        return self.traces[-1] if self.traces else None

    @property
    def trace(self) -> list[TraceStep]:
        active = self.active_trace
        return active.steps if active else []

    @property
    def lineage(self) -> int | None:
        active = self.active_trace
        return active.parent_id if active else None

    def update_pipeline(self, pipeline: PipelineDef) -> None:
        validate_pipeline(pipeline)
        self.pipeline = pipeline


def _input_digest(step_name: str, kind: StepKind, resolved: dict[str, Any]) -> str:
    blob = json.dumps(
        {"step_name": step_name, "kind": kind.value, "resolved_params": resolved},
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def trace_digest(steps: list[TraceStep]) -> str:
    """Digest of a trace excluding timing, origin, and staleness fields."""
    payload = [
        {
            "index": s.index,
            "step_name": s.step_name,
            "kind": s.kind.value,
            "resolved_params": s.resolved_params,
            "input_digest": s.input_digest,
            "output": output_to_json(s.output),
        }
        for s in steps
    ]
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# ---------- environment ----------


@dataclass
class _EnvVal:
    value: Any  # StepOutput | list[str] | str
    ref: dict


def _str_env(env: dict[str, _EnvVal]) -> dict[str, str]:
    return {name: render_output(v.value) for name, v in env.items()}


def _rebuild_env(steps: list[TraceStep], target: TraceStep) -> dict[str, _EnvVal]:
    env: dict[str, _EnvVal] = {}
    for name, ref in target.env_refs.items():
        if "step" in ref:
            env[name] = _EnvVal(steps[ref["step"]].output, ref)
        elif "steps" in ref:
            env[name] = _EnvVal([render_output(steps[i].output) for i in ref["steps"]], ref)
        else:
            env[name] = _EnvVal(ref["value"], ref)
    return env


def _when_is_truthy(rendered: str) -> bool:
    return rendered.strip() not in ("", "false")


# ---------- engine ----------

RETENTION = 2  # active trace plus its immediate predecessor (for diffing)


class Engine:
    """Executes pipelines against an index store and an LLM provider."""

    def __init__(
        self,
        store: IndexStore,
        llm_provider: LlmProvider,
        *,
        event_sink: Callable[[dict], None] | None = None,
    ) -> None:
        self.store = store
        self.llm_provider = llm_provider
        self.event_sink = event_sink

    def _emit(self, event: str, **fields: Any) -> None:
        if self.event_sink is not None:
            self.event_sink({"event": event, **fields})

    def new_session(self, pipeline: PipelineDef) -> Session:
        validate_pipeline(pipeline)
        return Session(session_id=uuid.uuid4().hex, pipeline=pipeline)

    # -- public operations --

    def run_pipeline(self, session: Session, query_text: str) -> Session:
        """Execute the full pipeline on query_text, recording a fresh trace."""
        if not query_text or not query_text.strip():
            raise EmptyQuery("query_text must be non-empty")
        with self._exclusive(session):
            return self._run(session, query_text=query_text, replay=None, override=None)

    def run_all(self, session: Session, override: StepOverride) -> Session:
        """Resume from override.target_index, replaying the recorded prefix."""
        with self._exclusive(session):
            active = self._require_trace(session)
            self._validate_target(active, override)
            return self._run(
                session, query_text=active.query_text, replay=active, override=override
            )

    def run_step(self, session: Session, override: StepOverride) -> TraceStep:
        """Recompute only the target step; downstream cells are marked stale."""
        with self._exclusive(session):
            active = self._require_trace(session)
            self._validate_target(active, override)
            target = override.target_index
            old = active.steps[target]
            _check_compatible(old.kind, override.payload)
            stepdef = self._stepdef_at(session.pipeline, old.def_path)
            if stepdef is None or stepdef.kind is not old.kind:
                raise IncompatibleOverride(
                    "pipeline definition changed under this trace; run the pipeline again"
                )
            env = _rebuild_env(active.steps, old)
            applied = _merge_override(old.applied_overrides, override.payload)
            self._emit("run_started", generation=session.generation_counter + 1, mode="step")
            started = time.perf_counter()
            try:
                resolved = self._resolve(
                    stepdef, env, session.pipeline, applied, query_text=active.query_text
                )
                output = self._execute_kind(
                    stepdef.kind, resolved, applied, target, old.step_name
                )
            except (StepFailure, TemplateError, IncompatibleOverride):
                self._emit("run_failed", index=target)
                raise
            new_step = TraceStep(
                index=target,
                step_name=old.step_name,
                kind=old.kind,
                resolved_params=resolved,
                input_digest=_input_digest(old.step_name, old.kind, resolved),
                output=output,
                duration_ms=(time.perf_counter() - started) * 1000.0,
                origin=ORIGIN_OVERRIDDEN,
                stale=False,
                def_path=old.def_path,
                env_refs=old.env_refs,
                applied_overrides=applied,
            )
            steps = (
                active.steps[:target]
                + [new_step]
                + [dataclasses.replace(s, stale=True) for s in active.steps[target + 1 :]]
            )
            session.generation_counter += 1
            session.traces.append(
                Trace(
                    trace_id=session.generation_counter,
                    steps=steps,
                    parent_id=active.trace_id,
                    query_text=active.query_text,
                )
            )
            self._prune(session)
            self._emit("step_finished", index=target)
            self._emit("run_finished", generation=session.generation_counter)
            return new_step

    def prune_stale(self, session: Session) -> int:
        """Discard superseded traces beyond the retention bound."""
        return self._prune(session)

    def export_step(self, session: Session, index: int) -> str:
        """Emit the step with its current resolved params as a DSL fragment."""
        active = self._require_trace(session)
        if not 0 <= index < len(active.steps):
            raise IndexError(f"step index {index} out of range")
        step = active.steps[index]
        base_name = step.step_name.split("[")[0]
        params = self._export_params(step)
        when = None
        stepdef = self._stepdef_at(session.pipeline, step.def_path)
        if stepdef is not None and stepdef.kind is step.kind:
            when = stepdef.when
        return step_fragment(StepDef(name=base_name, kind=step.kind, params=params, when=when))

    # -- internals --

    @contextmanager
    def _exclusive(self, session: Session):
        if not session._run_lock.acquire(blocking=False):
            raise RunInProgress("another run is in progress for this session")
        try:
            yield
        finally:
            session._run_lock.release()

    @staticmethod
    def _require_trace(session: Session) -> Trace:
        active = session.active_trace
        if active is None:
            raise IncompatibleOverride("no recorded trace; run the pipeline first")
        return active

    @staticmethod
    def _validate_target(trace: Trace, override: StepOverride) -> None:
        if not 0 <= override.target_index < len(trace.steps):
            raise IndexError(
                f"override target {override.target_index} out of range "
                f"(trace has {len(trace.steps)} steps)"
            )

    def _prune(self, session: Session) -> int:
        to_prune = max(0, len(session.traces) - RETENTION)
        if to_prune:
            del session.traces[:to_prune]
        return to_prune

    @staticmethod
    def _stepdef_at(pipeline: PipelineDef, def_path: tuple[int, ...]) -> StepDef | None:
        steps: tuple[StepDef, ...] = pipeline.steps
        node: StepDef | None = None
        for pos in def_path:
            if pos >= len(steps):
                return None
            node = steps[pos]
            steps = node.body
        return node

    def _run(
        self,
        session: Session,
        *,
        query_text: str,
        replay: Trace | None,
        override: StepOverride | None,
    ) -> Session:
        if replay is not None and override is not None:
            old = replay.steps[override.target_index]
            _check_compatible(old.kind, override.payload)
        generation = session.generation_counter + 1
        self._emit("run_started", generation=generation, mode="all" if replay else "pipeline")
        runner = _Runner(
            engine=self,
            pipeline=session.pipeline,
            query_text=query_text,
            replay=replay.steps if replay else None,
            target=override.target_index if override else None,
            payload=override.payload if override else None,
        )
        try:
            steps = runner.execute()
        except (StepFailure, TemplateError, ReplayDivergence, IncompatibleOverride) as exc:
            if runner.steps and isinstance(exc, (StepFailure, TemplateError)):
                # retain the partial trace for inspection
                session.generation_counter = generation
                session.traces.append(
                    Trace(
                        trace_id=generation,
                        steps=runner.steps,
                        parent_id=replay.trace_id if replay else None,
                        query_text=query_text,
                    )
                )
                self._prune(session)
            index = exc.index if isinstance(exc, (StepFailure, ReplayDivergence)) else len(runner.steps)
            self._emit("run_failed", index=index)
            raise
        final_query = steps[0].output.text if steps and isinstance(steps[0].output, QueryOutput) else query_text
        session.generation_counter = generation
        session.traces.append(
            Trace(
                trace_id=generation,
                steps=steps,
                parent_id=replay.trace_id if replay else None,
                query_text=final_query,
            )
        )
        self._prune(session)
        self._emit("run_finished", generation=generation)
        return session

    # -- step resolution and execution --

    def _resolve(
        self,
        stepdef: StepDef,
        env: dict[str, _EnvVal],
        pipeline: PipelineDef,
        applied: dict[str, Any],
        *,
        query_text: str,
    ) -> dict[str, Any]:
        strings = _str_env(env)
        defaults = pipeline.defaults
        if stepdef.kind is StepKind.QUERY:
            # The run argument always wins; a pinned `text` param in the DSL
            # (as produced by export) is a display default only.
            text = applied.get("query_text")
            if text is None:
                text = query_text
            return {"text": text}
        if stepdef.kind is StepKind.RETRIEVE:
            query = render_template(stepdef.params["query_template"], strings, stepdef.name)
            resolved: dict[str, Any] = {
                "query": query,
                "k": applied.get("k", stepdef.params.get("k", defaults.k)),
                "chunk_size": applied.get(
                    "chunk_size", stepdef.params.get("chunk_size", defaults.chunk_size)
                ),
                "chunk_overlap": applied.get(
                    "chunk_overlap", stepdef.params.get("chunk_overlap", defaults.chunk_overlap)
                ),
                "method": str(
                    applied.get("method", stepdef.params.get("method", defaults.method.value))
                ),
            }
            if resolved["method"] == RetrievalMethod.MMR.value:
                resolved["mmr_lambda"] = float(
                    applied.get("mmr_lambda", stepdef.params.get("mmr_lambda", defaults.mmr_lambda))
                )
            manual = applied.get("manual_chunks", stepdef.params.get("manual_chunks"))
            if manual is not None:
                resolved["manual_chunks"] = list(manual)
            return resolved
        if stepdef.kind is StepKind.LLM:
            prompt = applied.get("prompt_text")
            if prompt is None:
                prompt = render_template(stepdef.params["prompt_template"], strings, stepdef.name)
            resolved = {
                "prompt": prompt,
                "max_tokens": int(
                    applied.get("max_tokens", stepdef.params.get("max_tokens", DEFAULT_MAX_TOKENS))
                ),
                "temperature": float(
                    applied.get(
                        "temperature", stepdef.params.get("temperature", DEFAULT_TEMPERATURE)
                    )
                ),
            }
            parse_key = stepdef.params.get("parse_json_list_key")
            if parse_key is not None:
                resolved["parse_json_list_key"] = parse_key
            return resolved
        if stepdef.kind is StepKind.ANSWER:
            text = applied.get("edited_output")
            if text is None:
                text = render_template(stepdef.params["template"], strings, stepdef.name)
            return {"text": text}
        raise TypeError(f"cannot resolve {stepdef.kind}")

    def _execute_kind(
        self,
        kind: StepKind,
        resolved: dict[str, Any],
        applied: dict[str, Any],
        index: int,
        step_name: str = "",
    ) -> StepOutput:
        try:
            if kind is StepKind.QUERY:
                return QueryOutput(text=resolved["text"])
            if kind is StepKind.RETRIEVE:
                return self._execute_retrieve(resolved)
            if kind is StepKind.LLM:
                return self._execute_llm(resolved, applied)
            if kind is StepKind.ANSWER:
                return AnswerOutput(text=resolved["text"])
        except (IncompatibleOverride, StepFailure):
            raise
        except RagforgeError as exc:
            raise StepFailure(index, exc, step_name) from exc
        raise TypeError(f"cannot execute {kind}")

    def _execute_retrieve(self, resolved: dict[str, Any]) -> ChunksOutput:
        try:
            method = RetrievalMethod(resolved["method"])
        except ValueError as exc:
            raise IncompatibleOverride(f"unknown retrieval method {resolved['method']!r}") from exc
        key = self.store.key_for(self._cfg(resolved), method)
        manual = resolved.get("manual_chunks")
        if manual is not None:
            try:
                chunks = self.store.lookup_chunks(key, manual)
                scores = self.store.score_chunks(key, resolved["query"], manual)
            except KeyError as exc:
                raise IncompatibleOverride(str(exc)) from exc
            ranked = sorted(
                zip(chunks, scores), key=lambda cs: (-cs[1], cs[0].chunk_id)
            )
            return ChunksOutput(
                chunks=tuple(
                    ScoredChunk(chunk=c, score=s, rank=r + 1, selected=True)
                    for r, (c, s) in enumerate(ranked)
                ),
                warnings=(),
            )
        result: RetrievalResult = self.store.retrieve(
            key,
            resolved["query"],
            int(resolved["k"]),
            float(resolved.get("mmr_lambda", 0.5)),
        )
        return ChunksOutput(chunks=tuple(result), warnings=tuple(result.warnings))

    def _cfg(self, resolved: dict[str, Any]):
        from .corpus import ChunkConfig

        try:
            return ChunkConfig(
                chunk_size=int(resolved["chunk_size"]),
                chunk_overlap=int(resolved["chunk_overlap"]),
            )
        except (TypeError, ValueError) as exc:
            raise IncompatibleOverride(f"invalid chunk config: {exc}") from exc

    def _execute_llm(self, resolved: dict[str, Any], applied: dict[str, Any]) -> StepOutput:
        edited = applied.get("edited_output")
        if edited is not None:
            text = edited
            finish = "stop"
            was_edited = True
        else:
            response = generate(
                self.llm_provider,
                LlmRequest(
                    prompt=resolved["prompt"],
                    max_tokens=int(resolved["max_tokens"]),
                    temperature=float(resolved["temperature"]),
                ),
            )
            text = response.text
            finish = response.finish_reason
            was_edited = False
        parse_key = resolved.get("parse_json_list_key")
        if parse_key:
            items = parse_json_list(text, parse_key)
            return StringListOutput(items=tuple(items), raw_text=text, edited=was_edited)
        return GenerationOutput(text=text, edited=was_edited, finish_reason=finish)

    def _export_params(self, step: TraceStep) -> dict[str, Any]:
        resolved = step.resolved_params
        if step.kind is StepKind.QUERY:
            return {"text": resolved["text"]}
        if step.kind is StepKind.RETRIEVE:
            params: dict[str, Any] = {
                "query_template": escape_template(resolved["query"]),
                "k": resolved["k"],
                "chunk_size": resolved["chunk_size"],
                "chunk_overlap": resolved["chunk_overlap"],
                "method": resolved["method"],
            }
            if "mmr_lambda" in resolved:
                params["mmr_lambda"] = resolved["mmr_lambda"]
            if "manual_chunks" in resolved:
                params["manual_chunks"] = list(resolved["manual_chunks"])
            return params
        if step.kind is StepKind.LLM:
            params = {
                "prompt_template": escape_template(resolved["prompt"]),
                "max_tokens": resolved["max_tokens"],
                "temperature": resolved["temperature"],
            }
            if "parse_json_list_key" in resolved:
                params["parse_json_list_key"] = resolved["parse_json_list_key"]
            return params
        if step.kind is StepKind.ANSWER:
            return {"template": escape_template(resolved["text"])}
        raise TypeError(f"cannot export {step.kind}")


class _Runner:
    """One linear execution of a pipeline, optionally replaying a prefix."""

    def __init__(
        self,
        engine: Engine,
        pipeline: PipelineDef,
        query_text: str,
        replay: list[TraceStep] | None,
        target: int | None,
        payload: OverridePayload | None,
    ) -> None:
        self.engine = engine
        self.pipeline = pipeline
        self.query_text = query_text
        self.replay = replay
        self.target = target
        self.payload = payload
        self.steps: list[TraceStep] = []

    def execute(self) -> list[TraceStep]:
        env: dict[str, _EnvVal] = {}
        self._exec_block(self.pipeline.steps, env, def_prefix=(), suffix="")
        return self.steps

    def _exec_block(
        self,
        stepdefs: tuple[StepDef, ...],
        env: dict[str, _EnvVal],
        def_prefix: tuple[int, ...],
        suffix: str,
    ) -> None:
        for pos, stepdef in enumerate(stepdefs):
            def_path = def_prefix + (pos,)
            if stepdef.when is not None:
                rendered = render_template(stepdef.when, _str_env(env), stepdef.name)
                if not _when_is_truthy(rendered):
                    continue
            if stepdef.kind is StepKind.FOREACH:
                self._exec_foreach(stepdef, env, def_path, suffix)
            else:
                step = self._exec_one(stepdef, env, def_path, suffix)
                env[stepdef.name] = _EnvVal(step.output, {"step": step.index})

    def _exec_foreach(
        self,
        stepdef: StepDef,
        env: dict[str, _EnvVal],
        def_path: tuple[int, ...],
        suffix: str,
    ) -> None:
        over = stepdef.params["over"]
        if over not in env:
            raise TemplateError(stepdef.name, over)
        value = env[over].value
        if isinstance(value, StringListOutput):
            items = list(value.items)
        elif isinstance(value, list):
            items = list(value)
        else:
            raise TemplateError(
                stepdef.name, over, f"foreach 'over' must reference a string-list output, got {type(value).__name__}"
            )
        var = stepdef.params.get("var", "item")
        agg_indexes: list[int] = []
        for item_pos, item in enumerate(items):
            inner = dict(env)
            inner[var] = _EnvVal(item, {"value": item})
            inner[f"{var}_index"] = _EnvVal(str(item_pos), {"value": str(item_pos)})
            before = len(self.steps)
            self._exec_block(stepdef.body, inner, def_path, f"{suffix}[{item_pos}]")
            if len(self.steps) > before:
                agg_indexes.append(self.steps[-1].index)
        env[stepdef.name] = _EnvVal(
            [render_output(self.steps[i].output) for i in agg_indexes],
            {"steps": agg_indexes},
        )

    def _exec_one(
        self,
        stepdef: StepDef,
        env: dict[str, _EnvVal],
        def_path: tuple[int, ...],
        suffix: str,
    ) -> TraceStep:
        index = len(self.steps)
        instance_name = stepdef.name + suffix
        replaying = self.target is not None and index < self.target
        overriding = self.target is not None and index == self.target

        if replaying and (self.replay is None or index >= len(self.replay)):
            raise ReplayDivergence(index, "recorded trace is shorter than the execution plan")

        applied: dict[str, Any] = {}
        if (replaying or overriding) and self.replay is not None and index < len(self.replay):
            applied = dict(self.replay[index].applied_overrides)
        if overriding and self.payload is not None:
            applied = _merge_override(applied, self.payload)

        resolved = self.engine._resolve(
            stepdef, env, self.pipeline, applied, query_text=self.query_text
        )
        env_refs = {name: val.ref for name, val in env.items()}

        if replaying:
            recorded = self.replay[index]
            if (
                recorded.step_name != instance_name
                or recorded.kind != stepdef.kind
                or recorded.resolved_params != resolved
            ):
                raise ReplayDivergence(
                    index,
                    f"recorded step {index} ({recorded.step_name}) no longer matches "
                    f"the pipeline definition",
                )
            step = TraceStep(
                index=index,
                step_name=instance_name,
                kind=stepdef.kind,
                resolved_params=resolved,
                input_digest=recorded.input_digest,
                output=recorded.output,
                duration_ms=0.0,
                origin=ORIGIN_REPLAYED,
                def_path=def_path,
                env_refs=env_refs,
                applied_overrides=applied,
            )
        else:
            started = time.perf_counter()
            output = self.engine._execute_kind(
                stepdef.kind, resolved, applied, index, instance_name
            )
            step = TraceStep(
                index=index,
                step_name=instance_name,
                kind=stepdef.kind,
                resolved_params=resolved,
                input_digest=_input_digest(instance_name, stepdef.kind, resolved),
                output=output,
                duration_ms=(time.perf_counter() - started) * 1000.0,
                origin=ORIGIN_OVERRIDDEN if overriding else ORIGIN_RECORDED,
                def_path=def_path,
                env_refs=env_refs,
                applied_overrides=applied,
            )
        self.steps.append(step)
        self.engine._emit("step_finished", index=index)
        return step
