"""Pipeline definitions: step model, template language, TOML/JSON loading.

A pipeline is an ordered list of steps (query, retrieve, llm, answer, foreach)
with a defaults block for retriever parameters. Templates use {name}
placeholders referring to earlier step outputs or foreach-bound variables;
literal braces are written {{ and }}.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import TemplateError
from .index_store import DEFAULT_MMR_LAMBDA, RetrievalMethod


class StepKind(str, Enum):
    QUERY = "query"
    RETRIEVE = "retrieve"
    LLM = "llm"
    ANSWER = "answer"
    FOREACH = "foreach"


@dataclass(frozen=True)
class RetrieverDefaults:
    chunk_size: int = 200
    chunk_overlap: int = 0
    k: int = 5
    method: RetrievalMethod = RetrievalMethod.COSINE
    mmr_lambda: float = DEFAULT_MMR_LAMBDA

    def to_json(self) -> dict:
        return {
            "chunk_size": self.chunk_size,
            "chunk_overlap": self.chunk_overlap,
            "k": self.k,
            "method": self.method.value,
            "mmr_lambda": self.mmr_lambda,
        }


@dataclass(frozen=True)
class StepDef:
    name: str
    kind: StepKind
    params: dict[str, Any] = field(default_factory=dict)
    body: tuple["StepDef", ...] = ()
    when: str | None = None

    def to_json(self) -> dict:
        data: dict[str, Any] = {"name": self.name, "kind": self.kind.value}
        data.update(self.params)
        if self.when is not None:
            data["when"] = self.when
        if self.body:
            data["body"] = [s.to_json() for s in self.body]
        return data


@dataclass(frozen=True)
class PipelineDef:
    name: str
    steps: tuple[StepDef, ...]
    defaults: RetrieverDefaults = RetrieverDefaults()

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "defaults": self.defaults.to_json(),
            "steps": [s.to_json() for s in self.steps],
        }


def pipeline_digest(pipeline: PipelineDef) -> str:
    blob = json.dumps(pipeline.to_json(), sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# ---------- template language ----------


def render_template(template: str, env: dict[str, str], step_name: str) -> str:
    """Substitute {name} placeholders from env; {{ and }} are literal braces."""
    out: list[str] = []
    i = 0
    n = len(template)
    while i < n:
        ch = template[i]
        if ch == "{":
            if i + 1 < n and template[i + 1] == "{":
                out.append("{")
                i += 2
                continue
            end = template.find("}", i + 1)
            if end == -1:
                raise TemplateError(step_name, template[i + 1 :], "unterminated placeholder")
            name = template[i + 1 : end]
            if not name.replace("_", "a").isalnum():
                raise TemplateError(step_name, name, f"invalid placeholder name {name!r}")
            if name not in env:
                raise TemplateError(step_name, name)
            out.append(env[name])
            i = end + 1
            continue
        if ch == "}":
            if i + 1 < n and template[i + 1] == "}":
                out.append("}")
                i += 2
                continue
            raise TemplateError(step_name, "", "unmatched '}' in template")
        out.append(ch)
        i += 1
    return "".join(out)


def template_placeholders(template: str) -> set[str]:
    names: set[str] = set()
    i = 0
    n = len(template)
    while i < n:
        if template[i] == "{":
            if i + 1 < n and template[i + 1] == "{":
                i += 2
                continue
            end = template.find("}", i + 1)
            if end == -1:
                break
            names.add(template[i + 1 : end])
            i = end + 1
            continue
        if template[i] == "}" and i + 1 < n and template[i + 1] == "}":
            i += 2
            continue
        i += 1
    return names


def escape_template(text: str) -> str:
    """Quote literal text so rendering it reproduces the text exactly."""
    return text.replace("{", "{{").replace("}", "}}")


# ---------- validation ----------

_TEMPLATE_PARAMS = {
    StepKind.QUERY: (),
    StepKind.RETRIEVE: ("query_template",),
    StepKind.LLM: ("prompt_template",),
    StepKind.ANSWER: ("template",),
    StepKind.FOREACH: (),
}


class PipelineValidationError(ValueError):
    pass


def validate_pipeline(pipeline: PipelineDef) -> None:
    if not pipeline.steps:
        raise PipelineValidationError("pipeline has no steps")
    if pipeline.steps[0].kind is not StepKind.QUERY:
        raise PipelineValidationError("first step must be a query step")
    if pipeline.steps[-1].kind is not StepKind.ANSWER:
        raise PipelineValidationError("last step must be an answer step")

    names: set[str] = set()

    def walk(steps: tuple[StepDef, ...], visible: set[str]) -> set[str]:
        for step in steps:
            if step.name in names:
                raise PipelineValidationError(f"duplicate step name {step.name!r}")
            if not step.name or not step.name.replace("_", "a").isalnum():
                raise PipelineValidationError(
                    f"step name {step.name!r} must be alphanumeric/underscore"
                )
            names.add(step.name)
            _validate_step(step, visible)
            if step.kind is StepKind.FOREACH:
                var = step.params.get("var", "item")
                # body names go out of scope afterwards; the foreach name
                # itself binds the per-iteration results downstream
                walk(step.body, set(visible) | {var, f"{var}_index"})
            visible = visible | {step.name}
        return visible

    walk(pipeline.steps, set())


def _validate_step(step: StepDef, visible: set[str]) -> None:
    for param in _TEMPLATE_PARAMS[step.kind]:
        if param not in step.params:
            raise PipelineValidationError(f"step {step.name!r} ({step.kind.value}) needs {param}")
    templates = [step.params[p] for p in _TEMPLATE_PARAMS[step.kind]]
    if step.when is not None:
        templates.append(step.when)
    for template in templates:
        for placeholder in template_placeholders(template):
            if placeholder not in visible:
                raise TemplateError(step.name, placeholder)
    if step.kind is StepKind.FOREACH:
        over = step.params.get("over")
        if not over:
            raise PipelineValidationError(f"foreach step {step.name!r} needs 'over'")
        if over not in visible:
            raise TemplateError(step.name, over)
        if not step.body:
            raise PipelineValidationError(f"foreach step {step.name!r} has an empty body")
    if step.kind is StepKind.RETRIEVE:
        method = step.params.get("method")
        if method is not None:
            RetrievalMethod(method)  # raises ValueError on bad value
    if step.kind is StepKind.LLM:
        key = step.params.get("parse_json_list_key")
        if key is not None and not isinstance(key, str):
            raise PipelineValidationError("parse_json_list_key must be a string")


# ---------- loading ----------

_STEP_FIELDS = {
    StepKind.QUERY: {"text"},
    StepKind.RETRIEVE: {
        "query_template",
        "k",
        "chunk_size",
        "chunk_overlap",
        "method",
        "mmr_lambda",
        "manual_chunks",
    },
    StepKind.LLM: {"prompt_template", "max_tokens", "temperature", "parse_json_list_key"},
    StepKind.ANSWER: {"template"},
    StepKind.FOREACH: {"over", "var"},
}


def _step_from_data(data: dict) -> StepDef:
    if "kind" not in data or "name" not in data:
        raise PipelineValidationError(f"step requires 'name' and 'kind': {data}")
    kind = StepKind(data["kind"])
    allowed = _STEP_FIELDS[kind]
    params = {k: v for k, v in data.items() if k in allowed}
    unknown = set(data) - allowed - {"name", "kind", "when", "body"}
    if unknown:
        raise PipelineValidationError(
            f"step {data['name']!r}: unknown fields {sorted(unknown)} for kind {kind.value}"
        )
    body: tuple[StepDef, ...] = ()
    if kind is StepKind.FOREACH:
        body = tuple(_step_from_data(b) for b in data.get("body", []))
    elif "body" in data:
        raise PipelineValidationError(f"step {data['name']!r}: only foreach steps take a body")
    return StepDef(
        name=data["name"],
        kind=kind,
        params=params,
        body=body,
        when=data.get("when"),
    )


def pipeline_from_data(data: dict) -> PipelineDef:
    defaults_data = data.get("defaults", {})
    defaults = RetrieverDefaults(
        chunk_size=int(defaults_data.get("chunk_size", 200)),
        chunk_overlap=int(defaults_data.get("chunk_overlap", 0)),
        k=int(defaults_data.get("k", 5)),
        method=RetrievalMethod(defaults_data.get("method", "cosine")),
        mmr_lambda=float(defaults_data.get("mmr_lambda", DEFAULT_MMR_LAMBDA)),
    )
    steps = tuple(_step_from_data(s) for s in data.get("steps", []))
    pipeline = PipelineDef(name=data.get("name", "pipeline"), steps=steps, defaults=defaults)
    validate_pipeline(pipeline)
    return pipeline


def load_pipeline(path: str | Path) -> PipelineDef:
    """Load a pipeline definition from a .toml or .json file."""
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix.lower() == ".json":
        data = json.loads(raw.decode("utf-8"))
    else:
        data = tomllib.loads(raw.decode("utf-8"))
    return pipeline_from_data(data)


def parse_step_fragment(text: str) -> StepDef:
    """Parse a single [[steps]] TOML fragment, as produced by export."""
    data = tomllib.loads(text)
    steps = data.get("steps", [])
    if len(steps) != 1:
        raise PipelineValidationError(f"fragment must contain exactly one step, got {len(steps)}")
    return _step_from_data(steps[0])


# ---------- TOML emission (export / scaffolding) ----------


def _toml_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        escaped = (
            value.replace("\\", "\\\\")
            .replace('"', '\\"')
            .replace("\n", "\\n")
            .replace("\r", "\\r")
            .replace("\t", "\\t")
        )
        escaped = "".join(c if c >= " " or c in "\n" else f"\\u{ord(c):04X}" for c in escaped)
        return f'"{escaped}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot emit TOML for {type(value)}")


def step_fragment(step: StepDef) -> str:
    """Emit one step as a [[steps]] TOML fragment (round-trips via parse)."""
    lines = ["[[steps]]", f'name = "{step.name}"', f'kind = "{step.kind.value}"']
    for key in sorted(step.params):
        value = step.params[key]
        if isinstance(value, RetrievalMethod):
            value = value.value
        lines.append(f"{key} = {_toml_value(value)}")
    if step.when is not None:
        lines.append(f"when = {_toml_value(step.when)}")
    return "\n".join(lines) + "\n"


BASELINE_PIPELINE_TOML = '''name = "baseline"

[defaults]
chunk_size = 200
chunk_overlap = 0
k = 5
method = "cosine"

[[steps]]
name = "question"
kind = "query"

[[steps]]
name = "context"
kind = "retrieve"
query_template = "{question}"

[[steps]]
name = "draft"
kind = "llm"
prompt_template = """
Answer the question using only the context below.
Context:
{context}
Question: {question}"""

[[steps]]
name = "final"
kind = "answer"
template = "{draft}"
'''


def baseline_pipeline() -> PipelineDef:
    """The shipped sample pipeline: size 200, no overlap, k=5, cosine retrieval."""
    return pipeline_from_data(tomllib.loads(BASELINE_PIPELINE_TOML))
