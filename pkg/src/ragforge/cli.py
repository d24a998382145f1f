"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage error. All commands are
non-interactive; `run` with the mock providers is fully offline.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .corpus import ChunkConfig
from .engine import AnswerOutput
from .errors import RagforgeError, StepFailure
from .evalstore import run_suite
from .index_store import ALL_METHODS, RetrievalMethod
from .pipeline import load_pipeline
from .project import ProjectRuntime, init_project_files
from .server import DEFAULT_PORT


def _parse_configs(value: str) -> list[ChunkConfig]:
    configs = []
    for part in value.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            size_s, overlap_s = part.split("x")
            configs.append(ChunkConfig(chunk_size=int(size_s), chunk_overlap=int(overlap_s)))
        except ValueError as exc:
            raise click.BadParameter(f"bad config {part!r} ({exc}); expected SIZExOVERLAP") from exc
    if not configs:
        raise click.BadParameter("no configs given")
    return configs


def _parse_methods(value: str) -> tuple[RetrievalMethod, ...]:
    methods = []
    for part in value.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            methods.append(RetrievalMethod(part))
        except ValueError as exc:
            raise click.BadParameter(
                f"unknown method {part!r}; expected one of "
                f"{', '.join(m.value for m in RetrievalMethod)}"
            ) from exc
    return tuple(methods) or ALL_METHODS


@click.group()
@click.option(
    "--project",
    "project_dir",
    type=click.Path(file_okay=False),
    default=".",
    show_default=True,
    help="Project directory.",
)
@click.pass_context
def main(ctx: click.Context, project_dir: str) -> None:
    """ragforge: interactive debugging for RAG pipelines."""
    ctx.ensure_object(dict)
    ctx.obj["project_dir"] = Path(project_dir)


@main.command()
@click.pass_context
def init(ctx: click.Context) -> None:
    """Write a baseline pipeline.toml and ragforge.toml if absent."""
    created = init_project_files(ctx.obj["project_dir"])
    if created:
        click.echo(f"created: {', '.join(created)}")
    else:
        click.echo("project files already present")


@main.group()
def index() -> None:
    """Index management."""


@index.command("build")
@click.option("--configs", "configs_spec", default=None, help="Comma list of SIZExOVERLAP pairs.")
@click.option("--methods", "methods_spec", default=None, help="Comma list of retrieval methods.")
@click.pass_context
def index_build(ctx: click.Context, configs_spec: str | None, methods_spec: str | None) -> None:
    """Pre-materialize retrieval indexes for the config grid."""
    configs = _parse_configs(configs_spec) if configs_spec else None
    methods = _parse_methods(methods_spec) if methods_spec else ALL_METHODS
    try:
        runtime = ProjectRuntime.open(ctx.obj["project_dir"])
        manifest = runtime.store.build_all(configs if configs else runtime.grid(), methods)
    except RagforgeError as exc:
        click.echo(f"error: {exc.message}", err=True)
        sys.exit(1)
    click.echo(f"{'key':<58} {'chunks':>7} {'build ms':>9}")
    for entry in manifest.entries:
        key = entry.key
        label = f"s{key.chunk_size} o{key.chunk_overlap} {key.method.value}"
        click.echo(f"{label:<58} {entry.chunk_count:>7} {entry.build_ms:>9.1f}")
    click.echo(f"{manifest.built_count} built, {manifest.reused_count} reused")


@main.command()
@click.option("--query", "query_text", required=True, help="Query to run the pipeline on.")
@click.option("--json", "as_json", is_flag=True, help="Dump the full trace as JSON.")
@click.pass_context
def run(ctx: click.Context, query_text: str, as_json: bool) -> None:
    """Run the pipeline once and print the trace summary and final answer."""
    try:
        runtime = ProjectRuntime.open(ctx.obj["project_dir"])
    except RagforgeError as exc:
        click.echo(f"error: {exc.message}", err=True)
        sys.exit(1)
    failed = False
    try:
        runtime.engine.run_pipeline(runtime.session, query_text)
    except StepFailure as exc:
        failed = True
        click.echo(f"error: {exc.message}", err=True)
    except RagforgeError as exc:
        click.echo(f"error: {exc.message}", err=True)
        sys.exit(1)

    steps = runtime.session.trace
    if as_json:
        click.echo(json.dumps({"steps": [s.to_json() for s in steps]}, ensure_ascii=False))
    else:
        for step in steps:
            click.echo(f"[{step.index}] {step.step_name} ({step.kind.value}) {step.duration_ms:.1f} ms")
        if steps and isinstance(steps[-1].output, AnswerOutput):
            click.echo("answer: " + steps[-1].output.text)
    if failed:
        sys.exit(1)


@main.command()
@click.option("--port", default=DEFAULT_PORT, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option(
    "--ui-dir",
    type=click.Path(file_okay=False),
    default=None,
    help="Directory of built UI assets to serve at /.",
)
@click.pass_context
def serve(ctx: click.Context, port: int, host: str, ui_dir: str | None) -> None:
    """Serve the debugging API (and UI assets, if built)."""
    from .server import serve as _serve

    try:
        _serve(ctx.obj["project_dir"], port=port, host=host, static_dir=ui_dir)
    except RagforgeError as exc:
        click.echo(f"error: {exc.message}", err=True)
        sys.exit(1)


@main.group()
def eval() -> None:
    """Golden-answer evaluation."""


@eval.command("run")
@click.option("--pipeline", "pipeline_path", default=None, help="Pipeline file override.")
@click.option("--threshold", type=float, default=None, help="Pass threshold (default from config).")
@click.option("--json", "json_path", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def eval_run(
    ctx: click.Context, pipeline_path: str | None, threshold: float | None, json_path: str | None
) -> None:
    """Run every golden query and score answers; exit 0 iff all rows pass."""
    try:
        runtime = ProjectRuntime.open(ctx.obj["project_dir"])
        pipeline = (
            load_pipeline(pipeline_path) if pipeline_path else runtime.session.pipeline
        )
        goldens = runtime.goldens.all()
        if not goldens:
            click.echo("error: no golden answers saved", err=True)
            sys.exit(1)
        report = run_suite(
            pipeline,
            goldens,
            runtime.engine,
            runtime.embedder,
            threshold=threshold if threshold is not None else runtime.config.eval_threshold,
            cache=runtime.embed_cache,
        )
    except RagforgeError as exc:
        click.echo(f"error: {exc.message}", err=True)
        sys.exit(1)

    for row in report.rows:
        mark = "PASS" if row.passed else "FAIL"
        shown = f"{row.similarity:.2f}" if row.similarity is not None else "n/a"
        click.echo(f"{mark} {shown} {row.query_text}")
    click.echo(
        f"{report.pass_count}/{len(report.rows)} passed "
        f"(threshold {report.threshold}, mean {report.mean_similarity:.3f})"
    )
    if json_path:
        Path(json_path).write_text(
            json.dumps(report.to_json(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )
    if not report.all_passed:
        sys.exit(1)


if __name__ == "__main__":
    main()
