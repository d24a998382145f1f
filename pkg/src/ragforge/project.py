"""Project configuration and runtime wiring.

A project is one directory holding the source corpus, a pipeline file, an
optional ragforge.toml, and all derived state under .ragforge/ (indexes,
embedding cache, goldens). Deleting .ragforge/ resets everything derived.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .corpus import ChunkConfig, Corpus, load_corpus
from .embedder import EmbeddingCache, LocalHashEmbedder, RemoteEmbedder
from .engine import Engine, Session
from .errors import IoError
from .evalstore import DEFAULT_THRESHOLD, GoldenStore
from .index_store import DEFAULT_GRID_OVERLAPS, DEFAULT_GRID_SIZES, IndexStore, default_grid
from .llm import MockLlm, RemoteLlm
from .pipeline import BASELINE_PIPELINE_TOML, PipelineDef, load_pipeline

CONFIG_FILENAME = "ragforge.toml"
STATE_DIRNAME = ".ragforge"


@dataclass
class ProjectConfig:
    corpus_dir: str = "corpus"
    pipeline_path: str = "pipeline.toml"
    grid_sizes: tuple[int, ...] = DEFAULT_GRID_SIZES
    grid_overlaps: tuple[int, ...] = DEFAULT_GRID_OVERLAPS
    embedder_provider: str = "local"
    llm_provider: str = "mock"
    eval_threshold: float = DEFAULT_THRESHOLD
    raptor_branching: int = 4
    raptor_max_levels: int = 5
    include_globs: tuple[str, ...] = ("**/*.txt", "**/*.md")


def load_project_config(project_dir: str | Path) -> ProjectConfig:
    path = Path(project_dir) / CONFIG_FILENAME
    if not path.exists():
        return ProjectConfig()
    data = tomllib.loads(path.read_text(encoding="utf-8"))
    grid = data.get("grid", {})
    providers = data.get("providers", {})
    eval_cfg = data.get("eval", {})
    raptor = data.get("raptor", {})
    cfg = ProjectConfig(
        corpus_dir=data.get("corpus_dir", "corpus"),
        pipeline_path=data.get("pipeline", "pipeline.toml"),
        grid_sizes=tuple(grid.get("sizes", DEFAULT_GRID_SIZES)),
        grid_overlaps=tuple(grid.get("overlaps", DEFAULT_GRID_OVERLAPS)),
        embedder_provider=providers.get("embedder", "local"),
        llm_provider=providers.get("llm", "mock"),
        eval_threshold=float(eval_cfg.get("threshold", DEFAULT_THRESHOLD)),
        raptor_branching=int(raptor.get("branching", 4)),
        raptor_max_levels=int(raptor.get("max_levels", 5)),
        include_globs=tuple(data.get("include_globs", ("**/*.txt", "**/*.md"))),
    )
    for pair in [(s, o) for s in cfg.grid_sizes for o in cfg.grid_overlaps if o < s]:
        ChunkConfig(chunk_size=pair[0], chunk_overlap=pair[1])  # validates
    return cfg


def _resolve_inside(project_dir: Path, relative: str, what: str) -> Path:
    resolved = (project_dir / relative).resolve()
    if not str(resolved).startswith(str(project_dir.resolve())):
        raise IoError(f"{what} {relative!r} resolves outside the project directory", path=str(resolved))
    return resolved


def make_embedder(config: ProjectConfig):
    if config.embedder_provider == "local":
        return LocalHashEmbedder()
    if config.embedder_provider == "remote":
        return RemoteEmbedder()
    raise ValueError(f"unknown embedder provider {config.embedder_provider!r}")


def make_llm(config: ProjectConfig):
    if config.llm_provider == "mock":
        return MockLlm()
    if config.llm_provider == "remote":
        return RemoteLlm()
    raise ValueError(f"unknown llm provider {config.llm_provider!r}")


def init_project_files(project_dir: str | Path) -> list[str]:
    """Write a baseline pipeline.toml and ragforge.toml if they do not exist."""
    project_dir = Path(project_dir)
    project_dir.mkdir(parents=True, exist_ok=True)
    created = []
    pipeline_path = project_dir / "pipeline.toml"
    if not pipeline_path.exists():
        pipeline_path.write_text(BASELINE_PIPELINE_TOML, encoding="utf-8")
        created.append(pipeline_path.name)
    config_path = project_dir / CONFIG_FILENAME
    if not config_path.exists():
        config_path.write_text(
            'corpus_dir = "corpus"\npipeline = "pipeline.toml"\n\n'
            '[providers]\nembedder = "local"\nllm = "mock"\n\n'
            f"[eval]\nthreshold = {DEFAULT_THRESHOLD}\n",
            encoding="utf-8",
        )
        created.append(config_path.name)
    return created


@dataclass
class ProjectRuntime:
    """Everything a server or CLI invocation needs, built from one project dir."""

    project_dir: Path
    config: ProjectConfig
    corpus: Corpus
    embedder: object
    llm: object
    embed_cache: EmbeddingCache
    store: IndexStore
    goldens: GoldenStore
    engine: Engine
    session: Session
    pipeline_path: Path
    _pipeline_mtime: float = field(default=0.0)

    @classmethod
    def open(
        cls,
        project_dir: str | Path,
        *,
        event_sink=None,
        config: ProjectConfig | None = None,
    ) -> "ProjectRuntime":
        project_dir = Path(project_dir).resolve()
        config = config or load_project_config(project_dir)
        corpus_dir = _resolve_inside(project_dir, config.corpus_dir, "corpus_dir")
        pipeline_path = _resolve_inside(project_dir, config.pipeline_path, "pipeline")
        state = project_dir / STATE_DIRNAME

        corpus = load_corpus(corpus_dir, config.include_globs)
        embedder = make_embedder(config)
        llm = make_llm(config)
        embed_cache = EmbeddingCache(state / "embed_cache")
        store = IndexStore(
            state / "indexes",
            corpus,
            embedder,
            llm,
            embed_cache=embed_cache,
            raptor_branching=config.raptor_branching,
            raptor_max_levels=config.raptor_max_levels,
        )
        goldens = GoldenStore(state)
        engine = Engine(store, llm, event_sink=event_sink)
        pipeline = load_pipeline(pipeline_path)
        session = engine.new_session(pipeline)
        runtime = cls(
            project_dir=project_dir,
            config=config,
            corpus=corpus,
            embedder=embedder,
            llm=llm,
            embed_cache=embed_cache,
            store=store,
            goldens=goldens,
            engine=engine,
            session=session,
            pipeline_path=pipeline_path,
        )
        runtime._pipeline_mtime = pipeline_path.stat().st_mtime
        return runtime

    def grid(self) -> list[ChunkConfig]:
        return default_grid(self.config.grid_sizes, self.config.grid_overlaps)

    def maybe_reload_pipeline(self) -> bool:
        """Re-read the pipeline file if it changed on disk; True if reloaded."""
        mtime = self.pipeline_path.stat().st_mtime
        if mtime == self._pipeline_mtime:
            return False
        pipeline: PipelineDef = load_pipeline(self.pipeline_path)
        self.session.update_pipeline(pipeline)
        self._pipeline_mtime = mtime
        return True
