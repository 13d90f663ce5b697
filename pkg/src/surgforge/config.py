"""Pipeline configuration: YAML file, environment overrides, shipped defaults.

Endpoint strings may be overridden per kind with SURGFORGE_ENDPOINT_<KIND>
(dots become underscores, uppercase), e.g. SURGFORGE_ENDPOINT_EMBED_IMAGE.
"""

import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from surgforge.backend.protocol import Kind
from surgforge.errors import ConfigError

DEFAULT_N_FRAMES = 24
DEFAULT_VOTE_THRESHOLD = 0.5
DEFAULT_CONTEXT_WINDOW = 5
DEFAULT_EMBED_DIM = 64
DEFAULT_SUMMARY_CHARS = 2000


@dataclass
class PipelineConfig:
    corpus_dir: Path
    workdir: Path
    endpoints: dict[str, str] = field(
        default_factory=lambda: {kind: "mock" for kind in Kind.ALL}
    )
    # stage toggles mirroring the three curation axes
    enable_mlsc: bool = True  # multi-level semantic captioning (hierarchical stage)
    enable_dmf: bool = True  # dual-modality filtering
    enable_ce: bool = True  # contextual enrichment
    n_frames: int = DEFAULT_N_FRAMES
    vote_threshold: float = DEFAULT_VOTE_THRESHOLD
    visual_strategy: str = "vote"  # or "mean_pool"
    context_window: int = DEFAULT_CONTEXT_WINDOW
    embed_dim: int = DEFAULT_EMBED_DIM
    summary_chars: int = DEFAULT_SUMMARY_CHARS
    seed: int = 0
    workers: int = 1
    taxonomy_path: Path | None = None
    prompts_path: Path | None = None

    def __post_init__(self):
        if not 0.0 < self.vote_threshold < 1.0:
            raise ConfigError(f"vote_threshold must be in (0,1), got {self.vote_threshold}")
        if self.context_window < 0:
            raise ConfigError("context_window must be >= 0")
        if self.n_frames < 1:
            raise ConfigError("n_frames must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.visual_strategy not in ("vote", "mean_pool"):
            raise ConfigError(f"unknown visual_strategy {self.visual_strategy!r}")
        unknown = set(self.endpoints) - set(Kind.ALL)
        if unknown:
            raise ConfigError(f"endpoints configured for unknown kinds: {sorted(unknown)}")


def load_config(path: str | Path | None, **overrides) -> PipelineConfig:
    """Read the YAML config, apply env-var endpoint overrides, then kwargs."""
    doc: dict = {}
    if path is not None:
        try:
            doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {path} does not parse: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a mapping")

    endpoints = {kind: "mock" for kind in Kind.ALL}
    endpoints.update(doc.pop("endpoints", {}) or {})
    for kind in Kind.ALL:
        env_value = os.environ.get(Kind.env_var(kind))
        if env_value:
            endpoints[kind] = env_value

    known = {
        "corpus_dir", "workdir", "enable_mlsc", "enable_dmf", "enable_ce",
        "n_frames", "vote_threshold", "visual_strategy", "context_window",
        "embed_dim", "summary_chars", "seed", "workers", "taxonomy_path",
        "prompts_path",
    }
    bad_keys = set(doc) - known
    if bad_keys:
        raise ConfigError(f"unknown config keys: {sorted(bad_keys)}")
    merged = {**doc, **{k: v for k, v in overrides.items() if v is not None}}
    merged["endpoints"] = endpoints
    for key in ("corpus_dir", "workdir"):
        if key not in merged:
            raise ConfigError(f"config is missing required key {key!r}")
        merged[key] = Path(merged[key])
    for key in ("taxonomy_path", "prompts_path"):
        if merged.get(key) is not None:
            merged[key] = Path(merged[key])
    try:
        return PipelineConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def default_data_path(name: str) -> Path:
    """Path of a data file shipped inside the package."""
    return Path(resources.files("surgforge").joinpath("data", name))


def load_prompt_sets(path: Path | None = None) -> dict:
    """Class-name -> prompt list groups for the visual filter and zero-shot
    evaluation; content is configuration, not code."""
    if path is None:
        path = default_data_path("prompts/visual_filter.yaml")
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ConfigError(f"prompt file {path} must be a mapping")
    return doc
