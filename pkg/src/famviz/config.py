"""Pipeline configuration: JSON file plus command-line overrides."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union

from .errors import FamvizError


class ConfigError(FamvizError):
    pass


@dataclass
class FamilyInput:
    family_id: str
    frames: str
    labels: str | None = None


@dataclass
class GridConfig:
    window_len: float = 2.0
    hop: float = 0.2


@dataclass
class CodebookConfig:
    k: int = 50
    n_assign: int = 5
    seed: int = 0
    max_iters: int = 300
    tol: float = 1e-6


@dataclass
class ReducerConfig:
    method: str = "tsne"
    seed: int = 0
    scope: str = "combined"
    perplexity: float = 30.0
    n_iters: int = 1000
    early_exaggeration: float = 12.0
    learning_rate: float = 200.0


@dataclass
class SubsampleConfig:
    enabled: bool = True
    n_clusters: int = 8
    per_cluster: int = 100
    seed: int = 0


@dataclass
class RenderConfig:
    width: int = 720
    height: int = 720
    margin: int = 36
    min_radius: float = 2.0
    max_radius: float = 12.0
    legend: bool = True
    per_family: bool = True
    palette: dict = field(default_factory=dict)


@dataclass
class ThresholdConfig:
    confidence: float = 0.8
    energy: Union[str, float, None] = "auto"


@dataclass
class PipelineConfig:
    families: list = field(default_factory=list)
    grid: GridConfig = field(default_factory=GridConfig)
    codebook: CodebookConfig = field(default_factory=CodebookConfig)
    window_len: float = 30.0
    reducer: ReducerConfig = field(default_factory=ReducerConfig)
    subsample: SubsampleConfig = field(default_factory=SubsampleConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    out: str = "famviz_out"
    threads: int = 1

    def set_seed(self, seed: int) -> None:
        self.codebook.seed = seed
        self.reducer.seed = seed
        self.subsample.seed = seed

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _type_ok(value: Any, tp: Any) -> bool:
    origin = typing.get_origin(tp)
    if tp is Any:
        return True
    if origin is Union:
        return any(_type_ok(value, t) for t in typing.get_args(tp))
    if tp is type(None):
        return value is None
    if tp is bool:
        return isinstance(value, bool)
    if tp is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if tp is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if tp is str:
        return isinstance(value, str)
    if tp in (list, dict) or origin in (list, dict):
        return isinstance(value, origin or tp)
    return True


def _build(cls, data: Any, where: str, source: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: {where or 'top level'} must be an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{source}: unknown field {where + '.' if where else ''}{unknown[0]}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value, tp = data[f.name], hints[f.name]
        path = f"{where}.{f.name}" if where else f.name
        if dataclasses.is_dataclass(tp):
            kwargs[f.name] = _build(tp, value, path, source)
        elif not _type_ok(value, tp):
            raise ConfigError(f"{source}: field {path} has invalid value {value!r}")
        else:
            kwargs[f.name] = float(value) if tp is float else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{source}: {where or 'top level'}: {exc}") from None


def _validate(cfg: PipelineConfig, source: str) -> None:
    def bad(field_name: str, why: str):
        raise ConfigError(f"{source}: field {field_name} {why}")

    if cfg.reducer.method.lower() not in ("pca", "tsne"):
        bad("reducer.method", "must be 'pca' or 'tsne'")
    if cfg.reducer.scope not in ("combined", "per_family"):
        bad("reducer.scope", "must be 'combined' or 'per_family'")
    if cfg.codebook.k < 1:
        bad("codebook.k", "must be at least 1")
    if not 1 <= cfg.codebook.n_assign <= cfg.codebook.k:
        bad("codebook.n_assign", "must lie in [1, codebook.k]")
    if cfg.window_len <= 0:
        bad("window_len", "must be positive")
    if cfg.subsample.n_clusters < 1 or cfg.subsample.per_cluster < 1:
        bad("subsample", "needs positive n_clusters and per_cluster")
    if isinstance(cfg.thresholds.energy, str) and cfg.thresholds.energy != "auto":
        bad("thresholds.energy", "must be 'auto', a number or null")
    if cfg.threads < 1:
        bad("threads", "must be at least 1")


def load_config(path: str | Path | None = None, data: dict | None = None) -> PipelineConfig:
    """Read a config; relative family paths resolve against the file's folder."""
    source = str(path) if path else "<config>"
    base = None
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{source}: invalid JSON ({exc})") from None
        base = Path(path).resolve().parent
    cfg = _build(PipelineConfig, data or {}, "", source)
    families = []
    for i, fam in enumerate(cfg.families):
        fam_cfg = _build(FamilyInput, fam, f"families[{i}]", source)
        if base is not None:
            fam_cfg.frames = str(base / fam_cfg.frames)
            if fam_cfg.labels:
                fam_cfg.labels = str(base / fam_cfg.labels)
        families.append(fam_cfg)
    cfg.families = families
    ids = [f.family_id for f in families]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"{source}: field families has duplicate family_id values")
    _validate(cfg, source)
    return cfg
