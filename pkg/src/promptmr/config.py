"""Experiment configuration: versioned YAML schema, dotted-key overrides,
and a frozen resolved copy written next to every run's checkpoints."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .refine import RefineConfig
from .unrolled import UnrolledConfig

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SimConfig:
    grid: tuple[int, int] = (64, 64)
    n_coils: int = 4
    n_frames: int = 12
    noise_std: float = 0.005
    motion_amplitude: float = 0.15
    n_train: int = 40
    n_val: int = 10
    n_test: int = 10


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 2e-4
    final_lr: float = 2e-5  # decayed rate for the last epoch
    weight_decay: float = 0.01
    epochs: int = 12
    steps_per_epoch: int = 100


@dataclass(frozen=True)
class ReconConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    data_dir: str = ""
    checkpoint_dir: str = "checkpoints"
    task: str = "all"  # temporal | contrast | all
    accelerations: tuple[int, ...] = (4, 8, 10)
    mask_scheme: str = "equispaced"
    acs_lines: int = 16
    sim: SimConfig = field(default_factory=SimConfig)
    stage1: UnrolledConfig = field(default_factory=UnrolledConfig)
    stage2: RefineConfig = field(default_factory=RefineConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema_version {self.schema_version}")
        if self.task not in ("temporal", "contrast", "all"):
            raise ConfigError(f"task must be temporal|contrast|all, got {self.task!r}")
        if any(a < 1 for a in self.accelerations):
            raise ConfigError("accelerations must be >= 1")

    def tasks(self) -> tuple[str, ...]:
        return ("temporal", "contrast") if self.task == "all" else (self.task,)

    def resolved_data_dir(self) -> Path:
        d = self.data_dir or os.environ.get("PROMPTMR_DATA_DIR", "")
        if not d:
            raise ConfigError("no data_dir configured and PROMPTMR_DATA_DIR is unset")
        return Path(d)


_SECTIONS = {"sim": SimConfig, "stage1": UnrolledConfig, "stage2": RefineConfig, "optim": OptimConfig}
_TUPLE_FIELDS = {"grid", "accelerations", "shift_offsets"}


def _build_section(cls, data: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    kwargs = {k: tuple(v) if k in _TUPLE_FIELDS and isinstance(v, list) else v for k, v in data.items()}
    return cls(**kwargs)


def config_from_dict(data: dict) -> ReconConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    data = dict(data)
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in data:
            section = data.pop(name)
            if not isinstance(section, dict):
                raise ConfigError(f"config section {name!r} must be a mapping")
            kwargs[name] = _build_section(cls, section)
    names = {f.name for f in dataclasses.fields(ReconConfig)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    for k, v in data.items():
        kwargs[k] = tuple(v) if k in _TUPLE_FIELDS and isinstance(v, list) else v
    try:
        return ReconConfig(**kwargs)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def config_to_dict(cfg: ReconConfig) -> dict:
    def convert(obj):
        if dataclasses.is_dataclass(obj):
            return {f.name: convert(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, tuple):
            return [convert(v) for v in obj]
        return obj

    return convert(cfg)


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply `key=value` / `section.key=value` overrides; values parsed as YAML."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse override value {raw!r}: {e}") from e
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {key!r} crosses a non-mapping value")
        node[parts[-1]] = value
    return data


def load_config(path: str | Path | None, overrides: list[str] | None = None, seed: int | None = None) -> ReconConfig:
    data: dict = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"invalid YAML in {path}: {e}") from e
    if overrides:
        data = apply_overrides(data, overrides)
    if seed is not None:
        data["seed"] = seed
    return config_from_dict(data)


def write_frozen_config(cfg: ReconConfig, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=True), encoding="utf-8")
