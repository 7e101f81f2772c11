"""Pipeline configuration: one nested document covering every stage.

Configs are YAML (JSON is accepted as a subset). Unknown keys are rejected
with their dotted path, and ``key.sub=value`` overrides are applied on top
of the file before the dataclasses validate themselves.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .benchmark import BenchmarkConfig
from .errors import ConfigError


@dataclass
class StreamsConfig:
    method: str = "isa+"
    lop_structure: str = "projection"
    lof_structure: str = "pooling"
    temporal_pool: str = "mean"

    def __post_init__(self):
        if self.method not in ("pca", "isa", "isa+"):
            raise ValueError(f"unknown feature method {self.method!r}")
        for key in ("lop_structure", "lof_structure"):
            if getattr(self, key) not in ("projection", "pooling"):
                raise ValueError(f"{key} must be 'projection' or 'pooling'")
        if self.temporal_pool not in ("mean", "max"):
            raise ValueError(f"temporal_pool must be 'mean' or 'max', got {self.temporal_pool!r}")

    def structure(self, kind: str) -> str:
        return self.lop_structure if kind == "LOP" else self.lof_structure


@dataclass
class PipelineConfig(BenchmarkConfig):
    streams: StreamsConfig = field(default_factory=StreamsConfig)


def to_dict(cfg) -> dict:
    def plain(v):
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [plain(x) for x in v]
        return v
    return plain(dataclasses.asdict(cfg))


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = ", ".join(f"{path}.{k}" if path else k for k in unknown)
        raise ConfigError(f"unknown config key(s): {where}")
    kwargs = {}
    for name, value in data.items():
        sub = f"{path}.{name}" if path else name
        hint = hints.get(name)
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, sub)
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def parse_override(text: str) -> dict:
    """``"features.group_size=10"`` -> ``{"features": {"group_size": 10}}``."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    if not key.strip():
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {key}: cannot parse value {raw!r}") from exc
    out = value
    for part in reversed(key.strip().split(".")):
        out = {part: out}
    return out


def load_config(path=None, overrides=()) -> PipelineConfig:
    data = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {p} does not exist") from exc
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: not valid YAML/JSON: {exc}") from exc
    for ov in overrides:
        data = _merge(data, parse_override(ov) if isinstance(ov, str) else ov)
    return _build(PipelineConfig, data, "")


def dump_config(cfg, path):
    Path(path).write_text(yaml.safe_dump(to_dict(cfg), sort_keys=True))
