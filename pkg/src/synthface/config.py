"""Run configuration: defaults, then a YAML/JSON file, then ``key=value`` overrides."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .augment import AugmentationConfig
from .margin import MarginConfig
from .sampler import SamplerConfig
from .schema import SchemaError, from_dict, to_dict
from .seeding import derive_seed
from .trainer import TrainConfig

CONFIG_ENV = "SYNTHFACE_CONFIG"
SNAPSHOT_NAME = "config.snapshot"


@dataclass
class PathsConfig:
    manifest: str | None = None
    images: str | None = None
    landmarks: str | None = None
    pairs: str | None = None
    output: str | None = None


@dataclass
class EvalConfig:
    metric: str = "l2"
    step: float = 0.001
    upper: float = 2.0
    thresholds: str = "grid"
    flip: bool = False
    batch_size: int = 256

    def validate(self) -> None:
        if self.metric not in ("l2", "cosine"):
            raise ValueError(f"eval.metric must be l2 or cosine, got {self.metric!r}")
        if self.thresholds not in ("grid", "midpoints"):
            raise ValueError("eval.thresholds must be grid or midpoints")
        if not 0 < self.step <= self.upper:
            raise ValueError("eval.step must be in (0, upper]")


@dataclass
class RunConfig:
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    margin: MarginConfig = field(default_factory=MarginConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> None:
        for name in ("sampler", "augmentation", "margin", "train", "eval"):
            try:
                getattr(self, name).validate()
            except SchemaError:
                raise
            except ValueError as exc:
                raise SchemaError(name, str(exc)) from None

    def module_seed(self, module: str) -> int:
        """Per-module seed from the global one, so modules rerun independently."""
        return derive_seed(self.seed, module)


def parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise SchemaError(text, "override must look like key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key or any(not p for p in key.split(".")):
        raise SchemaError(key, "empty key in override")
    try:
        value = yaml.safe_load(raw) if raw.strip() else ""
    except yaml.YAMLError:
        value = raw
    return key.split("."), value


def _set(tree: dict, path: list[str], value, full: str) -> None:
    node = tree
    for part in path[:-1]:
        nxt = node.setdefault(part, {})
        if not isinstance(nxt, dict):
            raise SchemaError(full, f"{part} is not a section")
        node = nxt
    node[path[-1]] = value


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file {path} does not exist")
    text = path.read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text) if text.strip() else {}
    except yaml.YAMLError as exc:
        raise SchemaError("", f"{path}: cannot parse config: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise SchemaError("", f"{path}: top level must be a mapping")
    return data


def load_config(path=None, overrides=(), use_env: bool = True) -> RunConfig:
    """Defaults, then ``path`` (or ``$SYNTHFACE_CONFIG``), then overrides; validated."""
    if path is None and use_env:
        path = os.environ.get(CONFIG_ENV) or None
    tree = read_config_file(path) if path is not None else {}
    for text in overrides:
        keys, value = parse_override(text)
        _set(tree, keys, value, ".".join(keys))
    cfg = from_dict(RunConfig, tree)
    cfg.validate()
    return cfg


def snapshot_dict(cfg: RunConfig) -> dict:
    return to_dict(cfg)


def write_snapshot(cfg: RunConfig, path) -> Path:
    """Fully resolved config; loading it back reproduces ``cfg`` exactly.

    Keys keep their order: category order in mappings feeds the samplers.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(json.dumps(snapshot_dict(cfg), indent=2) + "\n", encoding="utf-8")
    os.replace(tmp, path)
    return path
