"""Run configuration: one JSON document, strict keys, flag overrides.

Precedence is flags > file > defaults. Every command derives all of its
randomness from the single seed here, and artifacts carry the config hash
for provenance.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    channel_plan: tuple = (
        (3, 32, 1), (32, 32, 1), (32, 64, 2), (64, 64, 1), (64, 64, 1), (64, 128, 2),
    )
    embed_dim: int = 128
    t_out: int = 60
    use_batchnorm: bool = True
    degree_alpha: float = 1e-3

    def __post_init__(self):
        self.channel_plan = tuple(tuple(int(v) for v in b) for b in self.channel_plan)
        for b in self.channel_plan:
            if len(b) != 3:
                raise ConfigError(f"channel plan entry {b} must be (in, out, stride)")
        if self.t_out < 2:
            raise ConfigError("t_out must be >= 2")
        if self.degree_alpha <= 0:
            raise ConfigError("degree_alpha must be > 0")


@dataclass
class LossConfig:
    lam: float = 0.9
    triplet_margin: float = 0.2
    per_group_triplet: bool = False
    arcface_scale: float = 30.0
    arcface_margin: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lam must be in [0, 1]")


@dataclass
class TrainConfig:
    iterations: int = 2000
    p_subjects: int = 8
    k_samples: int = 4
    learning_rate: float = 0.01
    momentum: float = 0.9
    decay_points: tuple = (0.5, 0.75)
    decay_factor: float = 0.1
    standardize: bool = True

    def __post_init__(self):
        self.decay_points = tuple(float(v) for v in self.decay_points)
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.p_subjects < 2 or self.k_samples < 1:
            raise ConfigError("batch plan needs >= 2 subjects and >= 1 sample each")


@dataclass
class FusionConfig:
    strategy: str = "confidence_weighted_mean"
    outlier_threshold: float = 150.0
    min_confidence: float = 0.1

    def __post_init__(self):
        if self.strategy not in ("confidence_weighted_mean", "median_per_axis"):
            raise ConfigError(f"unknown fusion strategy {self.strategy!r}")
        if self.outlier_threshold <= 0:
            raise ConfigError("outlier_threshold must be > 0")


@dataclass
class RunConfig:
    manifest: str = "manifest.json"
    calibration: str = ""
    out_dir: str = "out"
    seed: int = 0
    chain_mode: str = "strict"
    workers: int = 1
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)

    def __post_init__(self):
        if self.chain_mode not in ("paper", "strict"):
            raise ConfigError(f"chain_mode must be 'paper' or 'strict', got {self.chain_mode!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


_SECTIONS = {"model": ModelConfig, "loss": LossConfig, "train": TrainConfig,
             "fusion": FusionConfig}


def _build_section(cls, data: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return cls(**data)


def config_from_dict(data: dict) -> RunConfig:
    data = dict(data)
    sections = {}
    for name, cls in _SECTIONS.items():
        raw = data.pop(name, {})
        if not isinstance(raw, dict):
            raise ConfigError(f"section {name!r} must be an object")
        sections[name] = _build_section(cls, raw, name)
    top_known = {f.name for f in fields(RunConfig)} - set(_SECTIONS)
    unknown = set(data) - top_known
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    return RunConfig(**data, **sections)


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply `section.key=value` strings (values parsed as JSON when possible)."""
    out = json.loads(json.dumps(data))  # deep copy
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = value
    return out


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> RunConfig:
    data: dict = {}
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}")
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    if overrides:
        data = apply_overrides(data, overrides)
    return config_from_dict(data)
