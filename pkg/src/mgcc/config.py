"""Configuration for the MGCC pipeline.

All desk-scale defaults live here. A config file (JSON or YAML) may override
any field; nested sections map onto the dataclasses below.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    # visual encoder
    image_shape: tuple[int, int, int] = (64, 64, 3)
    d: int = 16
    visual_encoder: str = "toy"  # "toy" | "external"
    # frozen language backbone
    base_vocab: int = 256
    e: int = 32
    backbone_layers: int = 2
    backbone_heads: int = 4
    # image-token machinery
    k: int = 4
    n: int = 8
    # cross-modal refinement
    refine_layers: int = 4
    proj_width: int | None = None  # None -> e
    ffn_depth: int = 1
    # mapper
    m: int = 32
    mapper_layers: int = 4
    mapper_heads: int = 4
    L: int = 8
    c: int = 16
    target_encoder: str = "toy"  # "toy" | "external"
    seed: int = 0

    @property
    def p(self) -> int:
        return self.e if self.proj_width is None else self.proj_width

    def validate(self) -> None:
        for name in ("d", "e", "k", "n", "m", "L", "c", "base_vocab"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.refine_layers < 0 or self.backbone_layers < 0:
            raise ConfigError("layer counts must be non-negative")
        if self.ffn_depth not in (1, 2):
            raise ConfigError(f"ffn_depth must be 1 or 2, got {self.ffn_depth}")
        if self.e % self.backbone_heads:
            raise ConfigError("e must be divisible by backbone_heads")
        if self.m % self.mapper_heads:
            raise ConfigError("m must be divisible by mapper_heads")
        if self.visual_encoder not in ("toy", "external"):
            raise ConfigError(f"unknown visual_encoder {self.visual_encoder!r}")
        if self.target_encoder not in ("toy", "external"):
            raise ConfigError(f"unknown target_encoder {self.target_encoder!r}")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.95)
    eps: float = 1e-8
    lambda_ce: float = 1.0
    lambda_mse: float = 1.0
    steps: int = 500
    batch_size: int = 32
    dataset_size: int = 32
    dataset_seed: int = 0
    max_story_len: int = 5
    log_every: int = 50
    out: str = "runs/ckpt"


@dataclass
class ClientConfig:
    kind: str = "scripted"  # "scripted" | "remote"
    endpoint: str = "http://localhost:8000/complete"
    timeout: float = 30.0
    max_retries: int = 3
    backoff: float = 0.5
    max_in_flight: int = 1
    script: str | None = None


@dataclass
class GroundingConfig:
    canvas: tuple[int, int] = (512, 512)
    num_examples: int = 5
    max_attempts: int = 3
    examples_file: str | None = None  # None -> bundled bank
    render_size: int = 64


@dataclass
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    client: ClientConfig = field(default_factory=ClientConfig)
    grounding: GroundingConfig = field(default_factory=GroundingConfig)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "Config":
        sections = {f.name: f.type for f in dataclasses.fields(cls)}
        unknown = set(raw) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for name, sub in (
            ("model", ModelConfig),
            ("train", TrainConfig),
            ("client", ClientConfig),
            ("grounding", GroundingConfig),
        ):
            kwargs[name] = _build(sub, raw.get(name, {}))
        cfg = cls(**kwargs)
        cfg.model.validate()
        return cfg


def _build(kind, values: dict[str, Any]):
    known = {f.name: f for f in dataclasses.fields(kind)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys for {kind.__name__}: {sorted(unknown)}")
    defaults = kind()
    out = {}
    for key, value in values.items():
        # lists from JSON/YAML become tuples where the default is a tuple
        default = getattr(defaults, key)
        if isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        # YAML 1.1 reads "1e-8" (no dot) as a string
        if isinstance(default, float) and isinstance(value, (str, int)) and not isinstance(value, bool):
            try:
                value = float(value)
            except ValueError as exc:
                raise ConfigError(f"{kind.__name__}.{key}: expected a number, got {value!r}") from exc
        out[key] = value
    return kind(**out)


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    text = Path(path).read_text()
    if not text.strip():
        raw = {}
    elif Path(path).suffix == ".json":
        raw = json.loads(text)
    else:
        raw = yaml.safe_load(text)
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return Config.from_dict(raw)


def dump_config(cfg: Config) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)
