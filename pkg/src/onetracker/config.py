"""Hyperparameters shared by the model, training loops and the CLI."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

TASKS = ("rgb", "rgb_n", "rgb_m", "rgb_d", "rgb_t", "rgb_e")
TASK_MODALITY = {"rgb": None, "rgb_n": "N", "rgb_m": "M", "rgb_d": "D", "rgb_t": "T", "rgb_e": "E"}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass
class BackboneConfig:
    dim: int = 768
    depth: int = 12
    heads: int = 12
    patch_size: int = 16
    template_size: int = 192
    search_size: int = 384
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.dim % self.heads:
            raise ConfigError(f"dim={self.dim} is not divisible by heads={self.heads}")
        for key in ("template_size", "search_size"):
            if getattr(self, key) % self.patch_size:
                raise ConfigError(f"{key}={getattr(self, key)} is not divisible by patch_size={self.patch_size}")

    @property
    def grid(self) -> int:
        return self.search_size // self.patch_size

    @property
    def n_template(self) -> int:
        return (self.template_size // self.patch_size) ** 2

    @property
    def n_search(self) -> int:
        return self.grid ** 2

    @property
    def mlp_hidden(self) -> int:
        return int(round(self.dim * self.mlp_ratio))


@dataclass
class TrackerConfig:
    # backbone
    dim: int = 768
    depth: int = 12
    heads: int = 12
    patch_size: int = 16
    template_size: int = 192
    search_size: int = 384
    mlp_ratio: float = 4.0
    head_channels: int = 192
    # prompt tracker
    r: int = 16
    s: float = 0.1
    m: int = 64
    every_k: int = 1
    vocab_size: int = 64
    text_len: int = 16
    train_seg_head_in_m: bool = True
    # losses
    lambda_iou: float = 2.0
    lambda_l1: float = 5.0
    lambda_mask: float = 1.0
    # optimisation
    lr_backbone: float = 4e-5
    lr_heads: float = 4e-4
    lr_prompt: float = 4e-5
    weight_decay: float = 1e-4
    batch_size: int = 16
    steps: int = 500
    lr_decay_step: int = 0
    seed: int = 0
    task: str = "rgb"
    # inference
    template_factor: float = 2.0
    search_factor: float = 4.0
    # synthetic data
    num_clips: int = 4
    frame_size: int = 128
    clip_length: int = 12
    num_objects: int = 1
    num_distractors: int = 0
    rgb_corruption: float = 0.0
    max_speed: float = 3.0
    # paths
    data: str = ""
    checkpoint: str = ""
    out: str = ""

    def __post_init__(self):
        self.backbone  # validates
        if self.task not in TASKS:
            raise ConfigError(f"task={self.task!r} is not one of {', '.join(TASKS)}")
        if self.every_k < 0 or (self.every_k and self.every_k > self.depth):
            raise ConfigError(f"every_k={self.every_k} must be in 0..depth ({self.depth})")
        for key in ("lambda_iou", "lambda_l1", "lambda_mask"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be non-negative")

    @property
    def backbone(self) -> BackboneConfig:
        return BackboneConfig(self.dim, self.depth, self.heads, self.patch_size,
                              self.template_size, self.search_size, self.mlp_ratio)

    @property
    def modality(self) -> str | None:
        return TASK_MODALITY[self.task]

    @property
    def prompter_positions(self) -> tuple[int, ...]:
        """Layers before which a prompter runs; empty means direct embedding add."""
        if self.every_k == 0:
            return ()
        return tuple(range(0, self.depth, self.every_k))

    def replace(self, **changes) -> "TrackerConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def toy(cls, **overrides) -> "TrackerConfig":
        base = dict(dim=16, depth=2, heads=2, patch_size=8, template_size=32, search_size=64,
                    head_channels=16, r=4, m=8, lr_backbone=1e-3, lr_heads=3e-3, lr_prompt=3e-3,
                    batch_size=8, steps=500)
        base.update(overrides)
        return cls(**base)

    # -- key=value files ---------------------------------------------------
    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))


def _coerce(name: str, typ, raw: str):
    typ = {"int": int, "float": float, "str": str, "bool": bool}.get(typ, typ)
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw.strip())
    except ValueError:
        raise ConfigError(f"config key {name!r}: cannot parse {raw.strip()!r} as {typ.__name__}") from None


def parse_config_text(text: str, base: TrackerConfig | None = None, source: str = "<config>") -> TrackerConfig:
    """Parse ``key=value`` lines (``#`` comments) over ``base``; unknown keys are errors."""
    types = {f.name: f.type for f in fields(TrackerConfig)}
    values = dataclasses.asdict(base or TrackerConfig())
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, types[key], raw)
    return TrackerConfig(**values)


def load_config(path: str | Path, base: TrackerConfig | None = None) -> TrackerConfig:
    path = Path(path)
    return parse_config_text(path.read_text(), base=base, source=str(path))


__all__ = ["BackboneConfig", "ConfigError", "TASKS", "TASK_MODALITY", "TrackerConfig",
           "load_config", "parse_config_text"]
