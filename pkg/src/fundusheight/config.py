"""Run configuration: one JSON-serializable object tying together paths,
architecture, loss weights, and the training schedule.

A run is reproducible from (config digest, seed) alone, so the digest of
the canonical JSON form is recorded in every run manifest. Two presets
exist: "full" mirrors the reference setup (128 px, base 32 channels, 250
epochs); "desk" is a minutes-scale shrink for synthetic-data verification.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .discriminator import DiscriminatorConfig
from .errors import ConfigError
from .generator import GeneratorConfig
from .losses import LossWeights
from .trainer import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    data_root: str | None = None
    out_dir: str = "run_out"
    colormap_path: str | None = None
    image_size: int = 128
    synth_count: int = 64
    clahe_clip: float = 2.0
    clahe_grid: tuple = (8, 8)
    clahe_channels: str = "rgb"
    scale: str = "full"
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        step = 2**self.generator.unet_depth
        if self.image_size % step:
            raise ConfigError(
                f"image_size {self.image_size} is not divisible by 2^unet_depth = {step}"
            )
        if self.discriminator.image_size != self.image_size:
            raise ConfigError(
                f"discriminator.image_size {self.discriminator.image_size} "
                f"must match image_size {self.image_size}"
            )
        if len(self.weights.lambda_per_tap) != len(self.discriminator.tap_indices):
            raise ConfigError(
                f"{len(self.weights.lambda_per_tap)} perceptual lambdas for "
                f"{len(self.discriminator.tap_indices)} taps"
            )

    def to_dict(self):
        return asdict(self)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), default=list)
        return hashlib.sha256(blob.encode()).hexdigest()

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True, default=list)
        return path


_TUPLE_FIELDS = {
    "clahe_grid",
    "tap_indices",
    "lambda_per_tap",
    "lsgan_targets",
    "stages",
}


def _tuplify(d):
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            out[k] = _tuplify(v)
        elif k in _TUPLE_FIELDS and isinstance(v, list):
            out[k] = tuple(v)
        else:
            out[k] = v
    return out


def from_dict(raw):
    raw = _tuplify(dict(raw))
    try:
        for key, cls in (
            ("generator", GeneratorConfig),
            ("discriminator", DiscriminatorConfig),
            ("weights", LossWeights),
            ("train", TrainConfig),
        ):
            if key in raw:
                raw[key] = cls(**raw[key])
        return RunConfig(**raw)
    except TypeError as exc:
        raise ConfigError(f"bad run config: {exc}") from exc


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return from_dict(raw)


def full_config(**overrides):
    return _customized(RunConfig(), overrides)


def desk_config(**overrides):
    """Small everything: runs the whole pipeline in minutes on a laptop CPU."""
    base = RunConfig(
        image_size=64,
        synth_count=32,
        scale="desk",
        generator=GeneratorConfig(unet_depth=3, base_channels=8),
        discriminator=DiscriminatorConfig(base_channels=8, image_size=64),
        train=TrainConfig(batch_size=4, epochs=6),
    )
    return _customized(base, overrides)


def _customized(cfg, overrides):
    if not overrides:
        return cfg
    return replace(cfg, **overrides)


def preset(scale, **overrides):
    if scale == "desk":
        return desk_config(**overrides)
    if scale == "full":
        return full_config(**overrides)
    raise ConfigError(f"unknown scale {scale!r}; expected desk or full")
