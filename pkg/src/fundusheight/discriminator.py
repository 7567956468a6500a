"""Conditional discriminator with feature taps.

The trunk is a run of Conv-Norm-LeakyReLU blocks (stride 2 on every even
block, no norm on the first), applied to the channel concatenation of the
fundus image and a candidate heightmap image. Intermediate activations are
exposed at configurable tap indices for the perceptual loss and the
feature-space LPIPS metric. Two heads share that trunk: "image" flattens
into a fully connected layer producing one probability per sample; "patch"
maps to a 1-channel probability grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError, ShapeError
from .nn_init import seeded_init


@dataclass(frozen=True)
class DiscriminatorConfig:
    mode: str = "image"
    num_conv_layers: int = 8
    tap_indices: tuple = (1, 4, 6, 8)
    leaky_slope: float = 0.2
    base_channels: int = 32
    in_channels: int = 6
    image_size: int = 128  # image mode fixes the FC input size

    def __post_init__(self):
        if self.mode not in ("image", "patch"):
            raise ConfigError(f"mode must be image or patch, got {self.mode!r}")
        if self.num_conv_layers < 1:
            raise ConfigError(f"need at least one conv layer, got {self.num_conv_layers}")
        taps = tuple(self.tap_indices)
        if not taps or any(t < 1 or t > self.num_conv_layers for t in taps):
            raise ConfigError(
                f"tap indices {taps} must lie in [1, {self.num_conv_layers}]"
            )
        if any(b >= a for a, b in zip(taps[1:], taps)):
            raise ConfigError(f"tap indices {taps} must be strictly increasing")
        if not self.leaky_slope > 0:
            raise ConfigError(f"leaky slope must be positive, got {self.leaky_slope}")
        if self.base_channels < 1 or self.in_channels < 1 or self.image_size < 1:
            raise ConfigError("channel counts and image size must be positive")

    def channels(self):
        """Output channels per block: doubling at stride-2 blocks, capped at 8x."""
        return tuple(self.base_channels * min(2 ** (i // 2), 8) for i in range(1, self.num_conv_layers + 1))

    def strides(self):
        return tuple(2 if i % 2 == 0 else 1 for i in range(1, self.num_conv_layers + 1))

    def final_spatial(self, size=None):
        n = self.image_size if size is None else size
        for s in self.strides():
            if s == 2:
                n = math.ceil(n / 2)
        return n


@dataclass
class FeatureTaps:
    features: list
    indices: tuple
    dims: tuple  # per tap: (width, height, depth)

    def element_counts(self):
        return tuple(w * h * d for (w, h, d) in self.dims)


class Discriminator(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = config
        blocks = []
        cin = config.in_channels
        for i, (cout, stride) in enumerate(zip(config.channels(), config.strides()), start=1):
            layers = [nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=(i == 1))]
            if i > 1:
                layers.append(nn.BatchNorm2d(cout))
            layers.append(nn.LeakyReLU(config.leaky_slope, inplace=True))
            blocks.append(nn.Sequential(*layers))
            cin = cout
        self.blocks = nn.ModuleList(blocks)
        if config.mode == "image":
            s = config.final_spatial()
            self.head = nn.Sequential(nn.Flatten(), nn.Linear(cin * s * s, 1), nn.Sigmoid())
        else:
            self.head = nn.Sequential(nn.Conv2d(cin, 1, 3, padding=1, bias=True), nn.Sigmoid())

    def forward(self, x, y):
        if x.ndim != 4 or y.ndim != 4 or x.shape != y.shape or x.shape[1] != 3:
            raise ShapeError(
                f"expected two matching B x 3 x H x W batches, got {tuple(x.shape)} and {tuple(y.shape)}"
            )
        if self.config.mode == "image" and x.shape[2:] != (self.config.image_size,) * 2:
            raise ShapeError(
                f"image-mode discriminator was built for {self.config.image_size}px inputs, "
                f"got {x.shape[2]}x{x.shape[3]}"
            )
        h = torch.cat([x, y], dim=1)
        wanted = set(self.config.tap_indices)
        feats, dims = [], []
        for i, block in enumerate(self.blocks, start=1):
            h = block(h)
            if i in wanted:
                feats.append(h)
                dims.append((h.shape[3], h.shape[2], h.shape[1]))
        prob = self.head(h)
        return prob, FeatureTaps(features=feats, indices=tuple(self.config.tap_indices), dims=tuple(dims))


def build_discriminator(cfg, seed=0):
    return seeded_init(Discriminator(cfg), seed)


def d_forward(d, x, y):
    """Probability plus feature taps for the (fundus, candidate) pair."""
    return d(x, y)
