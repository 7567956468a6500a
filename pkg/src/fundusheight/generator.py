"""Stacked-U-Net generator with deep supervision.

The generator is a chain of K U-Nets. The first consumes the 3-channel
fundus image; each later one consumes the fundus concatenated with the
previous U-Net's 3-channel head output, so every stage stays grounded in
the input while refining its predecessor. Each U-Net ends in a 1x1
convolution + sigmoid head; under deep supervision the final prediction is
the elementwise mean (optionally max) of all K heads.

Tensors are NCHW float32; images cross into this module already normalized
to [0,1].
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch
from torch import nn

from .checkpoints import CheckpointFile
from .errors import CheckpointError, ConfigError, ShapeError
from .nn_init import init_weights, seeded_init

MAX_UNETS = 5
MAX_DEPTH = 7  # an eighth halving has no 128-px grid to act on


@dataclass(frozen=True)
class GeneratorConfig:
    num_unets: int = 3
    unet_depth: int = 4
    base_channels: int = 32
    dropout_rate: float = 0.5  # the model's only stochasticity source z
    deep_supervision: bool = True
    head_aggregation: str = "mean"
    # output activation is a fixed sigmoid to [0,1]; not configurable

    def __post_init__(self):
        if not 1 <= self.num_unets <= MAX_UNETS:
            raise ConfigError(f"num_unets must be in [1, {MAX_UNETS}], got {self.num_unets}")
        if self.unet_depth < 1:
            raise ConfigError(f"unet_depth must be >= 1, got {self.unet_depth}")
        if self.unet_depth > MAX_DEPTH:
            raise ConfigError(
                f"unet_depth {self.unet_depth} needs more than {MAX_DEPTH} halvings "
                "of the input grid; not supported"
            )
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.head_aggregation not in ("mean", "max"):
            raise ConfigError(f"head_aggregation must be mean or max, got {self.head_aggregation!r}")


@dataclass
class GeneratorOutput:
    final: torch.Tensor
    heads: list


def aggregate_heads(heads, mode="mean"):
    """Combine per-U-Net head images into the final prediction."""
    if not heads:
        raise ConfigError("cannot aggregate an empty head list")
    if mode == "mean":
        return torch.stack(heads, dim=0).mean(dim=0)
    if mode == "max":
        return torch.stack(heads, dim=0).amax(dim=0)
    raise ConfigError(f"unknown aggregation mode {mode!r}")


def _double_conv(cin, cout):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
        nn.Conv2d(cout, cout, 3, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


def _down(c):
    return nn.Sequential(
        nn.Conv2d(c, c, 3, stride=2, padding=1, bias=False),
        nn.BatchNorm2d(c),
        nn.ReLU(inplace=True),
    )


def _up(cin, cout):
    return nn.Sequential(
        nn.ConvTranspose2d(cin, cout, 2, stride=2, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class UNet(nn.Module):
    """One encoder/decoder with skip connections and a sigmoid head.

    Channels double per level from base_channels. Dropout sits in the
    innermost decoder blocks (up to three), active only in train mode.
    """

    def __init__(self, in_channels, base_channels, depth, dropout_rate):
        super().__init__()
        chans = [base_channels * (2**l) for l in range(depth + 1)]
        self.depth = depth
        self.inc = _double_conv(in_channels, chans[0])
        self.downs = nn.ModuleList(
            nn.Sequential(_down(chans[l - 1]), _double_conv(chans[l - 1], chans[l]))
            for l in range(1, depth + 1)
        )
        self.ups = nn.ModuleList(_up(chans[l], chans[l - 1]) for l in range(depth, 0, -1))
        self.decs = nn.ModuleList(
            _double_conv(2 * chans[l - 1], chans[l - 1]) for l in range(depth, 0, -1)
        )
        n_drop = min(3, depth)
        self.drops = nn.ModuleList(
            nn.Dropout2d(dropout_rate) if i < n_drop else nn.Identity()
            for i in range(depth)
        )
        self.head = nn.Sequential(nn.Conv2d(chans[0], 3, 1, bias=True), nn.Sigmoid())

    def forward(self, x):
        skips = [self.inc(x)]
        for down in self.downs:
            skips.append(down(skips[-1]))
        h = skips.pop()
        for up, dec, drop in zip(self.ups, self.decs, self.drops):
            h = up(h)
            h = dec(torch.cat([skips.pop(), h], dim=1))
            h = drop(h)
        return self.head(h)


class StackedGenerator(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = config
        self.unets = nn.ModuleList(
            UNet(
                3 if k == 0 else 6,
                config.base_channels,
                config.unet_depth,
                config.dropout_rate,
            )
            for k in range(config.num_unets)
        )

    def forward(self, x):
        _check_input(x, self.config.unet_depth)
        heads = []
        prev = None
        for k, net in enumerate(self.unets):
            inp = x if k == 0 else torch.cat([x, prev], dim=1)
            prev = net(inp)
            heads.append(prev)
        if self.config.deep_supervision:
            final = aggregate_heads(heads, self.config.head_aggregation)
        else:
            final = heads[-1]
        return GeneratorOutput(final=final, heads=heads)


def _check_input(x, depth):
    if x.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"expected a B x 3 x H x W batch, got shape {tuple(x.shape)}")
    step = 2**depth
    h, w = x.shape[2], x.shape[3]
    if h % step or w % step or h < step or w < step:
        raise ShapeError(
            f"spatial size {h}x{w} is not divisible by 2^depth = {step}; "
            f"expected multiples of {step}"
        )


def build_generator(cfg, seed=0):
    """Construct a StackedGenerator with deterministic seeded weights."""
    model = StackedGenerator(cfg)
    return seeded_init(model, seed)


def run_generator(gen, x, mode="eval"):
    """Forward pass with an explicit train/eval mode switch."""
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be train or eval, got {mode!r}")
    gen.train(mode == "train")
    if mode == "eval":
        with torch.no_grad():
            return gen(x)
    return gen(x)


def _as_state(ckpt):
    if isinstance(ckpt, CheckpointFile):
        return ckpt.state
    if isinstance(ckpt, dict):
        return ckpt
    raise CheckpointError(f"expected a checkpoint or state map, got {type(ckpt).__name__}")


def grow_stack(gen, ckpt, seed=None):
    """Return a K+1 generator whose first K U-Nets carry `ckpt`'s weights.

    The copy is exact (state_dict transfer, buffers included), so heads
    1..K of the grown model reproduce the old model bit for bit on the
    same input in eval mode. The new U-Net is freshly initialized, from
    `seed` when given, otherwise from the ambient torch RNG state.
    """
    state = _as_state(ckpt)
    expected = gen.state_dict()
    mismatched = sorted(
        (set(expected) ^ set(state))
        | {k for k in expected.keys() & state.keys() if expected[k].shape != state[k].shape}
    )
    if mismatched:
        raise CheckpointError(
            f"checkpoint does not match a {gen.config.num_unets}-U-Net generator",
            mismatched_keys=tuple(mismatched),
        )

    cfg = replace(gen.config, num_unets=gen.config.num_unets + 1)
    grown = StackedGenerator(cfg)
    if seed is not None:
        seeded_init(grown, seed)
    else:
        init_weights(grown)
    merged = grown.state_dict()
    for k, v in state.items():
        merged[k] = v
    grown.load_state_dict(merged)
    return grown
