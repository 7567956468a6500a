"""Seeded weight initialization shared by generator and discriminator."""

from __future__ import annotations

import math

import torch
from torch import nn


def _fan_in(m):
    w = m.weight
    if isinstance(m, nn.Linear):
        return w.size(1)
    if isinstance(m, nn.ConvTranspose2d):  # weight layout (in, out, kh, kw)
        return w.size(0) * w.size(2) * w.size(3)
    return w.size(1) * w.size(2) * w.size(3)


def init_weights(module):
    """Truncated-normal fan-in initialization; biases zero, norms identity."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            std = 1.0 / math.sqrt(_fan_in(m))
            nn.init.trunc_normal_(m.weight, mean=0.0, std=std, a=-2.0 * std, b=2.0 * std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def seeded_init(module, seed):
    torch.manual_seed(int(seed))
    init_weights(module)
    return module
