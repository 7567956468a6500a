"""Fundus preprocessing: CLAHE, value normalization, resizing.

CLAHE here is a plain numpy implementation: per-tile 256-bin histograms,
clip-and-redistribute, per-tile equalization LUTs, and bilinear blending
between tile-center LUTs. With a 1x1 grid and an infinite clip limit it
reduces to ordinary global histogram equalization, which pins the math.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
from PIL import Image

from .data import NORMALIZED, RAW, FundusImage
from .errors import ConfigError, DomainError


def _tile_luts(channel, clip_limit, tile_grid):
    """Per-tile equalization LUTs for one uint8 channel.

    Returns (luts, th, tw) where luts has shape (gy, gx, 256) and th, tw are
    the padded tile dimensions.
    """
    gy, gx = tile_grid
    h, w = channel.shape
    th, tw = math.ceil(h / gy), math.ceil(w / gx)
    pad_y, pad_x = gy * th - h, gx * tw - w
    padded = np.pad(channel, ((0, pad_y), (0, pad_x)), mode="reflect")

    tiles = padded.reshape(gy, th, gx, tw).transpose(0, 2, 1, 3).reshape(gy * gx, th * tw)
    n = th * tw
    offsets = np.arange(gy * gx, dtype=np.int64)[:, None] * 256
    hist = np.bincount(
        (tiles.astype(np.int64) + offsets).ravel(), minlength=gy * gx * 256
    ).reshape(gy * gx, 256).astype(np.float64)

    if not math.isinf(clip_limit):
        # Clip each bin at clip_limit * (mean bin content), floor of 1 count,
        # and hand the excess back uniformly. Single redistribution pass.
        limit = max(clip_limit * n / 256.0, 1.0)
        excess = np.maximum(hist - limit, 0.0).sum(axis=1, keepdims=True)
        hist = np.minimum(hist, limit) + excess / 256.0

    cdf = np.cumsum(hist, axis=1)
    luts = np.rint(cdf * 255.0 / cdf[:, -1:])
    return luts.reshape(gy, gx, 256), th, tw


def clahe_channel(channel, clip_limit=2.0, tile_grid=(8, 8)):
    """Contrast-limited adaptive histogram equalization of a uint8 plane."""
    channel = np.asarray(channel)
    if channel.dtype != np.uint8 or channel.ndim != 2:
        raise DomainError(f"clahe_channel wants a 2-D uint8 array, got {channel.dtype} {channel.shape}")
    gy, gx = tile_grid
    h, w = channel.shape
    if gy < 1 or gx < 1 or gy > h or gx > w:
        raise ConfigError(f"tile grid {tile_grid} does not fit a {h}x{w} image")
    if not clip_limit > 0:
        raise ConfigError(f"clip limit must be positive, got {clip_limit}")

    luts, th, tw = _tile_luts(channel, clip_limit, tile_grid)

    # Bilinear blend between the four surrounding tile-center LUTs, with
    # coordinates clamped so border pixels extend the outermost tiles.
    py = np.clip(np.arange(h) / th - 0.5, 0.0, gy - 1.0)
    px = np.clip(np.arange(w) / tw - 0.5, 0.0, gx - 1.0)
    y0 = np.minimum(py.astype(np.int64), gy - 1)
    x0 = np.minimum(px.astype(np.int64), gx - 1)
    y1 = np.minimum(y0 + 1, gy - 1)
    x1 = np.minimum(x0 + 1, gx - 1)
    wy = (py - y0)[:, None]
    wx = (px - x0)[None, :]

    v = channel.astype(np.int64)
    c00 = luts[y0[:, None], x0[None, :], v]
    c01 = luts[y0[:, None], x1[None, :], v]
    c10 = luts[y1[:, None], x0[None, :], v]
    c11 = luts[y1[:, None], x1[None, :], v]
    top = c00 * (1.0 - wx) + c01 * wx
    bot = c10 * (1.0 - wx) + c11 * wx
    out = top * (1.0 - wy) + bot * wy
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def clahe(img, clip_limit=2.0, tile_grid=(8, 8), channels="rgb"):
    """Apply CLAHE to a raw FundusImage; returns a new image with the flag set.

    channels="rgb" equalizes each plane independently; "luminance" converts
    to YCbCr, equalizes Y only, and converts back.
    """
    if img.value_domain != RAW:
        raise DomainError("CLAHE operates on raw 0..255 pixels; normalize afterwards")
    if img.preprocessed:
        raise DomainError("CLAHE was already applied to this image")
    if channels == "rgb":
        planes = [
            clahe_channel(img.pixels[:, :, c], clip_limit, tile_grid) for c in range(3)
        ]
        pixels = np.stack(planes, axis=2)
    elif channels == "luminance":
        ycbcr = np.asarray(Image.fromarray(img.pixels, "RGB").convert("YCbCr")).copy()
        ycbcr[:, :, 0] = clahe_channel(ycbcr[:, :, 0], clip_limit, tile_grid)
        pixels = np.asarray(Image.fromarray(ycbcr, "YCbCr").convert("RGB"))
    else:
        raise ConfigError(f"unknown CLAHE channel mode {channels!r}")
    return FundusImage(pixels, value_domain=RAW, preprocessed=True)


def normalize(img):
    """Map raw 0..255 pixels to float64 0..1. Refuses to run twice."""
    if img.value_domain == NORMALIZED:
        raise DomainError("image is already normalized to 0..1")
    pixels = img.pixels.astype(np.float64) / 255.0
    return replace(img, pixels=pixels, value_domain=NORMALIZED)


def resize(pixels, size):
    """Bilinear resize of an H x W x 3 array to (height, width)."""
    h, w = size
    arr = np.asarray(pixels)
    if arr.dtype == np.uint8:
        return np.asarray(Image.fromarray(arr, "RGB").resize((w, h), Image.BILINEAR))
    planes = [
        np.asarray(Image.fromarray(arr[:, :, c].astype(np.float32), "F").resize((w, h), Image.BILINEAR))
        for c in range(3)
    ]
    return np.clip(np.stack(planes, axis=2).astype(np.float64), 0.0, 1.0)
