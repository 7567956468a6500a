"""Synthetic fundus/heightmap pair generation.

Each sample starts from a random macular height field (a few Gaussian bumps
on a flat floor, clipped to the working 0..500 um range). The paired fundus
is rendered from that same field: a Lambertian-shaded orange disc with a
radial vignette, Bezier vessel trees, and an optic disc, so the photograph
carries real (if simplified) shape information for a model to learn from.

Sample i of a run is a pure function of (seed, i), independent of how many
samples are drawn or in what order.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import distance_transform_edt, gaussian_filter

from .codec import DEFAULT_HEIGHT_MAX_UM, DEFAULT_HEIGHT_MIN_UM, ColorMap, HeightField, encode_height
from .data import RAW, FundusImage, SamplePair, write_corpus
from .errors import ConfigError

UM_PER_PIXEL = 12.0  # plausible macular sampling pitch; sets shading slopes


def _height_field(rng, shape, bump_range):
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    field = np.zeros((h, w))
    lo, hi = bump_range
    for _ in range(int(rng.integers(lo, hi + 1))):
        cy, cx = rng.uniform(0.2 * h, 0.8 * h), rng.uniform(0.2 * w, 0.8 * w)
        sigma = rng.uniform(0.06, 0.22) * min(h, w)
        amp = rng.uniform(60.0, 500.0)
        field += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))
    return np.clip(field, DEFAULT_HEIGHT_MIN_UM, DEFAULT_HEIGHT_MAX_UM)


def _bezier_points(p0, p1, p2, p3, n=200):
    t = np.linspace(0.0, 1.0, n)[:, None]
    return (
        (1 - t) ** 3 * p0
        + 3 * (1 - t) ** 2 * t * p1
        + 3 * (1 - t) * t**2 * p2
        + t**3 * p3
    )


def _vessel_mask(rng, shape, disc_center):
    """Soft vessel map in [0,1]: cubic Bezier curves fanning out of the disc."""
    h, w = shape
    canvas = np.zeros((h, w), dtype=bool)
    for _ in range(int(rng.integers(2, 6))):
        ang = rng.uniform(0.0, 2.0 * np.pi)
        reach = rng.uniform(0.5, 1.1) * max(h, w)
        p0 = np.asarray(disc_center, dtype=np.float64)
        p3 = p0 + reach * np.array([np.sin(ang), np.cos(ang)])
        p1 = p0 + rng.normal(0.0, 0.25 * min(h, w), 2)
        p2 = p3 + rng.normal(0.0, 0.25 * min(h, w), 2)
        pts = np.rint(_bezier_points(p0, p1, p2, p3)).astype(np.int64)
        keep = (pts[:, 0] >= 0) & (pts[:, 0] < h) & (pts[:, 1] >= 0) & (pts[:, 1] < w)
        canvas[pts[keep, 0], pts[keep, 1]] = True
    if not canvas.any():
        return np.zeros((h, w))
    dist = distance_transform_edt(~canvas)
    width = max(0.006 * min(h, w), 0.6)
    return np.exp(-(dist**2) / (2.0 * width**2))


def _render_fundus(rng, heights):
    h, w = heights.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    # Lambertian shading from the height surface: slopes in um per pixel,
    # converted to unitless gradients before building normals.
    gy, gx = np.gradient(heights)
    gy, gx = gy / UM_PER_PIXEL, gx / UM_PER_PIXEL
    norm = np.sqrt(gx**2 + gy**2 + 1.0)
    light = np.array([-0.35, -0.35, 0.87])
    light = light / np.linalg.norm(light)
    shade = np.clip((-gx * light[1] - gy * light[0] + light[2]) / norm, 0.0, 1.0)

    base = np.array([0.82, 0.42, 0.22]) + rng.normal(0.0, 0.03, 3)
    r2 = ((yy - h / 2) ** 2 + (xx - w / 2) ** 2) / ((h / 2) ** 2 + (w / 2) ** 2)
    vignette = 1.0 - 0.45 * r2

    edge = rng.integers(0, 4)
    along = rng.uniform(0.3, 0.7)
    disc_center = [
        (0.08 * h, along * w),
        (0.92 * h, along * w),
        (along * h, 0.08 * w),
        (along * h, 0.92 * w),
    ][edge]
    disc_r2 = (yy - disc_center[0]) ** 2 + (xx - disc_center[1]) ** 2
    disc = np.exp(-disc_r2 / (2.0 * (0.07 * min(h, w)) ** 2))

    vessels = _vessel_mask(rng, (h, w), disc_center)
    texture = gaussian_filter(rng.normal(0.0, 1.0, (h, w)), sigma=2.0) * 0.02

    img = np.empty((h, w, 3))
    vessel_drop = np.array([0.35, 0.75, 0.75])  # vessels darken G and B hardest
    disc_gain = np.array([0.18, 0.45, 0.55])
    for c in range(3):
        plane = base[c] * (0.55 + 0.45 * shade) * vignette
        plane = plane * (1.0 - vessel_drop[c] * vessels)
        plane = plane + disc_gain[c] * disc + texture
        img[:, :, c] = plane
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def _as_shape(size):
    if isinstance(size, int):
        size = (size, size)
    h, w = size
    if h < 8 or w < 8:
        raise ConfigError(f"synthetic image size must be >= 8 per side, got {size}")
    return int(h), int(w)


def synthesize_pair(seed, index, size=(64, 64), bump_range=(1, 4), cmap=None):
    """Render sample `index` of the stream defined by `seed`."""
    shape = _as_shape(size)
    lo, hi = bump_range
    if lo < 0 or hi < lo:
        raise ConfigError(f"bad bump range {bump_range}")
    rng = np.random.default_rng([seed, index])
    cmap = cmap or ColorMap()
    heights = _height_field(rng, shape, bump_range)
    fundus = _render_fundus(rng, heights)
    target = encode_height(HeightField(heights), cmap)
    return SamplePair(
        id=f"synth_{index:04d}",
        fundus=FundusImage(fundus, value_domain=RAW),
        target=target,
    )


def synth_generate(n, seed=0, size=(64, 64), bump_range=(1, 4), cmap=None):
    """Generate n reproducible pairs; the data-module entry point."""
    if n < 1:
        raise ConfigError(f"need at least one sample, got {n}")
    return [synthesize_pair(seed, i, size=size, bump_range=bump_range, cmap=cmap) for i in range(n)]


def synthesize_to_dir(out_dir, n, seed=0, size=(64, 64), bump_range=(1, 4), cmap=None):
    """Generate a corpus and write it in the standard on-disk layout."""
    pairs = synth_generate(n, seed=seed, size=size, bump_range=bump_range, cmap=cmap)
    return write_corpus(pairs, out_dir)
