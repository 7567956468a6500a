"""Bidirectional mapping between physical heights (micrometers) and
color-encoded heightmap images.

A heightmap image stores per-pixel elevation as a color drawn from a
piecewise-linear colormap over a fixed height range (default 0..500 um).
Encoding interpolates the control points continuously; decoding snaps each
pixel to the nearest entry of a sampled lookup table, which tolerates
network-generated colors that lie off the colormap curve.

The exact colorbar of the acquisition device is not public, so the default
map is an approximation (blue -> cyan -> green -> yellow -> red) and every
stop is configuration, loadable from JSON:

    {"stops": [[fraction, r, g, b], ...], "resolution": int,
     "height_min_um": num, "height_max_um": num}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, HeightRangeError, ShapeError

DEFAULT_HEIGHT_MIN_UM = 0.0
DEFAULT_HEIGHT_MAX_UM = 500.0

# 5-stop approximation of the device colorbar. 257 table entries place every
# default stop exactly on an entry (indices 0, 64, 128, 192, 256) so on-curve
# colors at the stops decode to their exact heights.
DEFAULT_STOPS = (
    (0.00, (0.0, 0.0, 1.0)),
    (0.25, (0.0, 1.0, 1.0)),
    (0.50, (0.0, 1.0, 0.0)),
    (0.75, (1.0, 1.0, 0.0)),
    (1.00, (1.0, 0.0, 0.0)),
)
DEFAULT_RESOLUTION = 257


@dataclass(frozen=True)
class ColorMap:
    """Piecewise-linear colormap with a sampled lookup table for decoding."""

    stops: tuple = DEFAULT_STOPS
    resolution: int = DEFAULT_RESOLUTION
    lut: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        stops = tuple((float(f), tuple(float(c) for c in rgb)) for f, rgb in self.stops)
        object.__setattr__(self, "stops", stops)
        fracs = np.array([f for f, _ in stops])
        colors = np.array([rgb for _, rgb in stops])
        if len(stops) < 2:
            raise ConfigError("colormap needs at least two stops")
        if fracs[0] != 0.0 or fracs[-1] != 1.0:
            raise ConfigError("colormap stops must start at 0 and end at 1")
        if np.any(np.diff(fracs) <= 0):
            raise ConfigError("colormap stop fractions must be strictly increasing")
        if colors.shape[1] != 3 or colors.min() < 0 or colors.max() > 1:
            raise ConfigError("colormap colors must be rgb triples in [0,1]")
        if self.resolution < 2:
            raise ConfigError("colormap resolution must be >= 2")
        t = np.linspace(0.0, 1.0, self.resolution)
        lut = np.stack([np.interp(t, fracs, colors[:, c]) for c in range(3)], axis=1)
        if len(np.unique(lut, axis=0)) != self.resolution:
            raise ConfigError(
                "colormap lookup table has duplicate colors; decoding would be ambiguous"
            )
        object.__setattr__(self, "lut", lut)

    def entry_heights(self, height_min=DEFAULT_HEIGHT_MIN_UM, height_max=DEFAULT_HEIGHT_MAX_UM):
        """Heights (um) represented by the lookup-table entries, increasing with index."""
        t = np.linspace(0.0, 1.0, self.resolution)
        return height_min + t * (height_max - height_min)

    def to_dict(self, height_min=DEFAULT_HEIGHT_MIN_UM, height_max=DEFAULT_HEIGHT_MAX_UM):
        return {
            "stops": [[f, *rgb] for f, rgb in self.stops],
            "resolution": self.resolution,
            "height_min_um": height_min,
            "height_max_um": height_max,
        }


@dataclass
class HeightField:
    """Per-pixel elevation in micrometers over a declared [min, max] range."""

    values: np.ndarray
    height_min: float = DEFAULT_HEIGHT_MIN_UM
    height_max: float = DEFAULT_HEIGHT_MAX_UM

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"height field must be 2-D, got shape {self.values.shape}")
        if not self.height_min < self.height_max:
            raise ConfigError("height_min must be < height_max")
        _check_height_range(self.values, self.height_min, self.height_max)


def _check_height_range(values, height_min, height_max):
    bad = (values < height_min) | (values > height_max)
    if np.any(bad):
        r, c = np.argwhere(bad)[0]
        raise HeightRangeError(
            f"height {values[r, c]:.6g} um at pixel ({r}, {c}) outside "
            f"[{height_min:g}, {height_max:g}]"
        )


def load_colormap_file(path):
    """Load a colormap spec JSON; returns (ColorMap, height_min_um, height_max_um)."""
    try:
        with open(path) as fh:
            spec = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read colormap file {path}: {exc}") from exc
    try:
        stops = tuple((row[0], tuple(row[1:4])) for row in spec["stops"])
        cmap = ColorMap(stops=stops, resolution=int(spec.get("resolution", DEFAULT_RESOLUTION)))
        hmin = float(spec.get("height_min_um", DEFAULT_HEIGHT_MIN_UM))
        hmax = float(spec.get("height_max_um", DEFAULT_HEIGHT_MAX_UM))
    except (KeyError, TypeError, IndexError) as exc:
        raise DataError(f"malformed colormap file {path}: {exc}") from exc
    return cmap, hmin, hmax


def save_colormap_file(path, cmap, height_min=DEFAULT_HEIGHT_MIN_UM, height_max=DEFAULT_HEIGHT_MAX_UM):
    with open(path, "w") as fh:
        json.dump(cmap.to_dict(height_min, height_max), fh, indent=2)


def colormap_lookup(heights, cmap, height_min=DEFAULT_HEIGHT_MIN_UM, height_max=DEFAULT_HEIGHT_MAX_UM):
    """Map heights (um; scalar or array) to rgb via piecewise-linear interpolation.

    Out-of-range heights raise HeightRangeError; there is no silent clamping.
    """
    h = np.asarray(heights, dtype=np.float64)
    scalar = h.ndim == 0
    hv = np.atleast_2d(h)
    _check_height_range(hv, height_min, height_max)
    frac = (h - height_min) / (height_max - height_min)
    fracs = np.array([f for f, _ in cmap.stops])
    colors = np.array([rgb for _, rgb in cmap.stops])
    rgb = np.stack([np.interp(frac, fracs, colors[:, c]) for c in range(3)], axis=-1)
    return rgb[()] if not scalar else rgb


def encode_height(field, cmap):
    """Encode a HeightField into an H x W x 3 image with channels in [0,1]."""
    _check_height_range(field.values, field.height_min, field.height_max)
    return colormap_lookup(field.values, cmap, field.height_min, field.height_max)


def decode_height(
    image,
    cmap,
    height_min=DEFAULT_HEIGHT_MIN_UM,
    height_max=DEFAULT_HEIGHT_MAX_UM,
    _chunk=8192,
):
    """Decode an H x W x 3 image back to a HeightField.

    Each pixel is assigned the height of the nearest lookup-table color under
    Euclidean rgb distance; ties resolve to the lower height (lower index).
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"expected an H x W x 3 image, got shape {tuple(img.shape)}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise DataError(
            f"heightmap image channels must be in [0,1], got "
            f"[{img.min():.4g}, {img.max():.4g}]"
        )
    flat = img.reshape(-1, 3)
    lut = cmap.lut
    lut_sq = (lut * lut).sum(axis=1)
    idx = np.empty(flat.shape[0], dtype=np.int64)
    for start in range(0, flat.shape[0], _chunk):
        block = flat[start : start + _chunk]
        # ||p - L||^2 = ||p||^2 - 2 p.L + ||L||^2; ||p||^2 constant per pixel
        d2 = lut_sq[None, :] - 2.0 * block @ lut.T
        idx[start : start + block.shape[0]] = np.argmin(d2, axis=1)
    heights = cmap.entry_heights(height_min, height_max)[idx].reshape(img.shape[:2])
    return HeightField(heights, height_min, height_max)
