"""Height/color codec: the 5-stop colormap must be losslessly invertible
up to LUT quantization, exact at control points, and strict about range."""

import json

import numpy as np
import pytest

from fundusheight.codec import (
    ColorMap,
    HeightField,
    colormap_lookup,
    decode_height,
    encode_height,
    load_colormap_file,
    save_colormap_file,
)
from fundusheight.errors import HeightRangeError


@pytest.fixture(scope="module")
def cmap():
    return ColorMap()


class TestRoundtrip:
    def test_random_fields_within_quantization(self, cmap, rng):
        worst = 0.0
        for _ in range(100):
            field = HeightField(rng.uniform(0.0, 500.0, size=(8, 8)))
            decoded = decode_height(encode_height(field, cmap), cmap)
            worst = max(worst, float(np.max(np.abs(decoded.values - field.values))))
        assert worst <= 500.0 / 255.0

    def test_lut_entry_heights_roundtrip_exactly(self, cmap):
        heights = cmap.entry_heights(0.0, 500.0)
        field = HeightField(np.tile(heights, (2, 1)))
        decoded = decode_height(encode_height(field, cmap), cmap)
        np.testing.assert_array_equal(decoded.values, field.values)

    def test_boundary_heights(self, cmap):
        field = HeightField(np.array([[0.0, 500.0]]))
        decoded = decode_height(encode_height(field, cmap), cmap)
        np.testing.assert_array_equal(decoded.values, [[0.0, 500.0]])


class TestStopColors:
    def test_stops_encode_to_their_colors(self, cmap):
        # the five stops sit at fractions 0, .25, .5, .75, 1 of the range
        heights = np.array([[0.0, 125.0, 250.0, 375.0, 500.0]])
        img = encode_height(HeightField(heights), cmap)
        expected = np.array(
            [[[0, 0, 255], [0, 255, 255], [0, 255, 0], [255, 255, 0], [255, 0, 0]]]
        ) / 255.0
        np.testing.assert_allclose(img, expected, atol=1e-12)

    def test_lut_colors_unique(self, cmap):
        colors = {tuple(row) for row in np.round(cmap.lut * 255).astype(int)}
        assert len(colors) == cmap.lut.shape[0]


def test_gray_pixel_decodes_to_lowest_tied_height(cmap):
    """An off-palette color can tie between LUT entries; ties go to the
    lower height so degenerate inputs degrade predictably."""
    gray = np.full((1, 1, 3), 128 / 255.0)
    # independent oracle: brute-force nearest neighbour with index-order ties
    d2 = np.sum((cmap.lut - gray[0, 0]) ** 2, axis=1)
    oracle_idx = int(np.argmin(d2))  # argmin takes the first (lowest) index
    oracle_height = cmap.entry_heights(0.0, 500.0)[oracle_idx]
    decoded = decode_height(gray, cmap)
    assert decoded.values[0, 0] == oracle_height
    # the tie is real: more than one entry attains the minimum distance
    assert np.sum(np.isclose(d2, d2[oracle_idx])) > 1


def test_decode_respects_custom_range(cmap, rng):
    field = HeightField(rng.uniform(100.0, 300.0, size=(4, 4)), height_min=100.0, height_max=300.0)
    img = encode_height(field, cmap)
    decoded = decode_height(img, cmap, height_min=100.0, height_max=300.0)
    assert np.max(np.abs(decoded.values - field.values)) <= 200.0 / 255.0


def test_out_of_range_heights_rejected(cmap):
    with pytest.raises(HeightRangeError):
        encode_height(HeightField(np.array([[501.0]])), cmap)
    with pytest.raises(HeightRangeError):
        encode_height(HeightField(np.array([[-0.5]])), cmap)


def test_colormap_lookup_matches_encode(cmap, rng):
    heights = rng.uniform(0.0, 500.0, size=(5, 5))
    via_lookup = colormap_lookup(heights, cmap, 0.0, 500.0)
    via_encode = encode_height(HeightField(heights), cmap)
    np.testing.assert_array_equal(via_lookup, via_encode)


def test_colormap_file_roundtrip(tmp_path, cmap):
    path = tmp_path / "cmap.json"
    save_colormap_file(path, cmap, height_min=0.0, height_max=500.0)
    loaded, hmin, hmax = load_colormap_file(path)
    assert (hmin, hmax) == (0.0, 500.0)
    np.testing.assert_array_equal(loaded.lut, cmap.lut)
    # file is plain JSON a human can edit
    blob = json.loads(path.read_text())
    assert blob["resolution"] == cmap.lut.shape[0]
