import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from restain.colorspace import (LabImage, extract_L, lab_array_to_rgb, lab_to_rgb, rgb_array_to_lab,
                                rgb_to_lab)
from restain.imagecore import RgbImage
from restain.tensornet.autograd import Tensor
from restain.tensornet.colorops import lab_to_rgb_t, rgb_to_lab_t


def _reference_lab(rgb):
    """Independent scalar sRGB -> XYZ -> Lab (D65) written from the textbook formulas."""
    def lin(c):
        c = c / 255.0
        return c / 12.92 if c <= 0.04045 else ((c + 0.055) / 1.055) ** 2.4

    r, g, b = (lin(float(c)) for c in rgb)
    x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b
    y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b
    z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b
    xn = 0.4124564 + 0.3575761 + 0.1804375
    yn = 0.2126729 + 0.7151522 + 0.0721750
    zn = 0.0193339 + 0.1191920 + 0.9503041

    def f(t):
        return t ** (1 / 3) if t > (6 / 29) ** 3 else t / (3 * (6 / 29) ** 2) + 4 / 29

    fx, fy, fz = f(x / xn), f(y / yn), f(z / zn)
    return 116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)


def _px(*rgb):
    return RgbImage(np.array([[rgb]], dtype=np.uint8))


def test_white_and_black():
    w = rgb_to_lab(_px(255, 255, 255))
    assert abs(w.L[0, 0] - 100) < 1e-6 and abs(w.a[0, 0]) < 1e-6 and abs(w.b[0, 0]) < 1e-6
    k = rgb_to_lab(_px(0, 0, 0))
    assert np.allclose([k.L[0, 0], k.a[0, 0], k.b[0, 0]], 0, atol=1e-9)


@pytest.mark.parametrize("rgb", [(128, 64, 200), (12, 250, 3), (200, 180, 190), (1, 2, 3)])
def test_matches_reference_formulas(rgb):
    lab = rgb_array_to_lab(np.array([[rgb]], dtype=np.uint8))[0, 0]
    assert np.allclose(lab, _reference_lab(rgb), atol=1e-9)


def test_lab_to_rgb_white_and_clamp():
    white = LabImage(np.full((1, 1), 100.0), np.zeros((1, 1)), np.zeros((1, 1)))
    assert lab_to_rgb(white).data[0, 0].tolist() == [255, 255, 255]
    hot = LabImage(np.full((1, 1), 200.0), np.zeros((1, 1)), np.zeros((1, 1)))
    assert lab_to_rgb(hot).data[0, 0].tolist() == [255, 255, 255]


def test_full_cube_round_trip_is_within_one():
    # every 8-bit triple on a stride-5 lattice plus the extremes
    v = np.unique(np.r_[np.arange(0, 256, 5), 255])
    grid = np.stack(np.meshgrid(v, v, v, indexing="ij"), axis=-1).reshape(-1, 1, 3).astype(np.uint8)
    back = lab_to_rgb(rgb_to_lab(RgbImage(grid))).data
    assert np.abs(back.astype(int) - grid.astype(int)).max() <= 1


@settings(max_examples=200, deadline=None)
@given(st.tuples(st.integers(0, 255), st.integers(0, 255), st.integers(0, 255)))
def test_round_trip_property(rgb):
    back = lab_to_rgb(rgb_to_lab(_px(*rgb))).data[0, 0]
    assert np.abs(back.astype(int) - np.array(rgb)).max() <= 1


def test_gray_axis():
    g = np.arange(256, dtype=np.uint8)
    gray = RgbImage(np.stack([g, g, g], axis=-1)[None])
    lab = rgb_to_lab(gray)
    assert np.all(np.diff(lab.L[0]) > 0)
    assert np.abs(lab.a).max() < 1e-6 and np.abs(lab.b).max() < 1e-6


def test_extract_L():
    rng = np.random.default_rng(0)
    img = RgbImage(rng.integers(0, 256, (5, 7, 3)).astype(np.uint8))
    assert np.array_equal(extract_L(img).data, rgb_to_lab(img).L)
    assert np.allclose(extract_L(_px(255, 255, 255)).data, 100)
    assert np.allclose(extract_L(_px(0, 0, 0)).data, 0)


def test_tensor_variants_match_plain():
    rng = np.random.default_rng(1)
    rgb = rng.integers(0, 256, (6, 6, 3)).astype(np.float64)
    lab = rgb_array_to_lab(rgb)
    lab_t = rgb_to_lab_t(Tensor(rgb.transpose(2, 0, 1)[None])).data[0].transpose(1, 2, 0)
    assert np.abs(lab_t - lab).max() < 1e-9
    back_t = lab_to_rgb_t(Tensor(lab.transpose(2, 0, 1)[None])).data[0].transpose(1, 2, 0)
    assert np.abs(back_t - lab_array_to_rgb(lab)).max() < 1e-9
    assert np.abs(back_t - rgb).max() < 1e-6
