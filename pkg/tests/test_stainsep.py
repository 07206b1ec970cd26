import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from restain.imagecore import PlaneImage, RgbImage, SynthStyle, compose_stained
from restain.stainsep import (OdParams, StainImage, StainMatrix, deconvolve, deconvolve_od, extract_he,
                              load_stain_matrix, od_to_rgb, restain, rgb_to_od, save_stain_matrix)

M = np.array([[0.65, 0.70, 0.29], [0.07, 0.99, 0.11], [0.27, 0.57, 0.78]])


def _px(*rgb):
    return RgbImage(np.array([[rgb]], dtype=np.uint8))


def _cramer(m, y):
    """Solve a = y m^-1, i.e. m^T a = y, by Cramer's rule."""
    mt = m.T
    d = np.linalg.det(mt)
    out = []
    for i in range(3):
        mi = mt.copy()
        mi[:, i] = y
        out.append(np.linalg.det(mi) / d)
    return np.array(out)


def _stain(h, e, r):
    return StainImage(PlaneImage(np.full((1, 1), h)), PlaneImage(np.full((1, 1), e)),
                      PlaneImage(np.full((1, 1), r)))


def test_rgb_to_od_examples():
    assert np.allclose(rgb_to_od(_px(255, 255, 255)), 0.0)
    assert np.allclose(rgb_to_od(_px(128, 128, 128)), -np.log(128 / 255))
    assert np.allclose(rgb_to_od(_px(0, 0, 0)), -np.log(1 / 255))
    assert abs(-np.log(1 / 255) - 5.5413) < 1e-4


def test_od_to_rgb_examples():
    assert od_to_rgb(np.zeros((1, 1, 3))).data[0, 0].tolist() == [255] * 3
    assert od_to_rgb(np.full((1, 1, 3), 0.6891)).data[0, 0].tolist() == [128] * 3


def test_od_round_trip_exact_above_floor():
    v = np.arange(1, 256, dtype=np.uint8)
    img = RgbImage(np.stack([v, v[::-1], v], axis=-1)[None])
    assert od_to_rgb(rgb_to_od(img)) == img


def test_deconvolve_first_row_and_zero():
    assert np.allclose(deconvolve_od(M[0], StainMatrix()), [1, 0, 0], atol=1e-12)
    assert np.allclose(deconvolve_od(np.zeros(3), StainMatrix()), 0)


def test_deconvolve_matches_cramer():
    rng = np.random.default_rng(0)
    sm = StainMatrix()
    for _ in range(50):
        a = rng.uniform(0, 2, 3)
        y = a @ M
        assert np.abs(deconvolve_od(y, sm) - _cramer(M, y)).max() < 1e-10


def test_restain_examples():
    # 255 * exp(-(0.65, 0.70, 0.29)) = (133.28, 126.63, 190.81)
    assert restain(_stain(1, 0, 0)).data[0, 0].tolist() == [133, 127, 191]
    assert restain(_stain(0, 0, 0)).data[0, 0].tolist() == [255, 255, 255]


def test_deconvolve_clamps_dyes_keeps_residual_signed():
    rng = np.random.default_rng(3)
    img = RgbImage(rng.integers(0, 256, (20, 20, 3)).astype(np.uint8))
    st_ = deconvolve(img)
    raw = deconvolve_od(rgb_to_od(img), StainMatrix())
    assert st_.H.data.min() >= 0 and st_.E.data.min() >= 0
    assert np.array_equal(st_.residual.data, raw[..., 2])
    assert (raw[..., 2] < 0).any()


def test_extract_he_white_and_pure_h():
    h, e = extract_he(RgbImage(np.full((3, 3, 3), 255, np.uint8)))
    assert np.all(h.data == 0) and np.all(e.data == 0)
    # unquantized pure-H pixel
    a = deconvolve_od(M[0] * 1.0, StainMatrix())
    assert abs(a[0] - 1) < 1e-6 and abs(a[1]) < 1e-6


def test_intensity_scale_proportionality():
    rng = np.random.default_rng(1)
    h = rng.uniform(0.2, 0.8, (16, 16))
    e = rng.uniform(0.2, 0.8, (16, 16))
    base = SynthStyle(M, (1.0, 1.0))
    scaled = SynthStyle(M, (1.5, 1.5))
    h1, _ = extract_he(compose_stained(base, h, e), StainMatrix(base.stain_matrix))
    h2, _ = extract_he(compose_stained(scaled, h, e), StainMatrix(base.stain_matrix))
    ratio = h2.data.mean() / h1.data.mean()
    assert abs(ratio - 1.5) / 1.5 < 0.02


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 2), st.floats(0, 2), st.floats(-0.3, 0.3))
def test_deconvolve_after_restain_within_quantization_bound(h, e, r):
    sm = StainMatrix()
    exact = 255 * np.exp(-(np.array([h, e, r]) @ sm.m))
    if exact.max() > 255 or exact.min() < 1:
        return  # clipped channels carry no recoverable information
    back = deconvolve(restain(_stain(h, e, r)))
    got = np.array([back.H.data[0, 0], back.E.data[0, 0], back.residual.data[0, 0]])
    # rounding moves each channel's OD by at most ln((v + 0.5) / v); M^-1 mixes the channels
    od_err = np.log((exact + 0.5) / exact)
    bound = np.abs(sm.m_inv).T @ od_err + 1e-12
    assert np.all(np.abs(got - [max(h, 0), max(e, 0), r]) <= bound)
    if exact.min() >= 66:
        assert np.abs(got - [h, e, r]).max() <= 0.02


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 3), min_size=3, max_size=3), st.lists(st.floats(0, 3), min_size=3, max_size=3))
def test_deconvolution_is_linear(y1, y2):
    sm = StainMatrix()
    y1, y2 = np.array(y1), np.array(y2)
    assert np.allclose(deconvolve_od(y1 + y2, sm), deconvolve_od(y1, sm) + deconvolve_od(y2, sm), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=9, max_size=9))
def test_inverse_for_user_matrices(vals):
    m = np.array(vals).reshape(3, 3)
    if abs(np.linalg.det(m)) <= 1e-3:
        return
    sm = StainMatrix(m)
    assert np.abs(sm.m @ sm.m_inv - np.eye(3)).max() < 1e-8


def test_singular_matrix_rejected():
    with pytest.raises(ValueError):
        StainMatrix(np.ones((3, 3)))


def test_from_vectors_fills_residual():
    sm = StainMatrix.from_vectors([1, 1, 0], [0, 1, 1])
    assert np.allclose(np.linalg.norm(sm.m, axis=1), 1)
    assert abs(sm.m[2] @ sm.m[0]) < 1e-12 and abs(sm.m[2] @ sm.m[1]) < 1e-12


def test_od_params_validation():
    with pytest.raises(ValueError):
        OdParams(i0=255, floor=0)
    with pytest.raises(ValueError):
        OdParams(i0=100, floor=200)
    p = OdParams(i0=240, floor=2)
    assert np.allclose(rgb_to_od(_px(240, 1, 120), p)[0, 0], [0, -np.log(2 / 240), -np.log(0.5)])


def test_stain_matrix_file_round_trip(tmp_path):
    sm = StainMatrix.from_vectors([0.6, 0.7, 0.3], [0.1, 0.9, 0.2])
    save_stain_matrix(sm, tmp_path / "m.txt")
    assert np.array_equal(load_stain_matrix(tmp_path / "m.txt").m, sm.m)
    (tmp_path / "bad.txt").write_text("1 2 3\n")
    with pytest.raises(ValueError):
        load_stain_matrix(tmp_path / "bad.txt")
