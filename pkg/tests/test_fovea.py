import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from apr import fovea


def test_warp_fixed_point():
    assert fovea.warp(0.0, 0.0) == (0.0, 0.0)


def test_warp_unit_axis():
    u, v = fovea.warp(1.0, 0.0)
    assert u == pytest.approx(0.693147, abs=1e-6) and v == 0.0


def test_warp_corner():
    u, v = fovea.warp(1.0, 1.0)
    assert u == pytest.approx(0.881374, abs=1e-6)
    assert v == pytest.approx(0.881374, abs=1e-6)
    assert fovea.MAX_WARPED == pytest.approx(math.log(math.sqrt(2) + 1))


def test_grid_size_and_bounds():
    g = fovea.build_grid(64)
    assert g.coords.shape == (64, 64, 2)
    assert np.abs(g.coords).max() <= 0.8814


def test_grid_odd_symmetry():
    g = fovea.build_grid(64)
    assert np.array_equal(g.u, -g.u[::-1, ::-1])
    assert np.array_equal(g.v, -g.v[::-1, ::-1])


def test_grid_is_immutable():
    g = fovea.build_grid(8)
    with pytest.raises(ValueError):
        g.u[0, 0] = 1.0


def test_grid_center_sub_linear():
    g = fovea.build_grid(64)
    c = fovea.pixel_centers(64)
    r = math.hypot(c[32], c[32])
    r_warp = math.hypot(g.u[32, 32], g.v[32, 32])
    assert r_warp == pytest.approx(r * r, rel=0.05)
    assert r_warp < r


@pytest.mark.parametrize("size", [0, 1, -3])
def test_grid_rejects_small(size):
    with pytest.raises(ValueError):
        fovea.build_grid(size)


def test_uniform_grid_is_identity_sampling(rng):
    img = rng.random((16, 16, 3))
    out = fovea.sample(img, fovea.build_grid(16, foveate=False))
    np.testing.assert_allclose(out, img, atol=1e-12)


def test_constant_image():
    out = fovea.foveate(np.full((40, 40, 3), 0.3), 16)
    np.testing.assert_allclose(out, 0.3, atol=1e-12)


def test_center_pixel_preserved(rng):
    # Odd-size output puts a pixel center exactly on (0, 0); even-size
    # source has its center on the corner of four pixels, so fill those.
    src = rng.random((64, 64))
    src[31:33, 31:33] = 0.77
    out = fovea.sample(src, fovea.build_grid(33))
    assert out[16, 16] == pytest.approx(0.77, abs=1e-12)


def test_output_range(rng):
    out = fovea.foveate(rng.random((50, 50, 4)), 20)
    assert out.min() >= 0.0 and out.max() <= 1.0


def _dihedral(img):
    for k in range(4):
        r = np.rot90(img, k)
        yield r
        yield r[:, ::-1]


def test_rotation_equivariance(rng):
    src = rng.random((64, 64, 3))
    g = fovea.build_grid(16)
    np.testing.assert_allclose(fovea.sample(np.rot90(src), g), np.rot90(fovea.sample(src, g)), atol=1e-5)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), src_size=st.integers(4, 40), out_size=st.integers(2, 24))
def test_dihedral_equivariance(seed, src_size, out_size):
    src = np.random.default_rng(seed).random((src_size, src_size))
    g = fovea.build_grid(out_size)
    for a, b in zip(_dihedral(src), _dihedral(fovea.sample(src, g))):
        np.testing.assert_allclose(fovea.sample(a, g), b, atol=1e-5)


def test_radial_monotonicity_dense():
    r = np.sort(np.random.default_rng(0).uniform(0, math.sqrt(2), 10_000))
    r = r[r > 0]
    f = r * np.log(r + 1)
    assert np.all(np.diff(f) > 0)


@given(a=st.floats(1e-6, math.sqrt(2)), b=st.floats(1e-6, math.sqrt(2)))
def test_radial_monotonicity_pairs(a, b):
    if a == b:
        return
    lo, hi = min(a, b), max(a, b)
    assert lo * math.log(lo + 1) < hi * math.log(hi + 1)


@given(u=st.floats(-1, 1), v=st.floats(-1, 1))
def test_containment(u, v):
    wu, wv = fovea.warp(u, v)
    assert -1 <= wu <= 1 and -1 <= wv <= 1
    assert abs(wu) <= fovea.MAX_WARPED + 1e-15 and abs(wv) <= fovea.MAX_WARPED + 1e-15


@pytest.mark.parametrize("src_size", [16, 64, 256])
def test_no_clamping_needed(src_size):
    g = fovea.build_grid(64)
    x = (g.u + 1) * 0.5 * src_size - 0.5
    y = (g.v + 1) * 0.5 * src_size - 0.5
    assert x.min() >= 0 and x.max() <= src_size - 1
    assert y.min() >= 0 and y.max() <= src_size - 1


def test_foveal_magnification():
    # Central 25% of the source area is the square |u'|,|v'| <= 0.5.
    g = fovea.build_grid(64)
    central = (np.abs(g.u) <= 0.5) & (np.abs(g.v) <= 0.5)
    assert central.mean() > 0.25


def test_sample_rejects_tiny_source():
    with pytest.raises(ValueError):
        fovea.sample(np.zeros((1, 5)), fovea.build_grid(4))
