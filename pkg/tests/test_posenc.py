import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mixerlab.numerics import DimensionError
from mixerlab.posenc import (Grid2D, PosEncKind, PosEncSpec, ape_add, cpe, depthwise_conv2d, lepe,
                             rope_frequencies, rope_rotate)


def test_grid_layout_is_row_major():
    g = Grid2D(3, 4)
    assert g.tokens == 12 and g.position(5) == (1, 1) and g.index(2, 3) == 11
    rows, cols = g.coords()
    assert rows[7] == 1 and cols[7] == 3
    assert Grid2D.square(49) == Grid2D(7, 7)
    with pytest.raises(ValueError):
        Grid2D.square(50)
    with pytest.raises(ValueError):
        Grid2D(0, 3)


def test_dwconv_identity_kernel_and_impulse():
    g = Grid2D(4, 5)
    x = np.random.default_rng(0).standard_normal((20, 3))
    k = np.zeros((3, 3, 3))
    k[1, 1] = 1.0
    np.testing.assert_array_equal(depthwise_conv2d(x, g, k), x)
    # impulse in the middle reproduces the (cross-correlation) kernel flipped
    imp = np.zeros((20, 1))
    imp[g.index(2, 2)] = 1.0
    kern = np.arange(9.0).reshape(3, 3, 1)
    out = depthwise_conv2d(imp, g, kern).reshape(4, 5)
    np.testing.assert_array_equal(out[1:4, 1:4], kern[::-1, ::-1, 0])


def test_dwconv_zero_padding_at_corners():
    g = Grid2D(2, 2)
    out = depthwise_conv2d(np.ones((4, 1)), g, np.ones((3, 3, 1)), np.array([0.5]))
    np.testing.assert_array_equal(out.ravel(), [4.5] * 4)


def test_dwconv_shape_errors():
    g = Grid2D(2, 2)
    with pytest.raises(DimensionError):
        depthwise_conv2d(np.ones((5, 1)), g, np.ones((3, 3, 1)))
    with pytest.raises(DimensionError):
        depthwise_conv2d(np.ones((4, 2)), g, np.ones((3, 3, 1)))
    with pytest.raises(DimensionError):
        depthwise_conv2d(np.ones((4, 1)), g, np.ones((2, 2, 1)))


def test_encodings_compose_as_documented(rng):
    g = Grid2D(3, 3)
    x = rng.standard_normal((9, 4))
    v = rng.standard_normal((9, 4))
    k = rng.standard_normal((3, 3, 4))
    np.testing.assert_allclose(cpe(x, g, k), x + depthwise_conv2d(x, g, k))
    np.testing.assert_allclose(lepe(x, v, g, k), x + depthwise_conv2d(v, g, k))
    np.testing.assert_array_equal(ape_add(x, np.ones_like(x)), x + 1)
    with pytest.raises(DimensionError):
        ape_add(x, np.ones((8, 4)))


def test_rope_frequencies():
    np.testing.assert_allclose(rope_frequencies(8, 10000.0), [1.0, 0.1, 0.01, 0.001])


def test_rope_at_origin_is_identity_and_rotation_is_axial():
    g = Grid2D(3, 3)
    z = np.tile(np.array([1.0, 0.0, 1.0, 0.0]), (9, 1))
    r = rope_rotate(z, g, base=10000.0)
    np.testing.assert_allclose(r[0], z[0])
    # token (row 1, col 2): first pair rotates by 1 rad, second by 2 rad
    t = g.index(1, 2)
    np.testing.assert_allclose(r[t], [math.cos(1), math.sin(1), math.cos(2), math.sin(2)], atol=1e-15)


@given(st.integers(0, 10 ** 6), st.integers(1, 3))
def test_rope_preserves_norm_and_relative_scores(seed, heads):
    rng = np.random.default_rng(seed)
    g = Grid2D(8, 8)
    width = 8 * heads
    z = rng.standard_normal((g.tokens, width))
    r = rope_rotate(z, g, 100.0, heads)
    np.testing.assert_allclose(np.linalg.norm(r, axis=1), np.linalg.norm(z, axis=1), rtol=1e-12)
    q, k = rng.standard_normal(8), rng.standard_normal(8)
    rq = rope_rotate(np.tile(q, (64, 1)), g, 100.0)
    rk = rope_rotate(np.tile(k, (64, 1)), g, 100.0)
    a, b = g.index(1, 2), g.index(3, 0)
    a2, b2 = g.index(4, 6), g.index(6, 4)  # both shifted by (3, 4)
    assert rq[a] @ rk[b] == pytest.approx(rq[a2] @ rk[b2], abs=1e-12)


def test_rope_width_rules():
    with pytest.raises(DimensionError):
        rope_rotate(np.ones((4, 6)), Grid2D(2, 2))
    with pytest.raises(DimensionError):
        rope_rotate(np.ones((4, 8)), Grid2D(2, 2), heads=3)


def test_posenc_spec_roundtrip():
    s = PosEncSpec("rope", 5, 500.0)
    assert s.kind is PosEncKind.ROPE
    assert PosEncSpec.from_dict(s.to_dict()) == s
    with pytest.raises(ValueError):
        PosEncSpec("cpe", dwconv_kernel=4)
    with pytest.raises(ValueError):
        PosEncSpec("ape", rope_base=0)
