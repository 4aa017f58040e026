import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mixerlab.numerics import (DimensionError, as_tokens, elu_plus_one, gelu, hadamard, layer_norm, make_rng,
                               matmul, naive_matmul, outer, relu_plus_eps, silu, softmax_rows, softplus, split_rng,
                               uniform_init)


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2 ** 32 - 1))
def test_matmul_matches_triple_loop(n, k, m, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((n, k)), rng.standard_normal((k, m))
    np.testing.assert_allclose(matmul(a, b), naive_matmul(a, b), rtol=1e-12, atol=1e-13)


def test_matmul_rejects_bad_shapes():
    with pytest.raises(DimensionError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(DimensionError):
        matmul(np.ones(3), np.ones((3, 1)))
    with pytest.raises(DimensionError):
        naive_matmul(np.ones((2, 3)), np.ones((4, 1)))


def test_as_tokens_validation():
    with pytest.raises(DimensionError):
        as_tokens(np.ones(4))
    with pytest.raises(DimensionError):
        as_tokens(np.ones((0, 3)))
    with pytest.raises(ValueError):
        as_tokens(np.array([[1.0, np.nan]]))
    assert as_tokens([[1, 2]]).dtype == np.float64


def test_hadamard_and_outer():
    a = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(hadamard(a, a), a * a)
    np.testing.assert_array_equal(hadamard(a, np.ones((1, 3))), a)
    with pytest.raises(DimensionError):
        hadamard(a, np.ones((3, 2)))
    assert outer(np.ones(2), np.arange(3.0)).shape == (2, 3)


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
def test_softmax_rows_is_a_distribution(row):
    p = softmax_rows(np.array([row]))
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(softmax_rows(np.array([row]) + 7.0), p, atol=1e-14)


def test_softplus_is_stable_and_positive():
    x = np.array([-800.0, -5.0, 0.0, 3.0, 800.0])
    y = softplus(x)
    assert np.all(np.isfinite(y)) and np.all(y >= 0)
    assert y[-1] == 800.0
    assert y[2] == pytest.approx(math.log(2.0))
    assert y[3] == pytest.approx(math.log1p(math.exp(3.0)))


def test_feature_maps_are_positive():
    x = np.linspace(-30, 30, 101)
    assert np.all(elu_plus_one(x) > 0)
    assert np.all(relu_plus_eps(x) >= 1e-6)
    np.testing.assert_allclose(elu_plus_one(np.array([-1.0, 2.0])), [math.exp(-1.0), 3.0])


def test_activation_reference_values():
    # GELU(1) = Phi(1); SiLU(1) = 1 / (1 + e^-1)
    assert gelu(np.array(1.0)) == pytest.approx(0.8413447460685429, abs=1e-15)
    assert silu(np.array(1.0)) == pytest.approx(1.0 / (1.0 + math.exp(-1.0)))


def test_layer_norm_moments(rng):
    x = rng.standard_normal((5, 16)) * 3 + 2
    y = layer_norm(x)
    np.testing.assert_allclose(y.mean(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=1), 1.0, rtol=1e-4)
    y2 = layer_norm(x, np.full(16, 2.0), np.ones(16))
    np.testing.assert_allclose(y2, 2 * y + 1)


def test_rng_helpers_are_deterministic():
    a = make_rng(7).standard_normal(4)
    b = make_rng(7).standard_normal(4)
    np.testing.assert_array_equal(a, b)
    kids = split_rng(make_rng(7), 3)
    draws = [k.standard_normal(3) for k in kids]
    assert not np.allclose(draws[0], draws[1])
    w = uniform_init(make_rng(0), (16, 4))
    assert np.all(np.abs(w) <= 0.25)
