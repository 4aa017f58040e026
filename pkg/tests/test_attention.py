import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mixerlab import faults
from mixerlab.attention import (AttnParams, DenominatorClampWarning, Kernel, attention_weights, head_slices,
                                linear_attention_causal, linear_attention_parallel, linear_attention_recurrent,
                                safe_divide, softmax_attention)
from mixerlab.numerics import DimensionError, NumericalDegeneracyError


def _setup(seed, n=12, c=8, d=4, heads=1, kernel=Kernel.ELU_PLUS_ONE):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, c)), AttnParams.init(rng, c, d, heads, kernel)


def _apply_weights(w, x, p):
    v = x @ p.w_v
    ch = p.channels // p.heads
    return np.concatenate([w[h] @ v[:, h * ch:(h + 1) * ch] for h in range(p.heads)], axis=1)


def test_softmax_with_zero_queries_averages_values():
    x = np.random.default_rng(0).standard_normal((5, 4))
    p = AttnParams(np.zeros((4, 2)), np.ones((4, 2)), np.eye(4))
    np.testing.assert_allclose(softmax_attention(x, p), np.tile(x.mean(axis=0), (5, 1)), atol=1e-14)


@pytest.mark.parametrize("heads", [1, 2, 4])
def test_softmax_matches_explicit_weights(heads):
    x, p = _setup(1, heads=heads)
    w = attention_weights(x, p, kind="softmax")
    np.testing.assert_allclose(softmax_attention(x, p), _apply_weights(w, x, p), atol=1e-13)


@given(st.integers(2, 20), st.sampled_from([1, 2]), st.sampled_from(list(Kernel)[1:]), st.integers(0, 10 ** 6))
def test_reordered_matches_explicit(n, heads, kernel, seed):
    x, p = _setup(seed, n=n, heads=heads, kernel=kernel)
    w = attention_weights(x, p, kind="linear")
    np.testing.assert_allclose(linear_attention_parallel(x, p), _apply_weights(w, x, p), rtol=1e-10, atol=1e-12)


@given(st.integers(1, 20), st.sampled_from([1, 2]), st.integers(0, 10 ** 6))
def test_causal_recurrent_and_masked_agree(n, heads, seed):
    x, p = _setup(seed, n=n, heads=heads)
    causal = linear_attention_causal(x, p)
    rec, state = linear_attention_recurrent(x, p)
    masked = _apply_weights(attention_weights(x, p, kind="linear", causal=True), x, p)
    np.testing.assert_allclose(rec, causal, atol=1e-12)
    np.testing.assert_allclose(masked, causal, atol=1e-12)
    assert state.step == n


def test_recurrent_state_continues_sequence():
    x, p = _setup(2, n=15, heads=2)
    y1, st1 = linear_attention_recurrent(x[:6], p)
    y2, _ = linear_attention_recurrent(x[6:], p, st1)
    np.testing.assert_allclose(np.vstack([y1, y2]), linear_attention_causal(x, p), atol=1e-12)
    # the passed-in state is not mutated
    assert st1.step == 6


def test_state_is_block_diagonal_across_heads():
    x, p = _setup(3, n=6, c=8, d=4, heads=2)
    _, state = linear_attention_recurrent(x, p)
    assert np.all(state.s[:2, 4:] == 0) and np.all(state.s[2:, :4] == 0)


def test_multi_head_is_concatenation_of_single_heads():
    x, p = _setup(4, c=8, d=4, heads=2)
    y = linear_attention_parallel(x, p)
    for qs, vs in head_slices(4, 8, 2):
        # one head on its own: restrict Q/K columns, keep the head's value columns
        w_v = np.zeros((8, 8))
        w_v[:, vs] = p.w_v[:, vs]
        single = AttnParams(p.w_q[:, qs], p.w_k[:, qs], w_v, 1, p.kernel)
        np.testing.assert_allclose(linear_attention_parallel(x, single)[:, vs], y[:, vs], atol=1e-13)


def test_weight_rows_sum_to_one():
    x, p = _setup(5, heads=2)
    for kind in ("linear", "softmax"):
        for causal in (False, True):
            w = attention_weights(x, p, kind=kind, causal=causal)
            np.testing.assert_allclose(w.sum(axis=2), 1.0, atol=1e-12)
            if causal:
                assert np.all(np.triu(w[0], 1) == 0)


def test_identity_kernel_is_rejected_for_normalized_forms():
    x, p = _setup(6, kernel=Kernel.IDENTITY)
    for fn in (linear_attention_parallel, linear_attention_causal):
        with pytest.raises(ValueError):
            fn(x, p)


def test_safe_divide_policy():
    num = np.ones((3, 1))
    with pytest.warns(DenominatorClampWarning):
        out = safe_divide(num, np.array([[1e-20], [1.0], [2.0]]))
    assert out[0, 0] == pytest.approx(1e12)
    for bad in (0.0, -1.0, np.nan, np.inf):
        with pytest.raises(NumericalDegeneracyError):
            safe_divide(num, np.array([[1.0], [bad], [1.0]]))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        safe_divide(num, np.ones((3, 1)))


def test_param_validation():
    rng = np.random.default_rng(0)
    with pytest.raises(DimensionError):
        AttnParams(rng.standard_normal((4, 2)), rng.standard_normal((4, 3)), np.eye(4))
    with pytest.raises(DimensionError):
        AttnParams(rng.standard_normal((4, 2)), rng.standard_normal((4, 2)), np.eye(3))
    with pytest.raises(DimensionError):
        AttnParams.init(rng, 6, 4, heads=4)
    x, p = _setup(0)
    with pytest.raises(DimensionError):
        softmax_attention(x[:, :5], p)


def test_z_sign_fault_breaks_only_the_recurrence():
    x, p = _setup(7, n=10)
    ref = linear_attention_causal(x, p)
    with faults.inject("z-sign"):
        np.testing.assert_array_equal(linear_attention_causal(x, p), ref)
        with pytest.raises(NumericalDegeneracyError):
            linear_attention_recurrent(x, p)
    with pytest.raises(KeyError):
        with faults.inject("no-such-fault"):
            pass
    assert not faults.active("z-sign")
