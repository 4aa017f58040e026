import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mixerlab.scan import ScanElement, blelloch_exclusive, chunk_bounds, combine, identity_like, scan_parallel, scan_serial


def _elements(seed, n, width=3):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 1, (n, width)), rng.standard_normal((n, width))


@given(st.integers(0, 2 ** 32 - 1))
def test_combine_is_associative(seed):
    g, u = _elements(seed, 3)
    a, b, c = (ScanElement(g[i], u[i]) for i in range(3))
    left = combine(combine(a, b), c)
    right = combine(a, combine(b, c))
    np.testing.assert_allclose(left.g, right.g, atol=1e-15)
    np.testing.assert_allclose(left.u, right.u, atol=1e-15)


def test_identity_element():
    g, u = _elements(0, 1)
    e = ScanElement(g[0], u[0])
    for out in (combine(identity_like(e), e), combine(e, identity_like(e))):
        np.testing.assert_array_equal(out.g, e.g)
        np.testing.assert_array_equal(out.u, e.u)


def test_scan_serial_small_case():
    g = np.array([0.5, 0.5, 2.0])
    u = np.array([1.0, 1.0, 1.0])
    np.testing.assert_allclose(scan_serial(g, u), [1.0, 1.5, 4.0])


@given(st.integers(1, 70), st.integers(1, 80), st.integers(0, 2 ** 32 - 1))
def test_parallel_matches_serial(n, chunks, seed):
    g, u = _elements(seed, n)
    np.testing.assert_allclose(scan_parallel(g, u, chunks), scan_serial(g, u), rtol=0, atol=1e-12)


def test_single_chunk_is_bitwise_serial():
    g, u = _elements(3, 50)
    np.testing.assert_array_equal(scan_parallel(g, u, 1), scan_serial(g, u))


def test_workers_do_not_change_result():
    g, u = _elements(4, 200, width=5)
    np.testing.assert_array_equal(scan_parallel(g, u, 7, workers=3), scan_parallel(g, u, 7, workers=1))


@given(st.integers(1, 33), st.integers(0, 2 ** 32 - 1))
def test_blelloch_exclusive_matches_prefix_fold(n, seed):
    g, u = _elements(seed, n)
    out = blelloch_exclusive(g, u)
    acc = identity_like(ScanElement(g[0], u[0]))
    for k in range(n):
        np.testing.assert_allclose(out.g[k], acc.g, atol=1e-14)
        np.testing.assert_allclose(out.u[k], acc.u, atol=1e-12)
        acc = combine(acc, ScanElement(g[k], u[k]))


def test_chunk_bounds_cover_sequence():
    for n, c in [(10, 3), (5, 9), (1, 1), (64, 8)]:
        b = chunk_bounds(n, c)
        assert b[0][0] == 0 and b[-1][1] == n
        assert all(x[1] == y[0] for x, y in zip(b, b[1:]))
        assert all(hi > lo for lo, hi in b)


def test_scan_errors():
    with pytest.raises(ValueError):
        scan_serial(np.ones(3), np.ones(4))
    with pytest.raises(ValueError):
        scan_parallel(np.ones(3), np.ones(3), chunk=0)
    with pytest.raises(ValueError):
        scan_serial(np.ones(0), np.ones(0))
