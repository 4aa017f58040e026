"""Dense kernels, nonlinearities and the seeded RNG shared by every mixer.

Token matrices and dense matrices are plain 2-D numpy arrays. The helpers
``as_tokens`` and ``as_matrix`` validate shape and finiteness at module
boundaries; everything downstream assumes validated input.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

DEFAULT_DTYPE = np.float64


class DimensionError(ValueError):
    """Operand shapes do not fit together."""


class NumericalDegeneracyError(ArithmeticError):
    """A normalizer or denominator left its valid range."""


def as_matrix(a, dtype=None, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=dtype or DEFAULT_DTYPE)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{name} must be non-empty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def as_tokens(x, dtype=None) -> np.ndarray:
    """Validate an ``(N, C)`` token matrix (N tokens of width C)."""
    return as_matrix(x, dtype=dtype, name="token matrix")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit shape check.

    Accumulation happens in the operands' precision (float64 by default).
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def naive_matmul(a, b) -> np.ndarray:
    """Triple-loop product. Slow; exists as an oracle for ``matmul``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise product of equal shapes, or a row vector against a matrix."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape == b.shape:
        return a * b
    if a.ndim == 2 and b.ndim == 2 and 1 in (a.shape[0], b.shape[0]) and a.shape[1] == b.shape[1]:
        return a * b
    raise DimensionError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")


def outer(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.multiply.outer(np.ravel(u), np.ravel(v))


def softmax_rows(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m)
    shifted = m - m.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softplus(x):
    """log(1 + e^x) without overflow; returns x itself for large x."""
    return np.logaddexp(0.0, x)


def elu_plus_one(x):
    x = np.asarray(x)
    # clip before exp so the unused branch cannot overflow
    return np.where(x > 0, x + 1.0, np.exp(np.minimum(x, 0.0)))


def relu_plus_eps(x, eps: float = 1e-6):
    return np.maximum(x, 0.0) + eps


def silu(x):
    x = np.asarray(x)
    return x / (1.0 + np.exp(-x))


def gelu(x):
    x = np.asarray(x)
    return 0.5 * x * (1.0 + special.erf(x / math.sqrt(2.0)))


def layer_norm(x: np.ndarray, weight=None, bias=None, eps: float = 1e-5) -> np.ndarray:
    """Per-token layer normalization over the channel axis."""
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    out = (x - mu) / np.sqrt(var + eps)
    if weight is not None:
        out = out * weight
    if bias is not None:
        out = out + bias
    return out


# --- RNG -------------------------------------------------------------------
#
# PCG64 through numpy's Generator. Streams are split with SeedSequence.spawn,
# so child streams are independent of how many draws the parent has made.


def make_rng(seed: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def split_rng(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    seeds = rng.bit_generator.seed_seq.spawn(n)
    return [np.random.Generator(np.random.PCG64(s)) for s in seeds]


def uniform_init(rng: np.random.Generator, shape, fan_in: int | None = None) -> np.ndarray:
    """Uniform weights in [-1/sqrt(fan_in), 1/sqrt(fan_in)]; fan_in defaults to shape[0]."""
    shape = tuple(shape)
    if fan_in is None:
        fan_in = shape[0]
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


def random_tokens(rng: np.random.Generator, n: int, c: int, scale: float = 1.0) -> np.ndarray:
    return scale * rng.standard_normal((n, c))
