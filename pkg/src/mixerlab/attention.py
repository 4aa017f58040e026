"""Softmax attention and linear attention in parallel, causal and recurrent form.

All mixers take an ``(N, C)`` token matrix and an :class:`AttnParams` bundle.
Queries and keys are ``d`` wide, values ``C`` wide. With ``heads > 1`` the
query/key width and the value width are each cut into ``heads`` contiguous
groups and every group is mixed independently (see :func:`multi_head`).

Linear attention never scales by 1/sqrt(d); only softmax attention does.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import faults
from .numerics import (
    DimensionError,
    NumericalDegeneracyError,
    as_matrix,
    as_tokens,
    elu_plus_one,
    relu_plus_eps,
    softmax_rows,
    uniform_init,
)

DENOMINATOR_FLOOR = 1e-12
RELU_EPS = 1e-6


class Kernel(str, enum.Enum):
    IDENTITY = "identity"
    RELU_PLUS_EPS = "relu+eps"
    ELU_PLUS_ONE = "elu+1"


def apply_kernel(kernel: Kernel | str, z: np.ndarray) -> np.ndarray:
    kernel = Kernel(kernel)
    if kernel is Kernel.IDENTITY:
        return z
    if kernel is Kernel.RELU_PLUS_EPS:
        return relu_plus_eps(z, RELU_EPS)
    return elu_plus_one(z)


class DenominatorClampWarning(RuntimeWarning):
    """Some normalizer values fell below the floor and were clamped."""


@dataclass(frozen=True)
class AttnParams:
    w_q: np.ndarray  # (C, d)
    w_k: np.ndarray  # (C, d)
    w_v: np.ndarray  # (C, C)
    heads: int = 1
    kernel: Kernel = Kernel.ELU_PLUS_ONE

    def __post_init__(self):
        object.__setattr__(self, "w_q", as_matrix(self.w_q, name="w_q"))
        object.__setattr__(self, "w_k", as_matrix(self.w_k, name="w_k"))
        object.__setattr__(self, "w_v", as_matrix(self.w_v, name="w_v"))
        object.__setattr__(self, "kernel", Kernel(self.kernel))
        c, d = self.w_q.shape
        if self.w_k.shape != (c, d):
            raise DimensionError(f"w_k must be {(c, d)}, got {self.w_k.shape}")
        if self.w_v.shape != (c, c):
            raise DimensionError(f"w_v must be {(c, c)}, got {self.w_v.shape}")
        check_heads(c, d, self.heads)

    @property
    def channels(self) -> int:
        return self.w_q.shape[0]

    @property
    def qk_width(self) -> int:
        return self.w_q.shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int, qk_width: int, heads: int = 1,
             kernel: Kernel | str = Kernel.ELU_PLUS_ONE) -> "AttnParams":
        return cls(
            w_q=uniform_init(rng, (channels, qk_width)),
            w_k=uniform_init(rng, (channels, qk_width)),
            w_v=uniform_init(rng, (channels, channels)),
            heads=heads,
            kernel=kernel,
        )


def check_heads(channels: int, qk_width: int, heads: int) -> None:
    if heads < 1:
        raise ValueError(f"heads must be >= 1, got {heads}")
    if channels % heads:
        raise DimensionError(f"channel count {channels} not divisible by {heads} heads")
    if qk_width % heads:
        raise DimensionError(f"query/key width {qk_width} not divisible by {heads} heads")


def head_slices(qk_width: int, channels: int, heads: int) -> list[tuple[slice, slice]]:
    """(query/key slice, value slice) per head, contiguous groups in order."""
    check_heads(channels, qk_width, heads)
    dh, ch = qk_width // heads, channels // heads
    return [(slice(h * dh, (h + 1) * dh), slice(h * ch, (h + 1) * ch)) for h in range(heads)]


@dataclass
class RecurrentState:
    """Running sums of the recurrent form: ``s`` is sum K^T V, ``z`` is sum K^T.

    With several heads ``s`` is block diagonal; off-diagonal blocks stay zero.
    """

    s: np.ndarray  # (d, C)
    z: np.ndarray  # (d, 1)
    step: int = 0

    @classmethod
    def zeros(cls, qk_width: int, channels: int, dtype=np.float64) -> "RecurrentState":
        return cls(np.zeros((qk_width, channels), dtype), np.zeros((qk_width, 1), dtype), 0)

    def copy(self) -> "RecurrentState":
        return RecurrentState(self.s.copy(), self.z.copy(), self.step)


def project(x: np.ndarray, p: AttnParams, kernelize: bool = True):
    """Return (Q, K, V). The kernel is applied to Q and K only."""
    x = as_tokens(x)
    if x.shape[1] != p.channels:
        raise DimensionError(f"input has {x.shape[1]} channels, params expect {p.channels}")
    q = x @ p.w_q
    k = x @ p.w_k
    if kernelize:
        q = apply_kernel(p.kernel, q)
        k = apply_kernel(p.kernel, k)
    return q, k, x @ p.w_v


def safe_divide(num: np.ndarray, den: np.ndarray, floor: float = DENOMINATOR_FLOOR) -> np.ndarray:
    """num / den for a positive normalizer.

    Values in (0, floor) are clamped to ``floor`` and reported through a
    :class:`DenominatorClampWarning`; non-positive or non-finite values raise.
    """
    if not np.all(np.isfinite(den)) or np.any(den <= 0.0):
        raise NumericalDegeneracyError(
            f"normalizer out of range (min {np.min(den):.3e}); keys must map to positive features")
    small = den < floor
    if np.any(small):
        warnings.warn(DenominatorClampWarning(f"{int(small.sum())} normalizer value(s) clamped to {floor}"),
                      stacklevel=3)
        den = np.where(small, floor, den)
    return num / den


def _require_positive_kernel(p: AttnParams) -> None:
    if p.kernel is Kernel.IDENTITY:
        raise ValueError("normalized linear attention needs a positive kernel (relu+eps or elu+1)")


# --- per-head cores: (q, k, v) -> y ------------------------------------------

def softmax_core(q: np.ndarray, k: np.ndarray, v: np.ndarray, block: int = 1024) -> np.ndarray:
    scale = 1.0 / math.sqrt(q.shape[1])
    out = np.empty((q.shape[0], v.shape[1]), dtype=np.result_type(q, v))
    # query blocks bound the memory of the N x N score matrix
    for start in range(0, q.shape[0], block):
        stop = start + block
        out[start:stop] = softmax_rows(q[start:stop] @ k.T * scale) @ v
    return out


def linear_core(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Global linear attention in reordered form: Q (K^T V) / Q (K^T 1)."""
    kv = k.T @ v
    ksum = k.sum(axis=0)
    return safe_divide(q @ kv, (q @ ksum)[:, None])


def causal_core(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Causal linear attention from prefix sums of K_j^T V_j and K_j^T."""
    s = np.cumsum(k[:, :, None] * v[:, None, :], axis=0)  # (N, d, C)
    z = np.cumsum(k, axis=0)  # (N, d)
    num = np.einsum("nd,ndc->nc", q, s)
    den = np.einsum("nd,nd->n", q, z)
    return safe_divide(num, den[:, None])


def multi_head(x: np.ndarray, p: AttnParams, inner: Callable, kernelize: bool = True) -> np.ndarray:
    """Project once, run ``inner(q_h, k_h, v_h)`` per head, concatenate channels."""
    q, k, v = project(x, p, kernelize=kernelize)
    out = np.empty_like(v)
    for qs, vs in head_slices(p.qk_width, p.channels, p.heads):
        out[:, vs] = inner(q[:, qs], k[:, qs], v[:, vs])
    return out


def softmax_attention(x: np.ndarray, p: AttnParams) -> np.ndarray:
    """Dot-product attention. Q and K are not kernelized; scores scale by 1/sqrt(d_head)."""
    return multi_head(x, p, softmax_core, kernelize=False)


def linear_attention_parallel(x: np.ndarray, p: AttnParams) -> np.ndarray:
    _require_positive_kernel(p)
    return multi_head(x, p, linear_core)


def linear_attention_causal(x: np.ndarray, p: AttnParams) -> np.ndarray:
    _require_positive_kernel(p)
    return multi_head(x, p, causal_core)


def linear_attention_recurrent(x: np.ndarray, p: AttnParams, state: RecurrentState | None = None):
    """Token-by-token recurrence; returns (outputs, final state).

    Passing the returned state back in continues the sequence, so two chunks
    processed in turn match one pass over their concatenation.
    """
    _require_positive_kernel(p)
    q, k, v = project(x, p)
    state = RecurrentState.zeros(p.qk_width, p.channels) if state is None else state.copy()
    z_sign = -1.0 if faults.active("z-sign") else 1.0
    out = np.empty_like(v)
    heads = head_slices(p.qk_width, p.channels, p.heads)
    for i in range(q.shape[0]):
        for qs, vs in heads:
            ki = k[i, qs]
            state.s[qs, vs] = state.s[qs, vs] + np.multiply.outer(ki, v[i, vs])
            state.z[qs, 0] = state.z[qs, 0] + z_sign * ki
            num = q[i, qs] @ state.s[qs, vs]
            den = q[i, qs] @ state.z[qs, 0]
            out[i, vs] = safe_divide(num, np.array([den]))
        state.step += 1
    return out, state


def attention_weights(x: np.ndarray, p: AttnParams, kind: str = "linear", causal: bool = False) -> np.ndarray:
    """Explicit per-head weight matrices, shape (heads, N, N); row i holds query i's weights.

    Built directly from pairwise scores, not from the reordered products, so
    it can serve as an independent check of the fast paths.
    """
    if kind not in ("linear", "softmax"):
        raise ValueError(f"unknown attention kind {kind!r}")
    q, k, _ = project(x, p, kernelize=(kind == "linear"))
    n = q.shape[0]
    mask = np.tril(np.ones((n, n), dtype=bool)) if causal else np.ones((n, n), dtype=bool)
    out = []
    for qs, _vs in head_slices(p.qk_width, p.channels, p.heads):
        scores = q[:, qs] @ k[:, qs].T
        if kind == "softmax":
            scores = np.where(mask, scores / math.sqrt(qs.stop - qs.start), -np.inf)
            w = softmax_rows(scores)
        else:
            scores = np.where(mask, scores, 0.0)
            w = scores / scores.sum(axis=1, keepdims=True)
        out.append(w)
    return np.stack(out)
