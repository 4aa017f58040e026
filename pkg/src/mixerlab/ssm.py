"""State-space mixers: zero-order-hold discretization, the fixed discrete SSM
and the input-dependent (selective) SSM applied channel by channel.

The continuous system h'(t) = A h(t) + B x(t) only matters through its
discretization here; no ODE integrator is provided.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .numerics import DimensionError, as_matrix, as_tokens, softplus, uniform_init


class Discretization(str, enum.Enum):
    EXACT_ZOH = "exact-zoh"
    SIMPLIFIED = "simplified"


@dataclass(frozen=True)
class DiscretizedPair:
    a_bar: np.ndarray
    b_bar: np.ndarray


def discretize(a_diag, b, delta: float, mode: Discretization | str = Discretization.EXACT_ZOH) -> DiscretizedPair:
    """Discretize a diagonal system over timescale ``delta``.

    ``a_bar = exp(delta * a)``. For ``b_bar`` the exact hold gives
    ``(exp(delta * a) - 1) / a * b`` (``delta * b`` where ``a == 0``); the
    simplified rule is ``delta * b``.
    """
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    a = np.asarray(a_diag, dtype=np.float64)
    b = np.broadcast_to(np.asarray(b, dtype=np.float64), a.shape)
    a_bar = np.exp(delta * a)
    if Discretization(mode) is Discretization.SIMPLIFIED:
        return DiscretizedPair(a_bar, delta * b)
    nonzero = a != 0
    safe_a = np.where(nonzero, a, 1.0)
    b_bar = np.where(nonzero, np.expm1(delta * a) / safe_a * b, delta * b)
    return DiscretizedPair(a_bar, b_bar)


def zoh_relative_gap(a: float, b: float, delta: float) -> float:
    """|simplified - exact| / |simplified| for the input matrix of one state."""
    exact = discretize([a], [b], delta, Discretization.EXACT_ZOH).b_bar[0]
    simple = discretize([a], [b], delta, Discretization.SIMPLIFIED).b_bar[0]
    return abs(simple - exact) / abs(simple)


def discrete_ssm_scalar(x, a_bar, b_bar, c, d_skip: float = 0.0) -> np.ndarray:
    """Run h_i = A_bar h_{i-1} + B_bar x_i, y_i = C h_i + D x_i on a scalar sequence.

    ``a_bar`` may be a length-d diagonal or a full (d, d) matrix.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    a_bar = np.asarray(a_bar, dtype=np.float64)
    b_bar = np.asarray(b_bar, dtype=np.float64).ravel()
    c = np.asarray(c, dtype=np.float64).ravel()
    full = a_bar.ndim == 2
    h = np.zeros(b_bar.shape[0])
    y = np.empty_like(x)
    for i, xi in enumerate(x):
        h = (a_bar @ h if full else a_bar * h) + b_bar * xi
        y[i] = c @ h + d_skip * xi
    return y


@dataclass(frozen=True)
class SsmParams:
    a_diag: np.ndarray  # (d,), strictly negative
    w_b: np.ndarray  # (C, d)
    w_c: np.ndarray  # (C, d)
    w_1: np.ndarray  # (C, C0)
    w_2: np.ndarray  # (C0, C)
    d_skip: np.ndarray  # (C,)

    def __post_init__(self):
        a = np.asarray(self.a_diag, dtype=np.float64).ravel()
        if not np.all(a < 0):
            raise ValueError("a_diag entries must be strictly negative")
        object.__setattr__(self, "a_diag", a)
        for name in ("w_b", "w_c", "w_1", "w_2"):
            object.__setattr__(self, name, as_matrix(getattr(self, name), name=name))
        object.__setattr__(self, "d_skip", np.asarray(self.d_skip, dtype=np.float64).ravel())
        c, d = self.channels, self.state_dim
        if self.w_b.shape != (c, d) or self.w_c.shape != (c, d):
            raise DimensionError(f"w_b/w_c must be {(c, d)}, got {self.w_b.shape}/{self.w_c.shape}")
        if self.w_1.shape[0] != c or self.w_2.shape != (self.w_1.shape[1], c):
            raise DimensionError(f"w_1/w_2 shapes {self.w_1.shape}/{self.w_2.shape} do not fit C={c}")
        if self.d_skip.shape != (c,):
            raise DimensionError(f"d_skip must have {c} entries, got {self.d_skip.shape}")

    @property
    def channels(self) -> int:
        return self.w_b.shape[0]

    @property
    def state_dim(self) -> int:
        return self.a_diag.shape[0]

    @property
    def low_rank(self) -> int:
        return self.w_1.shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int, state_dim: int, low_rank: int | None = None) -> "SsmParams":
        """Random parameters; a_diag = -exp(u), u ~ U[-4, 0]; D starts at ones."""
        c0 = default_low_rank(channels) if low_rank is None else low_rank
        return cls(
            a_diag=-np.exp(rng.uniform(-4.0, 0.0, size=state_dim)),
            w_b=uniform_init(rng, (channels, state_dim)),
            w_c=uniform_init(rng, (channels, state_dim)),
            w_1=uniform_init(rng, (channels, c0)),
            w_2=uniform_init(rng, (c0, channels)),
            d_skip=np.ones(channels),
        )


def default_low_rank(channels: int) -> int:
    return max(1, channels // 16)


@dataclass(frozen=True)
class SelectiveInputs:
    """Per-token quantities derived from the input.

    b, c: (N, d); delta: (N, C), strictly positive; gate: (N, d, C) with
    gate[i] = exp(a_diag[:, None] * delta[i][None, :]).
    """

    b: np.ndarray
    c: np.ndarray
    delta: np.ndarray
    gate: np.ndarray


def selective_inputs(x: np.ndarray, p: SsmParams) -> SelectiveInputs:
    x = as_tokens(x)
    if x.shape[1] != p.channels:
        raise DimensionError(f"input has {x.shape[1]} channels, params expect {p.channels}")
    delta = softplus((x @ p.w_1) @ p.w_2)
    gate = np.exp(p.a_diag[None, :, None] * delta[:, None, :])
    return SelectiveInputs(b=x @ p.w_b, c=x @ p.w_c, delta=delta, gate=gate)


def selective_scan_serial(x: np.ndarray, p: SsmParams) -> np.ndarray:
    """All channels at once: h_i = gate_i * h_{i-1} + B_i^T (delta_i * x_i); y_i = C_i h_i + D * x_i."""
    x = as_tokens(x)
    s = selective_inputs(x, p)
    h = np.zeros((p.state_dim, p.channels))
    y = np.empty_like(x)
    for i in range(x.shape[0]):
        h = s.gate[i] * h + np.multiply.outer(s.b[i], s.delta[i] * x[i])
        y[i] = s.c[i] @ h
    return y + p.d_skip * x


def selective_scan_per_channel(x: np.ndarray, p: SsmParams, form: str = "hadamard") -> np.ndarray:
    """One scalar SSM per channel, as written before the channel broadcast.

    ``form="matrix"`` builds A_bar_i as a full diagonal (d, d) matrix and
    B_bar_i = delta_i * B_i; ``form="hadamard"`` keeps the diagonal as a
    vector and moves delta onto the input.
    """
    if form not in ("matrix", "hadamard"):
        raise ValueError(f"unknown form {form!r}")
    x = as_tokens(x)
    s = selective_inputs(x, p)
    n, ch = x.shape
    y = np.empty_like(x)
    for c in range(ch):
        h = np.zeros(p.state_dim)
        for i in range(n):
            if form == "matrix":
                a_bar = np.diag(np.exp(s.delta[i, c] * p.a_diag))
                h = a_bar @ h + (s.delta[i, c] * s.b[i]) * x[i, c]
            else:
                h = s.gate[i, :, c] * h + s.b[i] * (s.delta[i, c] * x[i, c])
            y[i, c] = s.c[i] @ h + p.d_skip[c] * x[i, c]
    return y


def forget_gate_values(x: np.ndarray, p: SsmParams) -> np.ndarray:
    return selective_inputs(x, p).gate


def attenuation_curve(gate: float, k_max: int) -> np.ndarray:
    """Weight left on a token k steps back under a constant gate: gate**k for k = 0..k_max."""
    return float(gate) ** np.arange(k_max + 1, dtype=np.float64)


@dataclass(frozen=True)
class ForgetGateStats:
    per_token_mean: np.ndarray  # (N,)
    mean: float
    attenuation: np.ndarray  # curve at the overall mean gate


def forget_gate_stats(x: np.ndarray, p: SsmParams, k_max: int = 10) -> ForgetGateStats:
    gate = forget_gate_values(x, p)
    per_token = gate.reshape(gate.shape[0], -1).mean(axis=1)
    mean = float(per_token.mean())
    return ForgetGateStats(per_token, mean, attenuation_curve(mean, k_max))

