"""One gated recurrence that covers linear attention and the selective SSM.

Per token i, with Q/K from the query/key projections and V the value path::

    S_i = F_i * S_{i-1} + K_i^T (G_i * V_i)
    y_i = Q_i S_i / (Q_i Z_i  if normalization else 1) + (D * x_i  if shortcut else 0)

F_i is the forget gate exp(a_diag outer delta_i) (all ones when off), G_i the
input gate delta_i = softplus(x_i W_1 W_2) (all ones when off). With the forget
gate on, the key sum Z is decayed by the same gate so each output channel stays
a weighted average of its values.

The query takes the SSM's C_i, the key its B_i, the value its x_i.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass

import numpy as np

from .attention import AttnParams, Kernel, apply_kernel, head_slices, safe_divide
from .numerics import DimensionError, as_matrix, as_tokens, softplus, uniform_init
from .scan import scan_parallel, scan_serial
from .ssm import SsmParams, default_low_rank


class BlockDesign(str, enum.Enum):
    TRANSFORMER = "transformer"
    MAMBA = "mamba"
    MILA = "mila"


TOGGLES = ("input_gate", "forget_gate", "shortcut", "normalization", "multi_head", "block_design")


@dataclass(frozen=True)
class MixerConfig:
    input_gate: bool = False
    forget_gate: bool = False
    shortcut: bool = False
    normalization: bool = True
    heads: int = 1
    block_design: BlockDesign = BlockDesign.TRANSFORMER
    causal: bool = True
    value_proj: bool = True  # V = x W_V when set, V = x otherwise
    scan_chunks: int = 1  # >1 runs the gated recurrence through the chunked parallel scan

    def __post_init__(self):
        object.__setattr__(self, "block_design", BlockDesign(self.block_design))
        if self.heads < 1:
            raise ValueError(f"heads must be >= 1, got {self.heads}")
        if self.forget_gate and not self.causal:
            raise ValueError("the forget gate is a recurrence and needs causal mode")
        if self.scan_chunks < 1:
            raise ValueError("scan_chunks must be >= 1")

    def replace(self, **changes) -> "MixerConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["block_design"] = self.block_design.value
        return d


PRESET_NAMES = ("linear-attention", "selective-ssm", "mila")


def preset(name: str, heads: int = 1) -> MixerConfig:
    """Named configurations; ``heads`` is ignored by the single-head SSM preset."""
    if name == "linear-attention":
        return MixerConfig(heads=heads)
    if name == "selective-ssm":
        return MixerConfig(input_gate=True, forget_gate=True, shortcut=True, normalization=False,
                           heads=1, block_design=BlockDesign.MAMBA, value_proj=False)
    if name == "mila":
        return MixerConfig(heads=heads, block_design=BlockDesign.MILA, causal=False, value_proj=False)
    raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")


@dataclass(frozen=True)
class UnifiedParams:
    w_q: np.ndarray  # (C, d)
    w_k: np.ndarray  # (C, d)
    w_v: np.ndarray | None = None  # (C, C)
    kernel: Kernel = Kernel.ELU_PLUS_ONE
    a_diag: np.ndarray | None = None  # (d,), negative
    w_1: np.ndarray | None = None  # (C, C0)
    w_2: np.ndarray | None = None  # (C0, C)
    d_skip: np.ndarray | None = None  # (C,)

    def __post_init__(self):
        object.__setattr__(self, "w_q", as_matrix(self.w_q, name="w_q"))
        object.__setattr__(self, "w_k", as_matrix(self.w_k, name="w_k"))
        object.__setattr__(self, "kernel", Kernel(self.kernel))
        c, d = self.w_q.shape
        if self.w_k.shape != (c, d):
            raise DimensionError(f"w_k must be {(c, d)}, got {self.w_k.shape}")
        if self.w_v is not None:
            object.__setattr__(self, "w_v", as_matrix(self.w_v, name="w_v"))
            if self.w_v.shape != (c, c):
                raise DimensionError(f"w_v must be {(c, c)}, got {self.w_v.shape}")
        if self.a_diag is not None:
            a = np.asarray(self.a_diag, dtype=np.float64).ravel()
            if a.shape != (d,) or not np.all(a < 0):
                raise ValueError(f"a_diag must hold {d} strictly negative entries")
            object.__setattr__(self, "a_diag", a)
        if (self.w_1 is None) != (self.w_2 is None):
            raise ValueError("w_1 and w_2 come as a pair")
        if self.w_1 is not None:
            object.__setattr__(self, "w_1", as_matrix(self.w_1, name="w_1"))
            object.__setattr__(self, "w_2", as_matrix(self.w_2, name="w_2"))
            if self.w_1.shape[0] != c or self.w_2.shape != (self.w_1.shape[1], c):
                raise DimensionError(f"w_1/w_2 shapes {self.w_1.shape}/{self.w_2.shape} do not fit C={c}")
        if self.d_skip is not None:
            ds = np.asarray(self.d_skip, dtype=np.float64).ravel()
            if ds.shape != (c,):
                raise DimensionError(f"d_skip must have {c} entries")
            object.__setattr__(self, "d_skip", ds)

    @property
    def channels(self) -> int:
        return self.w_q.shape[0]

    @property
    def qk_width(self) -> int:
        return self.w_q.shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int, qk_width: int, low_rank: int | None = None,
             kernel: Kernel | str = Kernel.ELU_PLUS_ONE) -> "UnifiedParams":
        """Every field populated, so any toggle combination can run."""
        c0 = default_low_rank(channels) if low_rank is None else low_rank
        return cls(
            w_q=uniform_init(rng, (channels, qk_width)),
            w_k=uniform_init(rng, (channels, qk_width)),
            w_v=uniform_init(rng, (channels, channels)),
            kernel=kernel,
            a_diag=-np.exp(rng.uniform(-4.0, 0.0, size=qk_width)),
            w_1=uniform_init(rng, (channels, c0)),
            w_2=uniform_init(rng, (c0, channels)),
            d_skip=np.ones(channels),
        )


def from_ssm(p: SsmParams) -> tuple[UnifiedParams, MixerConfig]:
    return (
        UnifiedParams(w_q=p.w_c, w_k=p.w_b, w_v=None, kernel=Kernel.IDENTITY,
                      a_diag=p.a_diag, w_1=p.w_1, w_2=p.w_2, d_skip=p.d_skip),
        preset("selective-ssm"),
    )


def from_attention(p: AttnParams) -> tuple[UnifiedParams, MixerConfig]:
    return (
        UnifiedParams(w_q=p.w_q, w_k=p.w_k, w_v=p.w_v, kernel=p.kernel),
        preset("linear-attention", heads=p.heads),
    )


@dataclass(frozen=True)
class MixerInputs:
    """Everything the recurrence consumes, already projected."""

    q: np.ndarray  # (N, d)
    k: np.ndarray  # (N, d)
    v: np.ndarray  # (N, C), input gate already applied
    forget: np.ndarray | None  # (N, d, C)
    skip: np.ndarray | None  # (N, C)


def prepare(x: np.ndarray, p: UnifiedParams, cfg: MixerConfig) -> MixerInputs:
    x = as_tokens(x)
    if x.shape[1] != p.channels:
        raise DimensionError(f"input has {x.shape[1]} channels, params expect {p.channels}")
    if cfg.normalization and p.kernel is Kernel.IDENTITY:
        raise ValueError("normalization needs a positive key kernel (relu+eps or elu+1)")
    q = apply_kernel(p.kernel, x @ p.w_q)
    k = apply_kernel(p.kernel, x @ p.w_k)
    if cfg.value_proj:
        if p.w_v is None:
            raise ValueError("value projection requested but params carry no w_v")
        v = x @ p.w_v
    else:
        v = x
    delta = None
    if cfg.input_gate or cfg.forget_gate:
        if p.w_1 is None:
            raise ValueError("gates requested but params carry no w_1/w_2")
        delta = softplus((x @ p.w_1) @ p.w_2)
    if cfg.input_gate:
        v = delta * v
    forget = None
    if cfg.forget_gate:
        if p.a_diag is None:
            raise ValueError("forget gate requested but params carry no a_diag")
        forget = np.exp(p.a_diag[None, :, None] * delta[:, None, :])
    skip = None
    if cfg.shortcut:
        if p.d_skip is None:
            raise ValueError("shortcut requested but params carry no d_skip")
        skip = p.d_skip * x
    return MixerInputs(q, k, v, forget, skip)


def _scan(cfg: MixerConfig, g: np.ndarray, u: np.ndarray) -> np.ndarray:
    if cfg.scan_chunks > 1:
        return scan_parallel(g, u, cfg.scan_chunks)
    return scan_serial(g, u)


def gated_mix(inp: MixerInputs, cfg: MixerConfig, q_num: np.ndarray | None = None,
              k_num: np.ndarray | None = None) -> np.ndarray:
    """Run the recurrence on projected inputs.

    ``q_num``/``k_num`` replace Q/K in the numerator only (rotary encodings
    can turn features negative, so the normalizer keeps the raw ones).
    """
    q, k, v = inp.q, inp.k, inp.v
    qn = q if q_num is None else q_num
    kn = k if k_num is None else k_num
    if inp.forget is not None and not cfg.causal:
        raise ValueError("the forget gate needs causal mode")
    y = np.empty_like(v)
    for qs, vs in head_slices(q.shape[1], v.shape[1], cfg.heads):
        qh, kh, vh = q[:, qs], k[:, qs], v[:, vs]
        qnh, knh = qn[:, qs], kn[:, qs]
        den = None
        if not cfg.causal:
            num = qnh @ (knh.T @ vh)
            if cfg.normalization:
                den = (qh @ kh.sum(axis=0))[:, None]
        elif inp.forget is None:
            s = np.cumsum(knh[:, :, None] * vh[:, None, :], axis=0)
            num = np.einsum("nd,ndc->nc", qnh, s)
            if cfg.normalization:
                den = np.einsum("nd,nd->n", qh, np.cumsum(kh, axis=0))[:, None]
        else:
            g = inp.forget[:, qs, vs]
            s = _scan(cfg, g, knh[:, :, None] * vh[:, None, :])
            num = np.einsum("nd,ndc->nc", qnh, s)
            if cfg.normalization:
                z = _scan(cfg, g, np.broadcast_to(kh[:, :, None], g.shape).copy())
                den = np.einsum("nd,ndc->nc", qh, z)
        y[:, vs] = num if den is None else safe_divide(num, den)
    if inp.skip is not None:
        y = y + inp.skip
    return y


def unified_forward(x: np.ndarray, p: UnifiedParams, cfg: MixerConfig) -> np.ndarray:
    return gated_mix(prepare(x, p, cfg), cfg)


def mixing_weights(x: np.ndarray, p: UnifiedParams, cfg: MixerConfig) -> np.ndarray:
    """Explicit weights W with y[i, c] = sum_j W[i, j, c] * V'[j, c] (+ shortcut).

    V' is the gated value path. Built pairwise with explicit gate products,
    independent of the recurrence; O(N^2 d C), so meant for small inputs.
    """
    inp = prepare(x, p, cfg)
    n, c = inp.v.shape
    w = np.zeros((n, n, c))
    for qs, vs in head_slices(inp.q.shape[1], c, cfg.heads):
        qh, kh = inp.q[:, qs], inp.k[:, qs]
        ch = vs.stop - vs.start
        for i in range(n):
            decay = np.ones((qs.stop - qs.start, ch))
            last = i if cfg.causal else n - 1
            # walk j downward from i so decay accumulates F_{j+1} * ... * F_i
            for j in range(last, -1, -1):
                if inp.forget is not None and j < i:
                    decay = decay * inp.forget[j + 1][qs, vs]
                w[i, j, vs] = qh[i] @ (kh[j][:, None] * decay)
        if cfg.normalization:
            w[:, :, vs] /= w[:, :, vs].sum(axis=1, keepdims=True)
    return w


def prefix_swap_delta(fn, x: np.ndarray, first: int = 0, second: int = 1) -> float:
    """Max change of outputs after both swapped positions when two tokens trade places."""
    x = np.asarray(x)
    swapped = x.copy()
    swapped[[first, second]] = swapped[[second, first]]
    start = max(first, second) + 1
    return float(np.max(np.abs(fn(x)[start:] - fn(swapped)[start:])))


@dataclass(frozen=True)
class Ablation:
    toggle: str
    before_cfg: MixerConfig
    after_cfg: MixerConfig
    before: np.ndarray
    after: np.ndarray
    mean_abs_delta: float
    norm_ratio: float  # ||after|| / ||before||


def toggled(cfg: MixerConfig, toggle: str, alt_heads: int = 2) -> MixerConfig:
    if toggle not in TOGGLES:
        raise KeyError(f"unknown toggle {toggle!r}; choose from {', '.join(TOGGLES)}")
    if toggle == "multi_head":
        return cfg.replace(heads=1 if cfg.heads > 1 else alt_heads)
    if toggle == "block_design":
        nxt = BlockDesign.MILA if cfg.block_design is BlockDesign.TRANSFORMER else BlockDesign.TRANSFORMER
        return cfg.replace(block_design=nxt)
    changes = {toggle: not getattr(cfg, toggle)}
    if toggle == "forget_gate" and changes[toggle]:
        changes["causal"] = True  # the gate is a recurrence
    return cfg.replace(**changes)


def ablate(x: np.ndarray, p: UnifiedParams, base_cfg: MixerConfig, toggle: str, alt_heads: int = 2,
           seed: int = 0) -> Ablation:
    """Outputs with and without one distinction, plus summary deltas.

    The block-design toggle needs a whole block, so it runs through
    :func:`mixerlab.blocks.block_design_ablation` on a square token grid.
    """
    after_cfg = toggled(base_cfg, toggle, alt_heads)
    if toggle == "block_design":
        from .blocks import block_design_ablation

        before, after = block_design_ablation(x, base_cfg, after_cfg, seed=seed)
    else:
        before = unified_forward(x, p, base_cfg)
        after = unified_forward(x, p, after_cfg)
    base_norm = float(np.linalg.norm(before))
    return Ablation(
        toggle=toggle,
        before_cfg=base_cfg,
        after_cfg=after_cfg,
        before=before,
        after=after,
        mean_abs_delta=float(np.mean(np.abs(after - before))),
        norm_ratio=float(np.linalg.norm(after)) / base_norm if base_norm > 0 else float("inf"),
    )
