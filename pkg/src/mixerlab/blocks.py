"""Transformer, Mamba-style and MILA blocks on a 2-D token grid.

Every block describes its weights in a shape registry (:func:`block_weight_shapes`).
Initialization allocates exactly those shapes and cost accounting reads the
same registry, so parameter counts cannot drift from what a forward pass uses.

Layouts (u = layer_norm(x), act = SiLU, W = expansion * C):

* transformer: x += out(mix(u; V = u W_v)); x += mlp(norm(x))
* mamba:       a = act(dwconv(in(u))); x += out(norm(mix(a)) * act(gate(u)))
* mila:        a = act(dwconv(in(u))); x += out(mix(a) * act(gate(u))); x += mlp(norm(x))

In the mamba and mila layouts the mixer reads its values straight from ``a``;
there is no separate value projection. Encodings attach at fixed points: CPE
at block entry, LePE added to the mixer output from its values, RoPE on Q/K
in the mixer numerator.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .attention import Kernel
from .numerics import DimensionError, as_tokens, gelu, layer_norm, silu
from .posenc import Grid2D, PosEncKind, PosEncSpec, depthwise_conv2d, rope_rotate
from .ssm import default_low_rank
from .unified import BlockDesign, MixerConfig, UnifiedParams, gated_mix, prepare

NORM_EPS = 1e-5

MILA_POSENC = (PosEncSpec(PosEncKind.CPE), PosEncSpec(PosEncKind.LEPE), PosEncSpec(PosEncKind.ROPE))


@dataclass(frozen=True)
class BlockSpec:
    design: BlockDesign = BlockDesign.MILA
    dim: int = 64
    heads: int = 1
    qk_dim: int | None = None  # per-head query/key width; defaults to mixer width / heads
    mlp_ratio: float = 4.0
    expansion: float = 1.0
    posenc: tuple[PosEncSpec, ...] = ()
    dwconv_kernel: int = 3
    kernel: Kernel = Kernel.ELU_PLUS_ONE
    gated: bool = True  # gate branch of the mamba/mila layouts; off means the branch is all ones
    conv: bool = True  # dwconv + act ahead of the mixer in the mamba/mila layouts

    def __post_init__(self):
        object.__setattr__(self, "design", BlockDesign(self.design))
        object.__setattr__(self, "kernel", Kernel(self.kernel))
        object.__setattr__(self, "posenc", tuple(
            p if isinstance(p, PosEncSpec) else PosEncSpec(PosEncKind(p)) for p in self.posenc))
        if self.heads < 1 or self.dim % self.heads:
            raise DimensionError(f"dim {self.dim} not divisible by {self.heads} heads")
        if self.mlp_ratio < 1:
            raise ValueError("mlp_ratio must be >= 1")
        if self.design is BlockDesign.MAMBA and self.expansion not in (1.0, 2.0):
            raise ValueError("mamba-style blocks use expansion 1.0 or 2.0")
        if self.mixer_width % self.heads:
            raise DimensionError(f"mixer width {self.mixer_width} not divisible by {self.heads} heads")
        if self.dwconv_kernel < 1 or self.dwconv_kernel % 2 == 0:
            raise ValueError("dwconv_kernel must be odd")

    @property
    def mixer_width(self) -> int:
        if self.design is BlockDesign.TRANSFORMER:
            return self.dim
        return int(round(self.expansion * self.dim))

    @property
    def head_dim(self) -> int:
        return self.qk_dim if self.qk_dim is not None else self.mixer_width // self.heads

    @property
    def qk_width(self) -> int:
        return self.head_dim * self.heads

    @property
    def hidden(self) -> int:
        return int(round(self.mlp_ratio * self.dim))

    def has(self, kind: PosEncKind) -> bool:
        return any(p.kind is kind for p in self.posenc)

    def encoding(self, kind: PosEncKind) -> PosEncSpec:
        return next(p for p in self.posenc if p.kind is kind)

    def to_dict(self) -> dict:
        return {
            "design": self.design.value, "dim": self.dim, "heads": self.heads, "qk_dim": self.qk_dim,
            "mlp_ratio": self.mlp_ratio, "expansion": self.expansion,
            "posenc": [p.to_dict() for p in self.posenc], "dwconv_kernel": self.dwconv_kernel,
            "kernel": self.kernel.value, "gated": self.gated, "conv": self.conv,
        }


class WeightShape(NamedTuple):
    shape: tuple[int, ...]
    role: str  # linear | bias | norm | dwconv | conv | table | vector | decay
    term: str  # cost-report bucket


def block_weight_shapes(spec: BlockSpec, mixer: MixerConfig, tokens: int | None = None) -> dict[str, WeightShape]:
    """Ordered registry of every weight the block allocates."""
    c, w, k = spec.dim, spec.mixer_width, spec.dwconv_kernel
    reg: dict[str, WeightShape] = {}

    def linear(name, fan_in, fan_out, term, bias=True):
        reg[f"{name}.w"] = WeightShape((fan_in, fan_out), "linear", term)
        if bias:
            reg[f"{name}.b"] = WeightShape((fan_out,), "bias", term)

    def norm(name, width):
        reg[f"{name}.w"] = WeightShape((width,), "norm", "norm")
        reg[f"{name}.b"] = WeightShape((width,), "norm", "norm")

    def dwconv(name, width, ksize, term):
        reg[f"{name}.w"] = WeightShape((ksize, ksize, width), "dwconv", term)
        reg[f"{name}.b"] = WeightShape((width,), "bias", term)

    if spec.has(PosEncKind.CPE):
        dwconv("cpe", c, spec.encoding(PosEncKind.CPE).dwconv_kernel, "posenc")
    if spec.has(PosEncKind.APE):
        if tokens is None:
            raise ValueError("absolute position tables need the token count")
        reg["ape.table"] = WeightShape((tokens, c), "table", "posenc")
    norm("norm1", c)
    if spec.design is BlockDesign.TRANSFORMER:
        value_width = c
    else:
        linear("in_proj", c, w, "in_out_proj")
        if spec.conv:
            dwconv("dwconv", w, k, "dwconv")
        if spec.gated:
            linear("gate_proj", c, w, "gate_proj")
        value_width = w
    reg["attn.q"] = WeightShape((value_width, spec.qk_width), "linear", "qk_proj")
    reg["attn.k"] = WeightShape((value_width, spec.qk_width), "linear", "qk_proj")
    if spec.design is BlockDesign.TRANSFORMER or mixer.value_proj:
        reg["attn.v"] = WeightShape((value_width, value_width), "linear", "in_out_proj")
    if mixer.input_gate or mixer.forget_gate:
        c0 = default_low_rank(value_width)
        reg["attn.w_1"] = WeightShape((value_width, c0), "linear", "delta_proj")
        reg["attn.w_2"] = WeightShape((c0, value_width), "linear", "delta_proj")
    if mixer.forget_gate:
        reg["attn.a_diag"] = WeightShape((spec.qk_width,), "decay", "decay")
    if mixer.shortcut:
        reg["attn.d_skip"] = WeightShape((value_width,), "vector", "shortcut")
    if spec.has(PosEncKind.LEPE):
        dwconv("lepe", value_width, spec.encoding(PosEncKind.LEPE).dwconv_kernel, "posenc")
    if spec.design is BlockDesign.MAMBA:
        norm("out_norm", w)
    if spec.design is BlockDesign.TRANSFORMER:
        linear("attn.out", c, c, "in_out_proj")
    else:
        linear("out_proj", w, c, "in_out_proj")
    if spec.design is not BlockDesign.MAMBA:
        norm("norm2", c)
        linear("mlp.fc1", c, spec.hidden, "mlp")
        linear("mlp.fc2", spec.hidden, c, "mlp")
    return reg


def weight_rng(seed: int, name: str) -> np.random.Generator:
    """Independent stream per weight name, so equal names get equal draws."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])
    return np.random.Generator(np.random.PCG64(ss))


def init_weight(name: str, ws: WeightShape, seed: int) -> np.ndarray:
    if ws.role == "norm":
        return np.ones(ws.shape) if name.endswith(".w") else np.zeros(ws.shape)
    if ws.role == "bias":
        return np.zeros(ws.shape)
    if ws.role == "vector":
        return np.ones(ws.shape)
    rng = weight_rng(seed, name)
    if ws.role == "decay":
        return -np.exp(rng.uniform(-4.0, 0.0, size=ws.shape))
    if ws.role == "table":
        return 0.02 * rng.standard_normal(ws.shape)
    if ws.role == "dwconv":
        fan_in = ws.shape[0] * ws.shape[1]
    elif ws.role == "conv":
        fan_in = ws.shape[0] * ws.shape[1] * ws.shape[2]
    else:
        fan_in = ws.shape[0]
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=ws.shape)


def init_block(spec: BlockSpec, mixer: MixerConfig, seed: int = 0, tokens: int | None = None,
               prefix: str = "") -> dict[str, np.ndarray]:
    return {name: init_weight(prefix + name, ws, seed)
            for name, ws in block_weight_shapes(spec, mixer, tokens).items()}


def _linear(x: np.ndarray, weights: dict, name: str) -> np.ndarray:
    y = x @ weights[f"{name}.w"]
    b = weights.get(f"{name}.b")
    return y if b is None else y + b


def _norm(x: np.ndarray, weights: dict, name: str) -> np.ndarray:
    return layer_norm(x, weights[f"{name}.w"], weights[f"{name}.b"], NORM_EPS)


def _dwconv(x: np.ndarray, grid: Grid2D, weights: dict, name: str) -> np.ndarray:
    return depthwise_conv2d(x, grid, weights[f"{name}.w"], weights[f"{name}.b"])


def _mixer_config(spec: BlockSpec, mixer: MixerConfig) -> MixerConfig:
    # the block's head count wins over the mixer's
    value_proj = spec.design is BlockDesign.TRANSFORMER or mixer.value_proj
    return mixer.replace(heads=spec.heads, value_proj=value_proj)


def token_mixer(a: np.ndarray, grid: Grid2D, spec: BlockSpec, mixer: MixerConfig, weights: dict) -> np.ndarray:
    cfg = _mixer_config(spec, mixer)
    params = UnifiedParams(
        w_q=weights["attn.q"], w_k=weights["attn.k"], w_v=weights.get("attn.v"), kernel=spec.kernel,
        a_diag=weights.get("attn.a_diag"), w_1=weights.get("attn.w_1"), w_2=weights.get("attn.w_2"),
        d_skip=weights.get("attn.d_skip"),
    )
    inp = prepare(a, params, cfg)
    q_num = k_num = None
    if spec.has(PosEncKind.ROPE):
        base = spec.encoding(PosEncKind.ROPE).rope_base
        q_num = rope_rotate(inp.q, grid, base, spec.heads)
        k_num = rope_rotate(inp.k, grid, base, spec.heads)
    y = gated_mix(inp, cfg, q_num, k_num)
    if spec.has(PosEncKind.LEPE):
        values = a @ weights["attn.v"] if cfg.value_proj else a
        y = y + _dwconv(values, grid, weights, "lepe")
    return y


def block_forward(x: np.ndarray, grid: Grid2D, spec: BlockSpec, mixer: MixerConfig, weights: dict) -> np.ndarray:
    x = as_tokens(x)
    if x.shape[1] != spec.dim:
        raise DimensionError(f"input has {x.shape[1]} channels, block expects {spec.dim}")
    if x.shape[0] != grid.tokens:
        raise DimensionError(f"{x.shape[0]} tokens do not fill a {grid.height}x{grid.width} grid")
    if spec.has(PosEncKind.APE):
        x = x + weights["ape.table"]
    if spec.has(PosEncKind.CPE):
        x = x + _dwconv(x, grid, weights, "cpe")
    u = _norm(x, weights, "norm1")

    if spec.design is BlockDesign.TRANSFORMER:
        x = x + _linear(token_mixer(u, grid, spec, mixer, weights), weights, "attn.out")
    else:
        a = _linear(u, weights, "in_proj")
        if spec.conv:
            a = silu(_dwconv(a, grid, weights, "dwconv"))
        y = token_mixer(a, grid, spec, mixer, weights)
        if spec.design is BlockDesign.MAMBA:
            y = _norm(y, weights, "out_norm")
        if spec.gated:
            y = y * silu(_linear(u, weights, "gate_proj"))
        x = x + _linear(y, weights, "out_proj")

    if spec.design is not BlockDesign.MAMBA:
        h = gelu(_linear(_norm(x, weights, "norm2"), weights, "mlp.fc1"))
        x = x + _linear(h, weights, "mlp.fc2")
    return x


def block_design_ablation(x: np.ndarray, before: MixerConfig, after: MixerConfig, seed: int = 0):
    """Run the same tokens through blocks of two designs.

    Weights are drawn per name, so parts the designs share (norms, MLP, Q/K)
    start identical. The tokens must fill a square grid.
    """
    x = as_tokens(x)
    grid = Grid2D.square(x.shape[0])
    outs = []
    for cfg in (before, after):
        design = cfg.block_design
        expansion = 2.0 if design is BlockDesign.MAMBA else 1.0
        spec = BlockSpec(design=design, dim=x.shape[1], heads=cfg.heads, expansion=expansion)
        outs.append(block_forward(x, grid, spec, cfg, init_block(spec, cfg, seed)))
    return outs[0], outs[1]


@dataclass
class BlockCost:
    params: int
    flops: dict[str, int] = field(default_factory=dict)

    @property
    def total_flops(self) -> int:
        return sum(self.flops.values())


def block_cost(spec: BlockSpec, mixer: MixerConfig, tokens: int) -> BlockCost:
    """Multiply-accumulate counts per term, read off the weight registry.

    Linear layers cost tokens * fan_in * fan_out; depthwise convs tokens * k^2 * width;
    the mixer core 2 * tokens * head_dim * width (K^T V, then Q times it). Biases,
    norms, activations, gating products and rotations are elementwise and not counted.
    """
    reg = block_weight_shapes(spec, mixer, tokens)
    flops: dict[str, int] = {}
    for ws in reg.values():
        if ws.role == "linear":
            cost = tokens * ws.shape[0] * ws.shape[1]
        elif ws.role == "dwconv":
            cost = tokens * ws.shape[0] * ws.shape[1] * ws.shape[2]
        else:
            continue
        flops[ws.term] = flops.get(ws.term, 0) + cost
    value_width = spec.dim if spec.design is BlockDesign.TRANSFORMER else spec.mixer_width
    flops["linear_attention"] = 2 * tokens * spec.head_dim * value_width
    params = sum(int(np.prod(ws.shape)) for ws in reg.values())
    return BlockCost(params, flops)


def mila_block_flops(tokens: int, dim: int, head_dim: int, kernel: int = 3) -> int:
    """Closed form: 13 N C^2 + 2 N C d + k^2 N C."""
    n, c, d, k = tokens, dim, head_dim, kernel
    return (2 * n * c * c + 2 * n * c * c + n * c * c) + 2 * n * c * d + k * k * n * c + 8 * n * c * c


def transformer_block_flops(tokens: int, dim: int, head_dim: int) -> int:
    """Closed form: 4 N C^2 + 2 N C d + 8 N C^2."""
    n, c, d = tokens, dim, head_dim
    return 4 * n * c * c + 2 * n * c * d + 8 * n * c * c
