"""Cross-formulation equivalence suite behind ``mixerlab verify``.

Each check draws its own random instances from a stream keyed by
(seed, check name, trial), so a check's result does not depend on which
other checks ran. An exception inside a trial counts as a failure.
"""

from __future__ import annotations

import math
import time
import zlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import faults
from ..attention import (AttnParams, Kernel, apply_kernel, attention_weights, linear_attention_causal,
                         linear_attention_parallel, linear_attention_recurrent, softmax_attention)
from ..blocks import BlockSpec, block_cost, mila_block_flops, transformer_block_flops
from ..costs import count_costs
from ..model import ModelSpec, build_model
from ..numerics import matmul, naive_matmul
from ..posenc import Grid2D, depthwise_conv2d, rope_frequencies, rope_rotate
from ..scan import scan_parallel, scan_serial
from ..ssm import SsmParams, discretize, selective_scan_per_channel, selective_scan_serial
from ..unified import BlockDesign, MixerConfig, UnifiedParams, from_attention, from_ssm, preset, unified_forward
from .config import RunConfig

# small four-stage layout for the allocation identity; every per-head width is a multiple of 4
SMALL_SPEC = ModelSpec("tiny", dims=(16, 32, 48, 64), heads=(1, 2, 2, 4), depths=(1, 1, 2, 1), num_classes=10)
SMALL_RESOLUTION = 64


@dataclass(frozen=True)
class Dims:
    n: int
    c: int
    d: int
    heads: int
    kernel: Kernel


@dataclass
class CheckResult:
    name: str
    description: str
    metric: str
    tolerance: float
    trials: int = 0
    failures: int = 0
    max_error: float = 0.0
    first_failure: str | None = None
    recurrent: bool = False

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def to_dict(self) -> dict:
        return {
            "name": self.name, "description": self.description, "metric": self.metric,
            "tolerance": self.tolerance, "trials": self.trials, "failures": self.failures,
            "max_error": self.max_error, "first_failure": self.first_failure, "passed": self.passed,
            "uses_recurrent_path": self.recurrent,
        }


@dataclass(frozen=True)
class Check:
    name: str
    description: str
    fn: Callable[[np.random.Generator, Dims], float]
    tolerance: float
    metric: str = "abs"
    recurrent: bool = False


def trial_rng(seed: int, name: str, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode()), trial]))


def sample_dims(rng: np.random.Generator, n_max: int, c_max: int, d_max: int, h_max: int) -> Dims:
    heads = int(rng.choice([h for h in {1, h_max} if h <= min(c_max, d_max)] or [1]))
    n = int(rng.integers(2, max(2, n_max) + 1))
    c = heads * int(rng.integers(1, c_max // heads + 1))
    d = heads * int(rng.integers(1, d_max // heads + 1))
    kernel = Kernel.ELU_PLUS_ONE if rng.random() < 0.5 else Kernel.RELU_PLUS_EPS
    return Dims(n, c, d, heads, kernel)


def max_abs(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def max_rel(a, b) -> float:
    scale = float(np.max(np.abs(b)))
    return max_abs(a, b) / scale if scale > 0 else max_abs(a, b)


def _attn(rng, dm: Dims):
    x = rng.standard_normal((dm.n, dm.c))
    return x, AttnParams.init(rng, dm.c, dm.d, dm.heads, dm.kernel)


def _explicit_linear(x, p: AttnParams, causal: bool) -> np.ndarray:
    """(phi(Q) phi(K)^T) V with row-sum normalization, in the unreordered order."""
    q = apply_kernel(p.kernel, x @ p.w_q)
    k = apply_kernel(p.kernel, x @ p.w_k)
    v = x @ p.w_v
    n = x.shape[0]
    dh, ch = p.qk_width // p.heads, p.channels // p.heads
    out = np.empty_like(v)
    for h in range(p.heads):
        qs, vs = slice(h * dh, (h + 1) * dh), slice(h * ch, (h + 1) * ch)
        w = q[:, qs] @ k[:, qs].T
        if causal:
            w = w * np.tri(n)
        out[:, vs] = (w @ v[:, vs]) / w.sum(axis=1, keepdims=True)
    return out


def check_matmul(rng, dm):
    a = rng.standard_normal((min(dm.n, 16), dm.c))
    b = rng.standard_normal((dm.c, dm.d))
    return max_rel(matmul(a, b), naive_matmul(a, b))


def check_reorder(rng, dm):
    x, p = _attn(rng, dm)
    return max_rel(linear_attention_parallel(x, p), _explicit_linear(x, p, causal=False))


def check_softmax(rng, dm):
    x, p = _attn(rng, dm)
    w = attention_weights(x, p, kind="softmax")
    v = x @ p.w_v
    ch = dm.c // dm.heads
    ref = np.concatenate([w[h] @ v[:, h * ch:(h + 1) * ch] for h in range(dm.heads)], axis=1)
    return max_abs(softmax_attention(x, p), ref)


def check_causal_masked(rng, dm):
    x, p = _attn(rng, dm)
    return max_abs(linear_attention_causal(x, p), _explicit_linear(x, p, causal=True))


def check_causal_recurrent(rng, dm):
    x, p = _attn(rng, dm)
    y, state = linear_attention_recurrent(x, p)
    return max_abs(y, linear_attention_causal(x, p))


def check_state_carry(rng, dm):
    x, p = _attn(rng, dm)
    cut = int(rng.integers(1, dm.n))
    y1, st = linear_attention_recurrent(x[:cut], p)
    y2, _ = linear_attention_recurrent(x[cut:], p, st)
    return max_abs(np.concatenate([y1, y2]), linear_attention_causal(x, p))


def _ssm(rng, dm):
    x = rng.standard_normal((dm.n, dm.c))
    return x, SsmParams.init(rng, dm.c, dm.d)


def check_ssm_matrix(rng, dm):
    x, p = _ssm(rng, dm)
    return max_abs(selective_scan_serial(x, p), selective_scan_per_channel(x, p, form="matrix"))


def check_ssm_hadamard(rng, dm):
    x, p = _ssm(rng, dm)
    return max_abs(selective_scan_per_channel(x, p, form="matrix"), selective_scan_per_channel(x, p, form="hadamard"))


def check_gate_scalar(rng, dm):
    a = -np.exp(rng.uniform(-4.0, 0.0, size=dm.d))
    delta = float(np.exp(rng.uniform(-7.0, 1.0)))
    got = discretize(a, np.ones_like(a), delta).a_bar
    ref = np.array([math.exp(delta * float(ai)) for ai in a])
    return max_rel(got, ref)


def check_preset_attention(rng, dm):
    x, p = _attn(rng, dm)
    up, cfg = from_attention(p)
    return max_abs(unified_forward(x, up, cfg), linear_attention_causal(x, p))


def check_preset_ssm(rng, dm):
    x, p = _ssm(rng, dm)
    up, cfg = from_ssm(p)
    return max_abs(unified_forward(x, up, cfg), selective_scan_serial(x, p))


def check_preset_ssm_chunked(rng, dm):
    x, p = _ssm(rng, dm)
    up, cfg = from_ssm(p)
    cfg = cfg.replace(scan_chunks=int(rng.integers(2, 9)))
    return max_abs(unified_forward(x, up, cfg), selective_scan_serial(x, p))


def check_preset_mila(rng, dm):
    # MILA preset with no value projection is global linear attention with V = x
    x = rng.standard_normal((dm.n, dm.c))
    up = UnifiedParams.init(rng, dm.c, dm.d, kernel=dm.kernel)
    ap = AttnParams(up.w_q, up.w_k, np.eye(dm.c), dm.heads, dm.kernel)
    return max_abs(unified_forward(x, up, preset("mila", dm.heads)), linear_attention_parallel(x, ap))


def check_scan_sweep(rng, dm):
    g = rng.uniform(0.0, 1.0, size=(dm.n, dm.d, dm.c // dm.heads))
    u = rng.standard_normal(g.shape)
    ref = scan_serial(g, u)
    err = 0.0
    for chunks in sorted({1, 2, 3, 4, 7, 8, 16, dm.n}):
        err = max(err, max_abs(scan_parallel(g, u, chunks), ref))
    return max(err, max_abs(scan_parallel(g, u, 4, workers=2), ref))


def _dwconv_oracle(x, grid, kernel, bias):
    k = kernel.shape[0]
    r = k // 2
    img = x.reshape(grid.height, grid.width, -1)
    out = np.zeros_like(img)
    for i in range(grid.height):
        for j in range(grid.width):
            acc = bias.copy()
            for a in range(k):
                for b in range(k):
                    ii, jj = i + a - r, j + b - r
                    if 0 <= ii < grid.height and 0 <= jj < grid.width:
                        acc = acc + kernel[a, b] * img[ii, jj]
            out[i, j] = acc
    return out.reshape(x.shape)


def check_dwconv(rng, dm):
    grid = Grid2D(int(rng.integers(1, 9)), int(rng.integers(1, 9)))
    k = int(rng.choice([1, 3, 5]))
    x = rng.standard_normal((grid.tokens, dm.c))
    kernel = rng.standard_normal((k, k, dm.c))
    bias = rng.standard_normal(dm.c)
    return max_abs(depthwise_conv2d(x, grid, kernel, bias), _dwconv_oracle(x, grid, kernel, bias))


def _rope_oracle(z, grid, base, heads):
    dh = z.shape[1] // heads
    half = dh // 2
    theta = rope_frequencies(half, base)
    out = np.empty_like(z)
    for t in range(grid.tokens):
        row, col = grid.position(t)
        for h in range(heads):
            for m in range(dh // 2):
                pos, freq = (row, theta[m]) if 2 * m < half else (col, theta[m - half // 2])
                ang = pos * freq
                rot = np.array([[math.cos(ang), -math.sin(ang)], [math.sin(ang), math.cos(ang)]])
                idx = h * dh + 2 * m
                out[t, idx:idx + 2] = rot @ z[t, idx:idx + 2]
    return out


def check_rope(rng, dm):
    heads = dm.heads
    width = heads * 4 * int(rng.integers(1, 4))
    grid = Grid2D(int(rng.integers(1, 7)), int(rng.integers(1, 7)))
    z = rng.standard_normal((grid.tokens, width))
    return max_abs(rope_rotate(z, grid, 100.0, heads), _rope_oracle(z, grid, 100.0, heads))


def check_rope_relative(rng, dm):
    """Rotated scores depend only on the offset between positions; norms are kept."""
    grid = Grid2D(12, 12)
    q = rng.standard_normal(8)
    k = rng.standard_normal(8)
    rq = rope_rotate(np.tile(q, (grid.tokens, 1)), grid, 100.0)
    rk = rope_rotate(np.tile(k, (grid.tokens, 1)), grid, 100.0)
    r1, c1, r2, c2, sr, sc = (int(v) for v in rng.integers(0, 6, size=6))
    before = rq[grid.index(r1, c1)] @ rk[grid.index(r2, c2)]
    after = rq[grid.index(r1 + sr, c1 + sc)] @ rk[grid.index(r2 + sr, c2 + sc)]
    norm_err = float(np.max(np.abs(np.linalg.norm(rq, axis=1) - np.linalg.norm(q))))
    return max(abs(before - after), norm_err)


_SMALL_CACHE: dict = {}


def check_costs(rng, dm):
    if "params" not in _SMALL_CACHE:
        counted = count_costs(SMALL_SPEC, SMALL_RESOLUTION).total_params
        allocated = build_model(SMALL_SPEC, SMALL_RESOLUTION, seed=0).param_count()
        _SMALL_CACHE["params"] = abs(counted - allocated)
    err = _SMALL_CACHE["params"]
    n = int(rng.integers(1, 400))
    heads = int(rng.integers(1, 9))
    c = heads * int(rng.integers(1, 33))
    k = int(rng.choice([1, 3, 5, 7]))
    mila = BlockSpec(design=BlockDesign.MILA, dim=c, heads=heads, dwconv_kernel=k)
    trans = BlockSpec(design=BlockDesign.TRANSFORMER, dim=c, heads=heads)
    d = mila.head_dim
    got_m = block_cost(mila, preset("mila", heads), n).total_flops
    got_t = block_cost(trans, MixerConfig(heads=heads), n).total_flops
    err += abs(got_m - mila_block_flops(n, c, d, k))
    err += abs(got_t - transformer_block_flops(n, c, d))
    err += abs((got_m - got_t) - (n * c * c + k * k * n * c))
    return float(err)


CHECKS: tuple[Check, ...] = (
    Check("matmul_oracle", "BLAS product against the triple-loop product", check_matmul, 1e-12, "rel"),
    Check("linear_reorder", "Q(K^T V) against (Q K^T) V, global linear attention", check_reorder, 1e-10, "rel"),
    Check("softmax_explicit", "softmax attention against explicit weight matrices", check_softmax, 1e-12),
    Check("causal_vs_masked", "causal prefix sums against masked explicit weights", check_causal_masked, 1e-12),
    Check("causal_vs_recurrent", "causal parallel form against the token recurrence", check_causal_recurrent,
          1e-12, recurrent=True),
    Check("recurrent_state_carry", "two recurrent chunks with carried state against one causal pass",
          check_state_carry, 1e-12, recurrent=True),
    Check("ssm_serial_vs_matrix", "broadcast selective scan against per-channel matrix form",
          check_ssm_matrix, 1e-12),
    Check("ssm_matrix_vs_hadamard", "per-channel matrix form against the Hadamard form", check_ssm_hadamard, 1e-12),
    Check("zoh_gate_scalar", "exp(delta * A) against scalar evaluation", check_gate_scalar, 1e-15, "rel"),
    Check("preset_linear_attention", "unified linear-attention preset against causal linear attention",
          check_preset_attention, 1e-12),
    Check("preset_selective_ssm", "unified selective-SSM preset against the selective scan", check_preset_ssm, 1e-12),
    Check("preset_selective_ssm_chunked", "same, with the recurrence on the chunked parallel scan",
          check_preset_ssm_chunked, 1e-12),
    Check("preset_mila", "unified MILA preset against global linear attention with V = x",
          check_preset_mila, 1e-12),
    Check("scan_chunk_sweep", "parallel scan against serial scan over chunk counts and workers",
          check_scan_sweep, 1e-12),
    Check("dwconv_oracle", "depthwise convolution against a per-pixel loop", check_dwconv, 1e-12),
    Check("rope_oracle", "axial rotary encoding against explicit 2x2 rotations", check_rope, 1e-12),
    Check("rope_relative", "rotated scores invariant to a common shift; norms preserved",
          check_rope_relative, 1e-12),
    Check("cost_allocation", "counted params equal allocated scalars; block FLOPs equal closed forms",
          check_costs, 0.0),
)


@dataclass
class VerifyReport:
    checks: list[CheckResult] = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]


def run_check(check: Check, cfg: RunConfig) -> CheckResult:
    s = cfg.sizes
    res = CheckResult(check.name, check.description, check.metric, check.tolerance, recurrent=check.recurrent)
    for t in range(cfg.trials):
        rng = trial_rng(cfg.seed, check.name, t)
        dm = sample_dims(rng, max(s.N), s.C, s.d, s.H)
        res.trials += 1
        try:
            err = float(check.fn(rng, dm))
        except Exception as exc:  # any exception is a failed trial
            res.failures += 1
            res.max_error = float("inf")
            res.first_failure = res.first_failure or f"trial {t}: {type(exc).__name__}: {exc}"
            continue
        if not math.isfinite(err) or err > check.tolerance:
            res.failures += 1
            res.first_failure = res.first_failure or f"trial {t}: error {err:.3e} > {check.tolerance:.0e}"
        res.max_error = max(res.max_error, err) if math.isfinite(err) else float("inf")
    return res


def run_verify(cfg: RunConfig, checks: tuple[Check, ...] = CHECKS) -> VerifyReport:
    import warnings

    report = VerifyReport()
    start = time.perf_counter()
    fault_names = (cfg.inject_fault,) if cfg.inject_fault else ()
    with faults.inject(*fault_names), warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for check in checks:
            report.checks.append(run_check(check, cfg))
    report.elapsed = time.perf_counter() - start
    return report


def report_dict(cfg: RunConfig, report: VerifyReport) -> dict:
    # wall time is left out so two runs with one seed serialize identically
    return {
        "command": "verify",
        "config": cfg.to_dict(),
        "checks": [c.to_dict() for c in report.checks],
        "failed": report.failed(),
        "passed": report.passed,
    }


CSV_COLUMNS = ("name", "metric", "tolerance", "trials", "failures", "max_error", "passed")
