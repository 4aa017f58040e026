"""Wall-clock scaling benchmarks behind ``mixerlab bench``.

Times are CPU wall times on whatever machine runs them, so only growth
ratios time(2N) / time(N) are meaningful across machines.
"""

from __future__ import annotations

import math
import os
import platform
import time
import timeit
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..attention import AttnParams, linear_attention_parallel, softmax_attention
from ..scan import scan_parallel, scan_serial
from .config import RunConfig
from .report import checksum

MIXERS = ("softmax_attention", "linear_attention_parallel", "scan_serial", "scan_parallel")

# expected growth per doubling of N (linear vs quadratic)
EXPECTED_RATIO = {
    "softmax_attention": (3.0, 6.0),
    "linear_attention_parallel": (1.5, 3.0),
    "scan_serial": (1.5, 3.0),
    "scan_parallel": (1.5, 3.0),
}

SCAN_CHUNKS = 8


@dataclass(frozen=True)
class BenchRecord:
    mixer: str
    n: int
    median: float
    p10: float
    p90: float
    throughput: float  # tokens per second at the median
    checksum: str
    checksum_stable: bool

    def __post_init__(self):
        if not self.median > 0:
            raise ValueError("median time must be positive")

    def to_dict(self) -> dict:
        return {"mixer": self.mixer, "n": self.n, "median_s": self.median, "p10_s": self.p10,
                "p90_s": self.p90, "throughput_tok_s": self.throughput, "checksum": self.checksum,
                "checksum_stable": self.checksum_stable}


def hardware_info() -> dict:
    return {
        "machine": platform.machine(),
        "processor": platform.processor() or "unknown",
        "system": platform.system(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "cpu_count": os.cpu_count(),
    }


def make_workloads(n: int, c: int, d: int, heads: int, seed: int) -> dict[str, Callable[[], np.ndarray]]:
    """Zero-argument callables per mixer; inputs are built once, outside the timed region."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, n]))
    x = rng.standard_normal((n, c))
    p = AttnParams.init(rng, c, d, heads)
    g = rng.uniform(0.5, 1.0, size=(n, c))
    u = rng.standard_normal((n, c))
    return {
        "softmax_attention": lambda: softmax_attention(x, p),
        "linear_attention_parallel": lambda: linear_attention_parallel(x, p),
        "scan_serial": lambda: scan_serial(g, u),
        "scan_parallel": lambda: scan_parallel(g, u, SCAN_CHUNKS),
    }


MIN_SAMPLE_S = 0.02


def calibrate(fn: Callable[[], np.ndarray]) -> int:
    """Calls per timed sample so one sample lasts at least MIN_SAMPLE_S."""
    number, _ = timeit.Timer(fn).autorange()
    return max(1, math.ceil(number * MIN_SAMPLE_S / 0.2))


def time_call(fn: Callable[[], np.ndarray], repeats: int, warmup: int,
              number: int = 1) -> tuple[np.ndarray, list[str]]:
    """Per-call seconds for each of ``repeats`` samples of ``number`` calls."""
    for _ in range(warmup):
        fn()
    times, sums = [], []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(number):
            out = fn()
        times.append((time.perf_counter() - t0) / number)
        # the digest consumes every output value, so nothing timed is dead code
        sums.append(checksum(out))
    return np.array(times), sums


def run_bench(cfg: RunConfig, mixers: tuple[str, ...] = MIXERS) -> list[BenchRecord]:
    """Time every (mixer, N) pair.

    Within one mixer the repeats cycle round-robin over N, so a burst of
    background load hits every size alike instead of skewing one ratio.
    Mixers run one after another; interleaving them would let a slow
    quadratic call flush the cache ahead of a millisecond-scale one.
    """
    s = cfg.sizes
    work = {n: make_workloads(n, s.C, s.d, s.H, cfg.seed) for n in s.N}
    records = []
    for name in mixers:
        for n in s.N:
            time_call(work[n][name], 0, cfg.warmup)
        number = {n: calibrate(work[n][name]) for n in s.N}
        times: dict[int, list[float]] = {n: [] for n in s.N}
        sums: dict[int, list[str]] = {n: [] for n in s.N}
        for _ in range(cfg.repeats):
            for n in s.N:
                t, c = time_call(work[n][name], 1, 0, number[n])
                times[n].append(float(t[0]))
                sums[n].extend(c)
        for n in s.N:
            arr = np.array(times[n])
            med = float(np.median(arr))
            records.append(BenchRecord(
                mixer=name, n=n, median=med,
                p10=float(np.percentile(arr, 10)), p90=float(np.percentile(arr, 90)),
                throughput=n / med, checksum=sums[n][0], checksum_stable=len(set(sums[n])) == 1,
            ))
    return records


def growth_ratios(records: list[BenchRecord]) -> list[dict]:
    out = []
    by_mixer: dict[str, list[BenchRecord]] = {}
    for r in records:
        by_mixer.setdefault(r.mixer, []).append(r)
    for mixer, rows in by_mixer.items():
        rows = sorted(rows, key=lambda r: r.n)
        lo, hi = EXPECTED_RATIO.get(mixer, (0.0, float("inf")))
        for a, b in zip(rows, rows[1:]):
            ratio = b.median / a.median
            out.append({"mixer": mixer, "n_from": a.n, "n_to": b.n, "size_ratio": b.n / a.n,
                        "time_ratio": ratio, "expected": [lo, hi],
                        "within_expected": bool(b.n == 2 * a.n and lo <= ratio <= hi)})
    return out


def report_dict(cfg: RunConfig, records: list[BenchRecord]) -> dict:
    return {
        "command": "bench",
        "config": cfg.to_dict(),
        "hardware": hardware_info(),
        "scan_chunks": SCAN_CHUNKS,
        "records": [r.to_dict() for r in records],
        "growth": growth_ratios(records),
    }


CSV_COLUMNS = ("mixer", "n", "median_s", "p10_s", "p90_s", "throughput_tok_s", "checksum", "checksum_stable")
