"""Positional encodings that can stand in for the forget gate on 2-D token grids.

Tokens are laid out row-major: token ``t`` sits at ``(t // width, t % width)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .numerics import DimensionError, as_tokens


@dataclass(frozen=True)
class Grid2D:
    height: int
    width: int

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.height}x{self.width}")

    @property
    def tokens(self) -> int:
        return self.height * self.width

    def position(self, t: int) -> tuple[int, int]:
        return divmod(t, self.width)

    def index(self, row: int, col: int) -> int:
        return row * self.width + col

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        rows, cols = np.divmod(np.arange(self.tokens), self.width)
        return rows, cols

    @classmethod
    def square(cls, n: int) -> "Grid2D":
        side = int(round(n ** 0.5))
        if side * side != n:
            raise ValueError(f"{n} tokens do not form a square grid")
        return cls(side, side)


class PosEncKind(str, enum.Enum):
    APE = "ape"
    LEPE = "lepe"
    CPE = "cpe"
    ROPE = "rope"
    NONE = "none"


@dataclass(frozen=True)
class PosEncSpec:
    kind: PosEncKind = PosEncKind.NONE
    dwconv_kernel: int = 3
    rope_base: float = 10000.0

    def __post_init__(self):
        object.__setattr__(self, "kind", PosEncKind(self.kind))
        if self.dwconv_kernel < 1 or self.dwconv_kernel % 2 == 0:
            raise ValueError(f"dwconv_kernel must be odd and >= 1, got {self.dwconv_kernel}")
        if not self.rope_base > 0:
            raise ValueError("rope_base must be positive")

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "dwconv_kernel": self.dwconv_kernel, "rope_base": self.rope_base}

    @classmethod
    def from_dict(cls, d: dict) -> "PosEncSpec":
        return cls(PosEncKind(d["kind"]), int(d.get("dwconv_kernel", 3)), float(d.get("rope_base", 10000.0)))


def _check_grid(x: np.ndarray, grid: Grid2D) -> None:
    if x.shape[0] != grid.tokens:
        raise DimensionError(f"{x.shape[0]} tokens do not match a {grid.height}x{grid.width} grid")


def ape_add(x: np.ndarray, table: np.ndarray) -> np.ndarray:
    x = as_tokens(x)
    table = np.asarray(table)
    if table.shape != x.shape:
        raise DimensionError(f"position table {table.shape} does not match tokens {x.shape}")
    return x + table


def depthwise_conv2d(x: np.ndarray, grid: Grid2D, kernel: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Per-channel k x k cross-correlation on the token grid, zero padded to keep the size.

    ``kernel`` has shape (k, k, C) with odd k.
    """
    x = np.asarray(x)
    _check_grid(x, grid)
    kernel = np.asarray(kernel)
    k = kernel.shape[0]
    if kernel.ndim != 3 or kernel.shape[1] != k or k % 2 == 0:
        raise DimensionError(f"kernel must be (k, k, C) with odd k, got {kernel.shape}")
    c = x.shape[1]
    if kernel.shape[2] != c:
        raise DimensionError(f"kernel has {kernel.shape[2]} channels, input has {c}")
    h, w, r = grid.height, grid.width, k // 2
    img = np.zeros((h + 2 * r, w + 2 * r, c), dtype=np.result_type(x, kernel))
    img[r:r + h, r:r + w] = x.reshape(h, w, c)
    out = np.zeros((h, w, c), dtype=img.dtype)
    for a in range(k):
        for b in range(k):
            out += kernel[a, b] * img[a:a + h, b:b + w]
    if bias is not None:
        out += bias
    return out.reshape(h * w, c)


def cpe(x: np.ndarray, grid: Grid2D, kernel: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Conditional encoding: x + dwconv(x)."""
    return x + depthwise_conv2d(x, grid, kernel, bias)


def lepe(attn_out: np.ndarray, v: np.ndarray, grid: Grid2D, kernel: np.ndarray,
         bias: np.ndarray | None = None) -> np.ndarray:
    """Locally-enhanced encoding: attention output plus dwconv of the values."""
    return attn_out + depthwise_conv2d(v, grid, kernel, bias)


def rope_frequencies(axis_width: int, base: float) -> np.ndarray:
    """theta_m = base^(-2m / axis_width) for m = 0 .. axis_width/2 - 1."""
    return base ** (-2.0 * np.arange(axis_width // 2) / axis_width)


def _rotate_pairs(z: np.ndarray, angles: np.ndarray) -> np.ndarray:
    cos, sin = np.cos(angles), np.sin(angles)
    even, odd = z[:, 0::2], z[:, 1::2]
    out = np.empty_like(z)
    out[:, 0::2] = even * cos - odd * sin
    out[:, 1::2] = even * sin + odd * cos
    return out


def rope_rotate(z: np.ndarray, grid: Grid2D, base: float = 10000.0, heads: int = 1) -> np.ndarray:
    """2-D axial rotary encoding of queries or keys.

    Each head's channels split in half: the first half rotates pairs by
    row * theta, the second half by column * theta.
    """
    z = np.asarray(z)
    _check_grid(z, grid)
    width = z.shape[1]
    if width % heads or (width // heads) % 4:
        raise DimensionError(f"per-head width {width}/{heads} must be divisible by 4 for axial RoPE")
    dh = width // heads
    half = dh // 2
    theta = rope_frequencies(half, base)
    rows, cols = grid.coords()
    row_angles = np.outer(rows, theta)
    col_angles = np.outer(cols, theta)
    out = np.empty_like(z)
    for h in range(heads):
        base_ch = h * dh
        out[:, base_ch:base_ch + half] = _rotate_pairs(z[:, base_ch:base_ch + half], row_angles)
        out[:, base_ch + half:base_ch + dh] = _rotate_pairs(z[:, base_ch + half:base_ch + dh], col_angles)
    return out
