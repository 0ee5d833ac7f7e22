"""Dense float64 tensor primitives and a portable deterministic RNG.

All operations work on C-contiguous ``numpy.float64`` arrays and are pure
functions: identical inputs produce bitwise-identical outputs. Matrix
products go through numpy's non-optimized einsum kernel, which accumulates
the contracted axis strictly left to right, so results never depend on the
installed BLAS.
"""

from __future__ import annotations

import numpy as np

Array = np.ndarray

# gelu(x) = 0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x^3)))
_GELU_K = 0.7978845608028654  # sqrt(2/pi)
_GELU_C = 0.044715


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_tensor(data) -> Array:
    """Coerce nested lists / arrays to a contiguous float64 array."""
    return np.ascontiguousarray(data, dtype=np.float64)


def _require_finite(t: Array, name: str) -> None:
    if not np.all(np.isfinite(t)):
        raise ValueError(f"{name} contains NaN or Inf")


def matmul(a: Array, b: Array) -> Array:
    """Matrix product of a (m, k) by b (k, n).

    Products are accumulated over k in increasing order for each output
    cell (row-wise, left to right), which makes the result reproducible
    bit for bit across platforms.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    return np.einsum("ik,kj->ij", a, b, optimize=False)


def softmax_last(t: Array) -> Array:
    """Softmax over the last axis, stabilized by max subtraction."""
    t = as_tensor(t)
    if t.shape[-1] < 1:
        raise ShapeError("softmax_last needs a non-empty last axis")
    shifted = t - np.max(t, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def _halfpixel_taps(n_out: int, s: int) -> tuple[np.ndarray, np.ndarray]:
    """Source indices and blend weights for one axis of the downsample.

    Output center i maps to source coordinate (i + 0.5) * s - 0.5. For
    integer s >= 2 both taps stay in bounds, so no edge clamping is needed.
    Returns (lo, w) where the sample is (1 - w) * src[lo] + w * src[lo + 1].
    """
    coords = (np.arange(n_out, dtype=np.float64) + 0.5) * s - 0.5
    lo = np.floor(coords).astype(np.intp)
    return lo, coords - lo


def bilinear_downsample(grid: Array, s: int) -> Array:
    """Downsample an (h, w, C) grid by integer factor s with half-pixel centers.

    Consequences of the convention: s=2 reproduces the 2x2 block mean
    exactly, odd s picks the center cell of each block exactly.
    """
    grid = as_tensor(grid)
    if grid.ndim != 3:
        raise ShapeError(f"bilinear_downsample expects (h, w, C), got {grid.shape}")
    if not isinstance(s, int) or s < 2:
        raise ValueError(f"scale factor must be an integer >= 2, got {s!r}")
    h, w, _ = grid.shape
    if h % s or w % s:
        raise ShapeError(f"scale {s} does not divide grid extent {h}x{w}")
    r0, wr = _halfpixel_taps(h // s, s)
    c0, wc = _halfpixel_taps(w // s, s)
    rows0 = grid[r0]  # (h/s, w, C)
    rows1 = grid[r0 + 1]
    rows = rows0 * (1.0 - wr)[:, None, None] + rows1 * wr[:, None, None]
    cols = rows[:, c0] * (1.0 - wc)[None, :, None] + rows[:, c0 + 1] * wc[None, :, None]
    return np.ascontiguousarray(cols)


def bilinear_downsample_adjoint(grad_out: Array, h: int, w: int, s: int) -> Array:
    """Transpose of ``bilinear_downsample``: scatter (h/s, w/s, C) back to (h, w, C)."""
    grad_out = as_tensor(grad_out)
    if grad_out.shape[:2] != (h // s, w // s):
        raise ShapeError(
            f"adjoint input {grad_out.shape} does not match downsampled {h}x{w} by {s}"
        )
    r0, wr = _halfpixel_taps(h // s, s)
    c0, wc = _halfpixel_taps(w // s, s)
    cols = np.zeros((h // s, w, grad_out.shape[2]))
    np.add.at(cols, (slice(None), c0), grad_out * (1.0 - wc)[None, :, None])
    np.add.at(cols, (slice(None), c0 + 1), grad_out * wc[None, :, None])
    grid = np.zeros((h, w, grad_out.shape[2]))
    np.add.at(grid, (r0,), cols * (1.0 - wr)[:, None, None])
    np.add.at(grid, (r0 + 1,), cols * wr[:, None, None])
    return grid


def gelu(t: Array) -> Array:
    """Elementwise tanh-approximation GELU (formula in the module constant)."""
    t = as_tensor(t)
    return 0.5 * t * (1.0 + np.tanh(_GELU_K * (t + _GELU_C * t**3)))


def gelu_grad(t: Array) -> Array:
    """Derivative of ``gelu`` at t."""
    t = as_tensor(t)
    inner = _GELU_K * (t + _GELU_C * t**3)
    th = np.tanh(inner)
    return 0.5 * (1.0 + th) + 0.5 * t * (1.0 - th**2) * _GELU_K * (1.0 + 3.0 * _GELU_C * t**2)


def add(a: Array, b: Array) -> Array:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add shapes disagree: {a.shape} vs {b.shape}")
    return a + b


def scale(t: Array, c: float) -> Array:
    return as_tensor(t) * float(c)


class Rng:
    """Counter-based splitmix64 generator; portable across platforms.

    State for draw i is (seed + (i + 1) * 0x9E3779B97F4A7C15) mod 2**64,
    finalized with the splitmix64 mixing function:

        z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
        z ^= z >> 27; z *= 0x94D049BB133111EB
        z ^= z >> 31

    Floats take the top 53 bits: u = ((z >> 11) + 0.5) * 2**-53, which lies
    strictly inside (0, 1). Identical seeds give bitwise-identical streams.
    """

    _GAMMA = np.uint64(0x9E3779B97F4A7C15)

    def __init__(self, seed: int):
        self._seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self._count = 0

    @property
    def seed(self) -> int:
        return int(self._seed)

    @staticmethod
    def _mix(z: np.ndarray) -> np.ndarray:
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        return self._mix(self._seed + idx * self._GAMMA)

    def next_u64(self) -> int:
        return int(self._raw(1)[0])

    def uniform(self, lo: float, hi: float, shape=None) -> Array:
        """i.i.d. uniforms on the open interval (lo, hi)."""
        n = 1 if shape is None else int(np.prod(shape))
        u = ((self._raw(n) >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
        out = lo + (hi - lo) * u
        return float(out[0]) if shape is None else out.reshape(shape)


def init_uniform(rng: Rng, shape, fan_in: int, fan_out: int) -> Array:
    """Glorot-style init: uniform on (-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    shape = tuple(int(d) for d in shape)
    if len(shape) == 0:
        raise ShapeError("init_uniform needs a non-empty shape")
    if any(d <= 0 for d in shape):
        raise ShapeError(f"init_uniform dimensions must be positive, got {shape}")
    if fan_in <= 0 or fan_out <= 0:
        raise ValueError("fans must be positive")
    a = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return rng.uniform(-a, a, shape)
