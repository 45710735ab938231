"""Dense array kernels shared by every other module.

Tensors are plain C-order numpy arrays. Training runs in float32; switch
the default to float64 (``set_default_dtype`` / ``using_dtype``) when
comparing analytic gradients against finite differences, where float32
rounding drowns out a 1e-4 comparison. Kernels preserve the dtype of their
input, so float64 checking needs no code changes downstream.

Every public kernel validates that its output is finite; a NaN or Inf is a
contract violation and raises ``NumericsError`` rather than propagating.
"""

from __future__ import annotations

from contextlib import contextmanager
from functools import lru_cache

import numpy as np

from .errors import InvalidArgumentError, NumericsError

_DEFAULT_DTYPE = np.dtype(np.float32)


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    """Set the dtype used when this package allocates new parameter arrays."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise InvalidArgumentError(f"default dtype must be float32 or float64, got {dt}")
    _DEFAULT_DTYPE = dt


@contextmanager
def using_dtype(dtype):
    """Temporarily switch the default dtype (used by gradient checks)."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def check_finite(arr: np.ndarray, what: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"{what} contains NaN or Inf")
    return arr


@lru_cache(maxsize=64)
def _interp_matrix(n_in: int, n_out: int, dtype_name: str) -> np.ndarray:
    """Row-interpolation matrix M (n_out x n_in) for align-corners sampling.

    Output index i samples source coordinate i * (n_in-1)/(n_out-1); with a
    single output sample the source coordinate is 0. Each row holds the two
    interpolation weights, so resizing is literally a matrix product and its
    adjoint is the transpose of the same matrix.
    """
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = (n_in - 1) / (n_out - 1) if n_out > 1 else 0.0
    for i in range(n_out):
        src = i * scale
        lo = min(int(np.floor(src)), n_in - 1)
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    out = m.astype(dtype_name)
    out.setflags(write=False)
    return out


def bilinear_resize(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize an (H', W', C) array to (out_h, out_w, C), align-corners bilinear.

    Exact at corner samples, linear in between, and linear as a map of its
    input — the gradient of anything downstream transposes through it via
    ``bilinear_resize_adjoint``.
    """
    if out_h < 1 or out_w < 1:
        raise InvalidArgumentError(f"target size must be positive, got {out_h}x{out_w}")
    grid = np.asarray(grid)
    if grid.ndim != 3:
        raise InvalidArgumentError(f"expected (H, W, C) array, got shape {grid.shape}")
    in_h, in_w, _ = grid.shape
    if in_h < 1 or in_w < 1:
        raise InvalidArgumentError(f"source size must be positive, got {in_h}x{in_w}")
    my = _interp_matrix(in_h, out_h, grid.dtype.name)
    mx = _interp_matrix(in_w, out_w, grid.dtype.name)
    rows = np.tensordot(my, grid, axes=([1], [0]))        # (out_h, in_w, C)
    out = np.tensordot(mx, rows, axes=([1], [1]))         # (out_w, out_h, C)
    out = np.ascontiguousarray(out.transpose(1, 0, 2))
    return check_finite(out, "bilinear_resize output")


def bilinear_resize_adjoint(pixel_grid: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    """Transpose of ``bilinear_resize`` as a linear map.

    Scatters (H, W, C) pixel-space values back onto the (in_h, in_w, C)
    source grid so that <g, resize(t)> == <adjoint(g), t> for all t.
    """
    pixel_grid = np.asarray(pixel_grid)
    if pixel_grid.ndim != 3:
        raise InvalidArgumentError(f"expected (H, W, C) array, got shape {pixel_grid.shape}")
    if in_h < 1 or in_w < 1:
        raise InvalidArgumentError(f"source size must be positive, got {in_h}x{in_w}")
    out_h, out_w, _ = pixel_grid.shape
    my = _interp_matrix(in_h, out_h, pixel_grid.dtype.name)   # (out_h, in_h)
    mx = _interp_matrix(in_w, out_w, pixel_grid.dtype.name)   # (out_w, in_w)
    rows = np.tensordot(my, pixel_grid, axes=([0], [0]))      # (in_h, out_w, C)
    out = np.tensordot(mx, rows, axes=([0], [1]))             # (in_w, in_h, C)
    out = np.ascontiguousarray(out.transpose(1, 0, 2))
    return check_finite(out, "bilinear_resize_adjoint output")


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Softmax with max-subtraction; entries positive, sums to 1 along axis."""
    x = np.asarray(x)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)
    return check_finite(out, "softmax output")


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.asarray(x)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    out = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    return check_finite(out, "log_softmax output")


def log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -np.asarray(x))


def sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(log_sigmoid(x))
