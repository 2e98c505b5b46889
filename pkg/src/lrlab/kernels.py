"""Kernel backend selection.

The compiled extension is used when it imports and the input is a C-ordered
float32 array; everything else (float64 gradient checks, missing build, or
``LRLAB_PURE_PYTHON=1``) goes to the numpy fallback.
"""
from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

_compiled = None
if os.environ.get("LRLAB_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"


def _fast(a: np.ndarray) -> bool:
    return _compiled is not None and a.dtype == np.float32 and a.flags.c_contiguous


def im2col(x: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """(N, C, H, W) -> (N, Ho, Wo, C*9) patches for a 3x3 kernel."""
    if _fast(x):
        return _compiled.im2col(x, stride, pad)
    return _kernels_py.im2col(x, stride, pad)


def col2im(cols: np.ndarray, shape: tuple, stride: int, pad: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patches back to (N, C, H, W)."""
    if _fast(cols):
        return _compiled.col2im(cols, tuple(int(s) for s in shape), stride, pad)
    return _kernels_py.col2im(cols, shape, stride, pad)


def fnv1a64(data: bytes) -> int:
    if _compiled is not None:
        return _compiled.fnv1a64(memoryview(bytes(data)).cast("B"))
    return _kernels_py.fnv1a64(data)
