"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""
from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def im2col(x: np.ndarray, stride: int, pad: int) -> np.ndarray:
    N, C, H, W = x.shape
    Ho = (H + 2 * pad - 3) // stride + 1
    Wo = (W + 2 * pad - 3) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((N, Ho, Wo, C, 3, 3), dtype=x.dtype)
    for ki in range(3):
        for kj in range(3):
            patch = xp[:, :, ki:ki + stride * (Ho - 1) + 1:stride, kj:kj + stride * (Wo - 1) + 1:stride]
            cols[:, :, :, :, ki, kj] = patch.transpose(0, 2, 3, 1)
    return cols.reshape(N, Ho, Wo, C * 9)


def col2im(cols: np.ndarray, shape: tuple, stride: int, pad: int) -> np.ndarray:
    N, C, H, W = shape
    _, Ho, Wo, _ = cols.shape
    c6 = cols.reshape(N, Ho, Wo, C, 3, 3)
    dxp = np.zeros((N, C, H + 2 * pad, W + 2 * pad), dtype=cols.dtype)
    for ki in range(3):
        for kj in range(3):
            dxp[:, :, ki:ki + stride * (Ho - 1) + 1:stride, kj:kj + stride * (Wo - 1) + 1:stride] += (
                c6[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
            )
    if pad:
        dxp = dxp[:, :, pad:pad + H, pad:pad + W]
    return np.ascontiguousarray(dxp)


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in bytes(data):
        h = ((h ^ b) * 0x100000001B3) & _MASK
    return h
