# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: patch extraction for 3x3 convolutions and FNV-1a.

Accumulation order in col2im matches the numpy fallback exactly (kernel
offsets in row-major order), so both backends agree bit for bit.
"""
import numpy as np

from libc.stdint cimport uint64_t


def im2col(const float[:, :, :, ::1] x, int stride, int pad):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = (H + 2 * pad - 3) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - 3) // stride + 1
    out = np.zeros((N, Ho, Wo, C * 9), dtype=np.float32)
    cdef float[:, :, :, ::1] o = out
    cdef Py_ssize_t n, c, oh, ow, ki, kj, ih, iw
    with nogil:
        for n in range(N):
            for oh in range(Ho):
                for ow in range(Wo):
                    for c in range(C):
                        for ki in range(3):
                            ih = oh * stride - pad + ki
                            if ih < 0 or ih >= H:
                                continue
                            for kj in range(3):
                                iw = ow * stride - pad + kj
                                if iw < 0 or iw >= W:
                                    continue
                                o[n, oh, ow, c * 9 + ki * 3 + kj] = x[n, c, ih, iw]
    return out


def col2im(const float[:, :, :, ::1] cols, tuple shape, int stride, int pad):
    cdef Py_ssize_t N = shape[0], C = shape[1], H = shape[2], W = shape[3]
    cdef Py_ssize_t Ho = cols.shape[1], Wo = cols.shape[2]
    out = np.zeros((N, C, H, W), dtype=np.float32)
    cdef float[:, :, :, ::1] dx = out
    cdef Py_ssize_t n, c, oh, ow, ki, kj, ih, iw
    with nogil:
        for n in range(N):
            for c in range(C):
                for ki in range(3):
                    for kj in range(3):
                        for oh in range(Ho):
                            ih = oh * stride - pad + ki
                            if ih < 0 or ih >= H:
                                continue
                            for ow in range(Wo):
                                iw = ow * stride - pad + kj
                                if iw < 0 or iw >= W:
                                    continue
                                dx[n, c, ih, iw] += cols[n, oh, ow, c * 9 + ki * 3 + kj]
    return out


def fnv1a64(const unsigned char[::1] data):
    cdef uint64_t h = 0xCBF29CE484222325ULL
    cdef Py_ssize_t i, n = data.shape[0]
    with nogil:
        for i in range(n):
            h ^= data[i]
            h *= 0x100000001B3ULL
    return int(h)
