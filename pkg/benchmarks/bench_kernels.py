"""Compiled vs pure-Python kernel timings.

Usage: python benchmarks/bench_kernels.py [--repeats N]

Runs each kernel on desk-sized inputs through both backends and prints the
median wall time and speedup. The backends must agree bit for bit; the
script exits non-zero if they do not.
"""
import argparse
import statistics
import sys
import time

import numpy as np

from lrlab import _kernels_py

try:
    from lrlab import _kernels
except ImportError:
    _kernels = None


def timeit(fn, repeats):
    fn()
    runs = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        runs.append(time.perf_counter() - t0)
    return statistics.median(runs)


def conv_forward(backend, x, k, stride, pad):
    cols = np.asarray(backend.im2col(x, stride, pad))
    return cols.reshape(-1, cols.shape[-1]) @ k.reshape(k.shape[0], -1).T


def conv_backward(backend, x, k, g, stride, pad):
    gcols = g @ k.reshape(k.shape[0], -1)
    return np.asarray(backend.col2im(gcols.reshape(*g_shape(x, stride, pad), -1), x.shape, stride, pad))


def g_shape(x, stride, pad):
    ho = (x.shape[2] + 2 * pad - 3) // stride + 1
    wo = (x.shape[3] + 2 * pad - 3) // stride + 1
    return x.shape[0], ho, wo


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--batch", type=int, default=32)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; nothing to compare")
        return 1

    g = np.random.default_rng(0)
    cases = []
    for name, shape, stride in [("conv1 28x28 c1", (args.batch, 1, 28, 28), 1),
                                ("conv2 28x28 c8", (args.batch, 8, 28, 28), 2),
                                ("conv3 14x14 c16", (args.batch, 16, 14, 14), 2)]:
        x = g.standard_normal(shape).astype(np.float32)
        k = g.standard_normal((8, shape[1], 3, 3)).astype(np.float32)
        n, ho, wo = g_shape(x, stride, 1)
        grad = g.standard_normal((n * ho * wo, 8)).astype(np.float32)
        cols = np.ascontiguousarray(_kernels_py.im2col(x, stride, 1))
        cases += [
            (f"im2col  {name}", lambda b, x=x, s=stride: b.im2col(x, s, 1)),
            (f"col2im  {name}", lambda b, c=cols, x=x, s=stride: b.col2im(c, x.shape, s, 1)),
            (f"conv fwd {name}", lambda b, x=x, k=k, s=stride: conv_forward(b, x, k, s, 1)),
            (f"conv bwd {name}", lambda b, x=x, k=k, gr=grad, s=stride: conv_backward(b, x, k, gr, s, 1)),
        ]
    blob = g.bytes(1 << 20)
    cases.append(("fnv1a64 1 MiB",
                  lambda b: b.fnv1a64(np.frombuffer(blob, dtype=np.uint8) if b is _kernels else blob)))

    print(f"{'kernel':28s} {'compiled':>12s} {'python':>12s} {'speedup':>8s}")
    mismatched = []
    for label, fn in cases:
        if not np.array_equal(np.asarray(fn(_kernels)), np.asarray(fn(_kernels_py))):
            mismatched.append(label)
        tc = timeit(lambda: fn(_kernels), args.repeats)
        tp = timeit(lambda: fn(_kernels_py), max(1, args.repeats if "fnv" not in label else 2))
        print(f"{label:28s} {tc * 1e3:10.3f}ms {tp * 1e3:10.3f}ms {tp / tc:7.1f}x")
    if mismatched:
        print("backends disagree on: " + ", ".join(mismatched))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
