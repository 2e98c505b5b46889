"""Independent reference implementations used as test oracles.

Everything here is written with plain loops or the textbook formula, and
shares no code with the package beyond the public call being checked.
"""
import numpy as np


def naive_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += float(a[i, t]) * float(b[t, j])
            out[i, j] = s
    return out


def naive_conv(x, k, stride, pad):
    n, c, h, w = x.shape
    f = k.shape[0]
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    xp[:, :, pad:pad + h, pad:pad + w] = x
    ho = (h + 2 * pad - 3) // stride + 1
    wo = (w + 2 * pad - 3) // stride + 1
    out = np.zeros((n, f, ho, wo), dtype=np.float64)
    for b in range(n):
        for o in range(f):
            for i in range(ho):
                for j in range(wo):
                    s = 0.0
                    for ch in range(c):
                        for di in range(3):
                            for dj in range(3):
                                s += xp[b, ch, i * stride + di, j * stride + dj] * float(k[o, ch, di, dj])
                    out[b, o, i, j] = s
    return out


def pairwise_auc(clean, adv):
    wins = 0.0
    for a in adv:
        for c in clean:
            if a > c:
                wins += 1.0
            elif a == c:
                wins += 0.5
    return wins / (len(adv) * len(clean))


def trapezoid(points):
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def central_differences(f, arrays, h=1e-3):
    """Numerical gradient of scalar ``f()`` w.r.t. each array, perturbed in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = f()
            flat[i] = old - h
            down = f()
            flat[i] = old
            gf[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def fraction_close(analytic, numeric, rtol=1e-4, floor=1e-6):
    """Share of coordinates with relative error below ``rtol``.

    Coordinates where both values are below ``floor`` count as agreeing.
    """
    a = np.concatenate([np.asarray(x, dtype=np.float64).reshape(-1) for x in analytic])
    n = np.concatenate([np.asarray(x, dtype=np.float64).reshape(-1) for x in numeric])
    scale = np.maximum(np.abs(a), np.abs(n))
    ok = (scale < floor) | (np.abs(a - n) <= rtol * scale)
    return float(ok.mean())


def loop_slice(arr, start, end, step):
    return [arr[i] for i in range(start, end, step)]
