"""Loop kernels compiled with numba.

Same contracts as the numpy backend. Reductions run in a fixed scan order,
so results are deterministic for a given build.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def matmul(a, b):
    m, kk = a.shape
    n = b.shape[1]
    c = np.zeros((m, n))
    for i in range(m):
        for k in range(kk):
            aik = a[i, k]
            for j in range(n):
                c[i, j] += aik * b[k, j]
    return c


@njit(cache=True)
def softmax_rows(a):
    m, n = a.shape
    out = np.empty((m, n))
    for i in range(m):
        mx = a[i, 0]
        for j in range(1, n):
            if a[i, j] > mx:
                mx = a[i, j]
        s = 0.0
        for j in range(n):
            e = math.exp(a[i, j] - mx)
            out[i, j] = e
            s += e
        for j in range(n):
            out[i, j] /= s
    return out


@njit(cache=True)
def softmax_rows_backward(y, gy):
    m, n = y.shape
    g = np.empty((m, n))
    for i in range(m):
        dot = 0.0
        for j in range(n):
            dot += gy[i, j] * y[i, j]
        for j in range(n):
            g[i, j] = y[i, j] * (gy[i, j] - dot)
    return g


@njit(cache=True)
def pool_avg(x):
    c, n = x.shape
    out = np.empty(c)
    for i in range(c):
        s = 0.0
        for j in range(n):
            s += x[i, j]
        out[i] = s / n
    return out


@njit(cache=True)
def pool_max(x):
    c, n = x.shape
    out = np.empty(c)
    for i in range(c):
        mx = x[i, 0]
        for j in range(1, n):
            if x[i, j] > mx:
                mx = x[i, j]
        out[i] = mx
    return out


@njit(cache=True)
def pool_argmax(x):
    c, n = x.shape
    out = np.empty(c, dtype=np.int64)
    for i in range(c):
        best = 0
        for j in range(1, n):
            if x[i, j] > x[i, best]:
                best = j
        out[i] = best
    return out


@njit(cache=True)
def conv1d_same(x, w):
    c = x.shape[0]
    k = w.shape[0]
    r = (k - 1) // 2
    y = np.zeros(c)
    for i in range(c):
        s = 0.0
        for t in range(k):
            j = i + t - r
            if 0 <= j < c:
                s += w[t] * x[j]
        y[i] = s
    return y


@njit(cache=True)
def conv1d_same_backward(x, w, gy):
    c = x.shape[0]
    k = w.shape[0]
    r = (k - 1) // 2
    gx = np.zeros(c)
    gw = np.zeros(k)
    for i in range(c):
        for t in range(k):
            j = i + t - r
            if 0 <= j < c:
                gw[t] += gy[i] * x[j]
                gx[j] += gy[i] * w[t]
    return gx, gw


@njit(cache=True)
def normalize_spatial(a, eps):
    g, n = a.shape
    out = np.zeros((g, n))
    for i in range(g):
        lo = a[i, 0]
        hi = a[i, 0]
        s = 0.0
        for j in range(n):
            v = a[i, j]
            s += v
            if v < lo:
                lo = v
            if v > hi:
                hi = v
        if lo == hi:
            continue
        mean = s / n
        var = 0.0
        for j in range(n):
            d = a[i, j] - mean
            var += d * d
        std = math.sqrt(var / n)
        for j in range(n):
            out[i, j] = (a[i, j] - mean) / (std + eps)
    return out


@njit(cache=True)
def normalize_spatial_backward(a, gy, eps):
    g, n = a.shape
    ga = np.zeros((g, n))
    for i in range(g):
        lo = a[i, 0]
        hi = a[i, 0]
        s = 0.0
        for j in range(n):
            v = a[i, j]
            s += v
            if v < lo:
                lo = v
            if v > hi:
                hi = v
        if lo == hi:
            continue
        mean = s / n
        var = 0.0
        gsum = 0.0
        proj = 0.0
        for j in range(n):
            d = a[i, j] - mean
            var += d * d
            gsum += gy[i, j]
            proj += gy[i, j] * d
        std = math.sqrt(var / n)
        sd = std + eps
        gmean = gsum / n
        coef = proj / (sd * sd * n * std)
        for j in range(n):
            ga[i, j] = (gy[i, j] - gmean) / sd - coef * (a[i, j] - mean)
    return ga
