"""Slow, loop-based reference implementations used as test and check oracles.

Nothing here calls into :mod:`hanfuse.kernels` or the unit code; each
function is written directly from the defining formulas with scalar Python
arithmetic so it can independently vouch for the vectorized paths.
"""

from __future__ import annotations

import math

import numpy as np


def matmul(a, b):
    m, kk = len(a), len(a[0])
    n = len(b[0])
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for k in range(kk):
                s += float(a[i][k]) * float(b[k][j])
            out[i, j] = s
    return out


def softmax_rows(a):
    """Naive exp / sum in extended precision (no max shift)."""
    a = np.asarray(a, dtype=np.longdouble)
    out = np.zeros(a.shape)
    for i in range(a.shape[0]):
        e = [np.exp(v) for v in a[i]]
        s = sum(e, np.longdouble(0))
        for j, v in enumerate(e):
            out[i, j] = float(v / s)
    return out


def spatial_pool(f, mode):
    C = f.shape[0]
    flat = np.asarray(f).reshape(C, -1)
    out = np.zeros(C)
    for c in range(C):
        vals = [float(v) for v in flat[c]]
        out[c] = math.fsum(vals) / len(vals) if mode == "avg" else max(vals)
    return out


def conv1d_same(x, w):
    C, k = len(x), len(w)
    r = k // 2
    padded = [0.0] * r + [float(v) for v in x] + [0.0] * r
    return np.array([sum(w[t] * padded[i + t] for t in range(k)) for i in range(C)])


def normalize_row(row, eps):
    vals = [float(v) for v in row]
    if max(vals) == min(vals):
        return [0.0] * len(vals)
    n = len(vals)
    mean = math.fsum(vals) / n
    std = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / n)
    return [(v - mean) / (std + eps) for v in vals]


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def seu(f, gamma, beta, G, eps=1e-5):
    C, H, W = f.shape
    cg = C // G
    out = np.zeros_like(f)
    for s in range(G):
        chans = range(s * cg, (s + 1) * cg)
        means = {c: math.fsum(float(v) for v in f[c].ravel()) / (H * W) for c in chans}
        amap = []
        for h in range(H):
            for w in range(W):
                amap.append(sum(means[c] * f[c, h, w] for c in chans))
        norm = normalize_row(amap, eps)
        for pos in range(H * W):
            h, w = divmod(pos, W)
            att = _sig(gamma[s] * norm[pos] + beta[s])
            for c in chans:
                out[c, h, w] = att * f[c, h, w]
    return out


def ceu(f, w):
    C = f.shape[0]
    g = spatial_pool(f, "avg")
    z = conv1d_same(g, w)
    out = np.zeros_like(f)
    for c in range(C):
        out[c] = _sig(z[c]) * f[c]
    return out


def cmeu(f_query, f_kv, norm_scale, norm_shift, Wq, Wk, Wv, Wo, eps=1e-5):
    """Double-loop attention: for each query position, a softmax over key positions."""
    C, H, W = f_query.shape
    n = H * W
    c = Wq.shape[1]

    def normed(f):
        rows = [normalize_row(f[ch].ravel(), eps) for ch in range(C)]
        return [[rows[ch][p] * norm_scale[ch] + norm_shift[ch] for ch in range(C)] for p in range(n)]

    xq, xkv = normed(f_query), normed(f_kv)

    def project(x, M):
        return [[sum(x[p][ch] * M[ch][d] for ch in range(C)) for d in range(c)] for p in range(n)]

    q, k, v = project(xq, Wq), project(xkv, Wk), project(xkv, Wv)
    out = np.array(f_query, dtype=np.float64, copy=True)
    for p in range(n):
        scores = [sum(q[p][d] * k[t][d] for d in range(c)) / math.sqrt(c) for t in range(n)]
        top = max(scores)
        e = [math.exp(s - top) for s in scores]
        total = math.fsum(e)
        z = [sum(e[t] / total * v[t][d] for t in range(n)) for d in range(c)]
        h, w = divmod(p, W)
        for ch in range(C):
            out[ch, h, w] += sum(z[d] * Wo[d][ch] for d in range(c))
    return out


def router(rgb, tir, W1, b1, W2, b2):
    f = np.concatenate([rgb, tir])
    feats = list(spatial_pool(f, "avg")) + list(spatial_pool(f, "max"))
    hidden = []
    for u in range(W1.shape[1]):
        s = b1[u] + sum(feats[i] * W1[i][u] for i in range(len(feats)))
        hidden.append(max(s, 0.0))
    gates = []
    for o in range(W2.shape[1]):
        s = b2[o] + sum(hidden[u] * W2[u][o] for u in range(len(hidden)))
        gates.append(max(math.tanh(s), 0.0))
    return np.array(gates)


def aggregate(prev_outputs, gates):
    n = len(prev_outputs)
    result = []
    for i in range(n):
        rgb = np.zeros_like(prev_outputs[0][0])
        tir = np.zeros_like(prev_outputs[0][1])
        for j in range(n):
            for idx in np.ndindex(rgb.shape):
                rgb[idx] += gates[j][i] * prev_outputs[j][0][idx]
                tir[idx] += gates[j][i] * prev_outputs[j][1][idx]
        result.append((rgb, tir))
    return result


def unit(i, rgb, tir, layer, cfg):
    """One fusion unit from a LayerParams-like object, via the loop oracles above."""
    if i == 0:
        return (seu(rgb, layer.seu_rgb.gamma, layer.seu_rgb.beta, cfg.G, cfg.eps),
                seu(tir, layer.seu_tir.gamma, layer.seu_tir.beta, cfg.G, cfg.eps))
    if i == 1:
        return ceu(rgb, layer.ceu_rgb.w), ceu(tir, layer.ceu_tir.w)
    if i == 2:
        p = layer.cmeu_r2t
        return rgb, cmeu(tir, rgb, p.norm_scale, p.norm_shift, p.Wq, p.Wk, p.Wv, p.Wo, cfg.eps)
    p = layer.cmeu_t2r
    return cmeu(rgb, tir, p.norm_scale, p.norm_shift, p.Wq, p.Wk, p.Wv, p.Wo, cfg.eps), tir


def han(rgb, tir, params, cfg, gates_override=None):
    """Step-by-step composition of the whole network out of the loop oracles.

    Returns ``(fused, gates)``. ``gates_override`` replaces every router.
    """
    L, N = cfg.L, cfg.N
    gates = np.zeros((L, N, N))
    inputs = [(rgb, tir)] * N
    outputs = None
    for l in range(L):
        layer = params.layers[l]
        if l > 0:
            inputs = aggregate(outputs, gates[l - 1])
        outputs = [unit(i, inputs[i][0], inputs[i][1], layer, cfg) for i in range(N)]
        for j in range(N):
            if gates_override is not None:
                gates[l, j] = gates_override[l][j]
            else:
                src = outputs[j] if cfg.router_tap == "output" else inputs[j]
                r = layer.routers[j]
                gates[l, j] = router(src[0], src[1], r.W1, r.b1, r.W2, r.b2)
    fused = np.zeros_like(rgb)
    for j in range(N):
        weight = math.fsum(gates[L - 1, j]) / N
        fused += weight * outputs[j][0] + weight * outputs[j][1]
    return fused, gates


def count_params(params) -> int:
    """Tally entries by walking the parameter structure."""
    total = 0
    for layer in params.layers:
        blocks = [layer.seu_rgb, layer.seu_tir, layer.ceu_rgb, layer.ceu_tir,
                  layer.cmeu_r2t, layer.cmeu_t2r, *layer.routers]
        for block in blocks:
            for value in vars(block).values():
                total += int(np.prod(np.shape(value)))
    return total
