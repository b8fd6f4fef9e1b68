"""Per-unit soft routers.

A router pools its unit's bimodal features (average and max over space),
runs a two-layer perceptron and squashes with ``relu(tanh(.))``, giving
``N`` gates in ``[0, 1)``: the weights on the unit's edges to each unit of
the next layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ShapeError

# tanh rounds to exactly 1.0 for inputs above ~19; keep gates strictly below 1
GATE_CEILING = np.nextafter(1.0, 0.0)


@dataclass
class RouterParams:
    W1: np.ndarray  # (4C, H_r)
    b1: np.ndarray  # (H_r,)
    W2: np.ndarray  # (H_r, N)
    b2: np.ndarray  # (N,)


def router_forward_cached(rgb, tir, p: RouterParams):
    rgb = kernels.as_real(rgb)
    tir = kernels.as_real(tir)
    if rgb.shape != tir.shape or rgb.ndim != 3:
        raise ShapeError(f"router inputs must share a C x H x W shape, got {rgb.shape} and {tir.shape}")
    f = np.concatenate([rgb, tir], axis=0)
    if p.W1.shape[0] != 2 * f.shape[0]:
        raise ShapeError(f"router expects {p.W1.shape[0] // 4} channels per stream, got {rgb.shape[0]}")
    f_r = np.concatenate([kernels.spatial_pool(f, "avg"), kernels.spatial_pool(f, "max")])
    pre = kernels.matmul(f_r[None, :], p.W1)[0] + p.b1
    hidden = np.maximum(pre, 0.0)
    o = kernels.matmul(hidden[None, :], p.W2)[0] + p.b2
    t = np.tanh(o)
    gates = np.minimum(np.maximum(t, 0.0), GATE_CEILING)
    return gates, (f, f_r, pre, hidden, o, t, p)


def router_forward(rgb, tir, p: RouterParams) -> np.ndarray:
    return router_forward_cached(rgb, tir, p)[0]


def router_backward(ggates, cache):
    """Returns ``(g_rgb, g_tir, RouterParams gradient)``. ReLU'(0) is taken as 0."""
    f, f_r, pre, hidden, o, t, p = cache
    go = np.where((o > 0.0) & (t < GATE_CEILING), ggates * (1.0 - t * t), 0.0)
    gW2 = np.outer(hidden, go)
    gh = p.W2 @ go
    gpre = np.where(pre > 0.0, gh, 0.0)
    gW1 = np.outer(f_r, gpre)
    gfr = p.W1 @ gpre
    c2, H, W = f.shape
    n = H * W
    gf = np.repeat(gfr[:c2] / n, n).reshape(c2, n)
    idx = kernels.spatial_argmax(f)
    gf[np.arange(c2), idx] += gfr[c2:]
    gf = gf.reshape(f.shape)
    C = c2 // 2
    return gf[:C], gf[C:], RouterParams(gW1, gpre, gW2, go)


def route_layer(outputs, routers) -> np.ndarray:
    """Gate matrix for one layer boundary: row ``j`` is router ``j`` on pair ``j``."""
    if len(outputs) != len(routers):
        raise ShapeError(f"{len(outputs)} unit outputs but {len(routers)} routers")
    return np.stack([router_forward(pair.rgb, pair.tir, r) for pair, r in zip(outputs, routers)])
