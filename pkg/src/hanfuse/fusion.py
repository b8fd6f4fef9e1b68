"""The four attention fusion units.

Each unit has a forward that returns only the output and a ``*_cached``
variant returning ``(output, cache)`` for the matching ``*_backward``.
Feature maps are float64 arrays of shape ``(C, H, W)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError
from .kernels import sigmoid


class ModalityPair(NamedTuple):
    rgb: np.ndarray
    tir: np.ndarray

    def scaled(self, s: float) -> "ModalityPair":
        return ModalityPair(s * self.rgb, s * self.tir)

    def __add__(self, other):  # elementwise, not tuple concatenation
        return ModalityPair(self.rgb + other.rgb, self.tir + other.tir)

    def dot(self, other) -> float:
        return float(np.vdot(self.rgb, other.rgb) + np.vdot(self.tir, other.tir))


def zero_pair(shape) -> ModalityPair:
    return ModalityPair(np.zeros(shape), np.zeros(shape))


@dataclass
class SeuParams:
    gamma: np.ndarray  # (G,)
    beta: np.ndarray  # (G,)


@dataclass
class CeuParams:
    w: np.ndarray  # (k,)


@dataclass
class CmeuParams:
    norm_scale: np.ndarray  # (C,)
    norm_shift: np.ndarray  # (C,)
    Wq: np.ndarray  # (C, c)
    Wk: np.ndarray  # (C, c)
    Wv: np.ndarray  # (C, c)
    Wo: np.ndarray  # (c, C)

    @property
    def d_k(self) -> int:
        return self.Wq.shape[1]


def _feature(f, what="feature map"):
    f = kernels.as_real(f)
    if f.ndim != 3:
        raise ShapeError(f"{what} must be C x H x W, got shape {f.shape}")
    return f


# -- spatial enhancement ---------------------------------------------------

def seu_forward_cached(f, p: SeuParams, G: int, eps: float = 1e-5):
    f = _feature(f)
    C, H, W = f.shape
    if G <= 0 or C % G:
        raise ConfigError(f"G must divide C (G={G}, C={C})")
    if p.gamma.shape != (G,) or p.beta.shape != (G,):
        raise ShapeError(f"SEU params must have length G={G}")
    x = f.reshape(G, C // G, H * W)
    fg = x.mean(axis=2)  # (G, C/G) per-group channel means
    a = np.einsum("gc,gcn->gn", fg, x)
    a_hat = kernels.normalize_spatial(a, eps)
    att = sigmoid(p.gamma[:, None] * a_hat + p.beta[:, None])
    out = (att[:, None, :] * x).reshape(C, H, W)
    return out, (x, fg, a, a_hat, att, p, eps, f.shape)


def seu_forward(f, p: SeuParams, G: int, eps: float = 1e-5):
    return seu_forward_cached(f, p, G, eps)[0]


def seu_backward(gout, cache):
    x, fg, a, a_hat, att, p, eps, shape = cache
    G, cg, n = x.shape
    go = gout.reshape(G, cg, n)
    gatt = (go * x).sum(axis=1)
    gx = go * att[:, None, :]
    gt = gatt * att * (1.0 - att)
    grad = SeuParams(gamma=(gt * a_hat).sum(axis=1), beta=gt.sum(axis=1))
    ga = kernels.normalize_spatial_backward(a, gt * p.gamma[:, None], eps)
    gfg = np.einsum("gcn,gn->gc", x, ga)
    gx += fg[:, :, None] * ga[:, None, :]
    gx += gfg[:, :, None] / n
    return gx.reshape(shape), grad


# -- channel enhancement ---------------------------------------------------

def ceu_forward_cached(f, p: CeuParams):
    f = _feature(f)
    g = kernels.spatial_pool(f, "avg")
    z = kernels.conv1d_same(g, p.w)
    att = sigmoid(z)
    return att[:, None, None] * f, (f, g, att, p)


def ceu_forward(f, p: CeuParams):
    return ceu_forward_cached(f, p)[0]


def ceu_backward(gout, cache):
    f, g, att, p = cache
    C, H, W = f.shape
    gatt = (gout * f).reshape(C, -1).sum(axis=1)
    gz = gatt * att * (1.0 - att)
    gg, gw = kernels.conv1d_same_backward(g, p.w, gz)
    gf = gout * att[:, None, None] + gg[:, None, None] / (H * W)
    return gf, CeuParams(w=gw)


# -- cross-modal enhancement -----------------------------------------------

def _channel_norm(x, p: CmeuParams, eps):
    xh = kernels.normalize_spatial(x, eps)
    return xh * p.norm_scale[:, None] + p.norm_shift[:, None], xh


def cmeu_forward_cached(f_query, f_kv, p: CmeuParams, eps: float = 1e-5):
    """Query stream enhanced by attention over the key/value stream, plus residual.

    ``cmeu_forward(tir, rgb, p)`` is the RGB-to-thermal unit;
    ``cmeu_forward(rgb, tir, p)`` is thermal-to-RGB.
    """
    f_query = _feature(f_query, "query")
    f_kv = _feature(f_kv, "key/value")
    if f_query.shape != f_kv.shape:
        raise ShapeError(f"query {f_query.shape} and key/value {f_kv.shape} differ")
    C, H, W = f_query.shape
    if p.Wq.shape[0] != C:
        raise ShapeError(f"CMEU projections expect C={p.Wq.shape[0]}, got {C}")
    xq_raw = f_query.reshape(C, H * W)
    xkv_raw = f_kv.reshape(C, H * W)
    xq, xq_hat = _channel_norm(xq_raw, p, eps)
    xkv, xkv_hat = _channel_norm(xkv_raw, p, eps)
    scale = 1.0 / np.sqrt(p.d_k)
    q = kernels.matmul(xq.T, p.Wq)
    k = kernels.matmul(xkv.T, p.Wk)
    v = kernels.matmul(xkv.T, p.Wv)
    att = kernels.softmax_rows(kernels.matmul(q, k.T) * scale)
    z = kernels.matmul(att, v)
    proj = kernels.matmul(z, p.Wo)  # (HW, C)
    out = f_query + proj.T.reshape(C, H, W)
    cache = (xq_raw, xkv_raw, xq, xkv, xq_hat, xkv_hat, q, k, v, att, z, p, eps, scale)
    return out, cache


def cmeu_forward(f_query, f_kv, p: CmeuParams, eps: float = 1e-5):
    return cmeu_forward_cached(f_query, f_kv, p, eps)[0]


def cmeu_backward(gout, cache):
    """Returns ``(g_query, g_kv, CmeuParams gradient)``."""
    xq_raw, xkv_raw, xq, xkv, xq_hat, xkv_hat, q, k, v, att, z, p, eps, scale = cache
    C = xq.shape[0]
    shape = gout.shape
    gp = gout.reshape(C, -1).T
    gWo = kernels.matmul(z.T, gp)
    gz = kernels.matmul(gp, p.Wo.T)
    gatt = kernels.matmul(gz, v.T)
    gv = kernels.matmul(att.T, gz)
    gs = kernels.softmax_rows_backward(att, gatt) * scale
    gq = kernels.matmul(gs, k)
    gk = kernels.matmul(gs.T, q)
    gWq = kernels.matmul(xq, gq)
    gWk = kernels.matmul(xkv, gk)
    gWv = kernels.matmul(xkv, gv)
    gxq = kernels.matmul(p.Wq, gq.T)
    gxkv = kernels.matmul(p.Wk, gk.T) + kernels.matmul(p.Wv, gv.T)
    g_scale = (gxq * xq_hat).sum(axis=1) + (gxkv * xkv_hat).sum(axis=1)
    g_shift = gxq.sum(axis=1) + gxkv.sum(axis=1)
    g_query = kernels.normalize_spatial_backward(xq_raw, gxq * p.norm_scale[:, None], eps)
    g_kv = kernels.normalize_spatial_backward(xkv_raw, gxkv * p.norm_scale[:, None], eps)
    g_query = g_query.reshape(shape) + gout
    grad = CmeuParams(g_scale, g_shift, gWq, gWk, gWv, gWo)
    return g_query, g_kv.reshape(shape), grad
