"""Reverse-mode gradients of the full network and a finite-difference oracle."""

from __future__ import annotations

import numpy as np

from . import kernels
from .engine import (
    ForwardCache,
    HanConfig,
    HanParams,
    _dispatch_backward,
    _dispatch_cached,
    aggregate_inputs,
    forward_cached,
)
from .errors import ShapeError, UsageError
from .fusion import ModalityPair
from .routing import router_backward, router_forward

# A gradient set is a HanParams whose arrays hold d(loss)/d(parameter).
GradientSet = HanParams


def backward(cache: ForwardCache | None, upstream):
    """Gradients of ``sum(upstream * fused)`` for the forward pass in ``cache``.

    Returns ``(GradientSet, ModalityPair)`` with the parameter gradients and the
    gradients with respect to the raw (rgb, tir) input. When the forward ran on
    replayed gates, the gates are constants and router gradients are zero.
    """
    if cache is None:
        raise UsageError("backward needs the cache of a matching forward pass (use forward_cached)")
    cfg, params = cache.cfg, cache.params
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != cfg.shape:
        raise ShapeError(f"upstream gradient shape {upstream.shape} != {cfg.shape}")
    grads = params.zeros_like()
    L, N = cfg.L, cfg.N
    last = cache.outputs[-1]

    # fused = sum_j mean(gates[L-1, j]) * (rgb_j + tir_j)
    weights = cache.gates[-1].mean(axis=1)
    g_out = [[None] * N for _ in range(L)]
    g_gates = np.zeros_like(cache.gates)
    for j in range(N):
        g_out[-1][j] = ModalityPair(weights[j] * upstream, weights[j] * upstream)
        g_gates[-1, j, :] = (np.vdot(upstream, last[j].rgb) + np.vdot(upstream, last[j].tir)) / N

    g_raw = ModalityPair(np.zeros(cfg.shape), np.zeros(cfg.shape))
    for l in reversed(range(L)):
        glp = grads.layers[l]
        g_in = [ModalityPair(np.zeros(cfg.shape), np.zeros(cfg.shape)) for _ in range(N)]
        if cache.routed:
            for j in range(N):
                g_rgb, g_tir, gr = router_backward(g_gates[l, j], cache.router_caches[l][j])
                for name in ("W1", "b1", "W2", "b2"):
                    getattr(glp.routers[j], name)[...] += getattr(gr, name)
                tapped = ModalityPair(g_rgb, g_tir)
                if cfg.router_tap == "output":
                    g_out[l][j] = g_out[l][j] + tapped
                else:
                    g_in[j] = g_in[j] + tapped
        for i in range(N):
            g_in[i] = g_in[i] + _dispatch_backward(i, g_out[l][i], cache.unit_caches[l][i], glp)
        if l == 0:
            for i in range(N):
                g_raw = g_raw + g_in[i]
            continue
        prev = cache.outputs[l - 1]
        gates = cache.gates[l - 1]
        for j in range(N):
            acc = ModalityPair(np.zeros(cfg.shape), np.zeros(cfg.shape))
            for i in range(N):
                acc = acc + g_in[i].scaled(gates[j, i])
                g_gates[l - 1, j, i] = g_in[i].dot(prev[j])
            g_out[l - 1][j] = acc
    return grads, g_raw


def loss_and_grad(pair, params: HanParams, cfg: HanConfig, upstream):
    """Linear probe loss ``sum(upstream * fused)`` with its parameter gradient."""
    fused, cache = forward_cached(pair, params, cfg)
    grads, _ = backward(cache, upstream)
    return float(np.vdot(upstream, fused)), grads


def fd_gradient(loss_fn, params, h: float = 1e-5):
    """Central differences ``(loss(p + h) - loss(p - h)) / 2h`` for every entry.

    ``params`` is a HanParams (result is a GradientSet) or a plain array.
    Entries are perturbed in place and restored bit-exactly.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    if isinstance(params, np.ndarray):
        arrays = [params]
        out = [np.zeros_like(params, dtype=np.float64)]
        result = out[0]
    else:
        result = params.zeros_like()
        arrays = [a for _, a in params.named_arrays()]
        out = [a for _, a in result.named_arrays()]
    for a, g in zip(arrays, out):
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up = loss_fn(params)
            flat[idx] = orig - h
            down = loss_fn(params)
            flat[idx] = orig
            gflat[idx] = (up - down) / (2.0 * h)
    return result


_UNIT_OF_BLOCK = {"seu_rgb": 0, "seu_tir": 0, "ceu_rgb": 1, "ceu_tir": 1, "cmeu_r2t": 2, "cmeu_t2r": 3}


def _probe_after_change(base: ForwardCache, params, cfg, l, block, upstream):
    """Probe loss with only the parameters of ``block`` in layer ``l`` changed.

    Everything upstream of that block is taken from ``base``; the block and
    all later layers are recomputed.
    """
    lp = params.layers[l]
    outs = list(base.outputs[l])
    gates = base.gates.copy()
    if block.startswith("router"):
        j = int(block[len("router"):])
        tap = outs[j] if cfg.router_tap == "output" else base.inputs[l][j]
        gates[l, j] = router_forward(tap.rgb, tap.tir, lp.routers[j])
    else:
        i = _UNIT_OF_BLOCK[block]
        outs[i] = _dispatch_cached(i, base.inputs[l][i], lp, cfg)[0]
        if cfg.router_tap == "output":
            gates[l, i] = router_forward(outs[i].rgb, outs[i].tir, lp.routers[i])
    for l2 in range(l + 1, cfg.L):
        lp2 = params.layers[l2]
        ins = aggregate_inputs(outs, gates[l2 - 1])
        outs = []
        for i in range(cfg.N):
            out = _dispatch_cached(i, ins[i], lp2, cfg)[0]
            outs.append(out)
            tap = out if cfg.router_tap == "output" else ins[i]
            gates[l2, i] = router_forward(tap.rgb, tap.tir, lp2.routers[i])
    return _probe_loss(outs, gates[-1], upstream)


def _probe_loss(outs, last_gates, upstream):
    # sum(upstream * fuse_outputs(outs, last_gates)) regrouped per unit: the
    # per-unit dot products stay fixed when only the gates move, so rounding
    # noise no longer swamps gradients of ~1e-8
    weights = last_gates.mean(axis=1)
    u = upstream.ravel()
    total = upstream.dtype.type(0)
    for w, out in zip(weights, outs):
        total += w * (np.dot(u, out.rgb.ravel()) + np.dot(u, out.tir.ravel()))
    return total


def network_fd_gradient(pair, params: HanParams, cfg: HanConfig, upstream, h: float = 1e-5,
                        dtype=np.longdouble) -> GradientSet:
    """Central differences of ``sum(upstream * fused)`` for every network parameter.

    Evaluated on the numpy kernels at ``dtype``; the default extended precision
    keeps rounding noise (~eps * |loss| / h) well below the gradients being
    checked. Each perturbation recomputes only the part of the network
    downstream of the perturbed block.
    """
    with kernels.use_backend("numpy"):
        work = params.map(lambda a: a.astype(dtype))
        x = ModalityPair(np.asarray(pair[0]).astype(dtype), np.asarray(pair[1]).astype(dtype))
        u = np.asarray(upstream).astype(dtype)
        hh = dtype(h)
        _, base = forward_cached(x, work, cfg)
        result = params.zeros_like()
        for (name, a), (_, g) in zip(work.named_arrays(), result.named_arrays()):
            layer, block = name.split(".")[:2]
            l = int(layer[len("layer"):])
            flat, gflat = a.reshape(-1), g.reshape(-1)
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + hh
                up = _probe_after_change(base, work, cfg, l, block, u)
                flat[idx] = orig - hh
                down = _probe_after_change(base, work, cfg, l, block, u)
                flat[idx] = orig
                gflat[idx] = (up - down) / (2 * hh)
    return result


def relative_errors(analytic, numeric, floor: float = 1e-8) -> np.ndarray:
    a = analytic.flat() if isinstance(analytic, HanParams) else np.ravel(analytic)
    b = numeric.flat() if isinstance(numeric, HanParams) else np.ravel(numeric)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def max_relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    return float(relative_errors(analytic, numeric, floor).max())
