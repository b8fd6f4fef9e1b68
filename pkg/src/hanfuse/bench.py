"""Forward-pass timing for each kernel backend."""

from __future__ import annotations

import statistics
import time

import numpy as np

from . import kernels
from .engine import HanConfig, han_forward, init_params
from .rng import Rng


def _available(name: str) -> bool:
    try:
        kernels.load_backend(name)
    except ImportError:
        return False
    return True


def time_forward(cfg: HanConfig, runs: int = 30, backend: str | None = None, seed: int = 0) -> dict:
    rng = Rng(seed)
    params = init_params(cfg, seed)
    pair = (rng.normal(1.0, cfg.shape), rng.normal(1.0, cfg.shape))
    with kernels.use_backend(backend or kernels.backend):
        han_forward(pair, params, cfg)  # warm-up, triggers JIT compilation
        samples = []
        for _ in range(runs):
            t0 = time.perf_counter()
            han_forward(pair, params, cfg)
            samples.append(time.perf_counter() - t0)
    return {"backend": backend or kernels.backend, "runs": runs,
            "median_ms": 1e3 * statistics.median(samples), "min_ms": 1e3 * min(samples)}


def time_kernels(n: int = 64, c: int = 32, runs: int = 30, seed: int = 0) -> dict:
    """Median per-call time of each kernel, per available backend."""
    g = np.random.default_rng(seed)
    a, b = g.standard_normal((n, c)), g.standard_normal((c, n))
    s = g.standard_normal((n, n))
    f = g.standard_normal((c, 8, 8))
    x, w = g.standard_normal(c), g.standard_normal(3)
    calls = {
        "matmul": lambda: kernels.matmul(a, b),
        "softmax_rows": lambda: kernels.softmax_rows(s),
        "spatial_pool": lambda: kernels.spatial_pool(f, "max"),
        "conv1d_same": lambda: kernels.conv1d_same(x, w),
        "normalize_spatial": lambda: kernels.normalize_spatial(s),
    }
    out = {}
    for name in kernels.BACKENDS:
        if not _available(name):
            continue
        with kernels.use_backend(name):
            row = {}
            for op, fn in calls.items():
                fn()
                samples = []
                for _ in range(runs):
                    t0 = time.perf_counter()
                    fn()
                    samples.append(time.perf_counter() - t0)
                row[op] = 1e6 * statistics.median(samples)
            out[name] = row
    return out


def compare_backends(cfg: HanConfig, runs: int = 30) -> list[dict]:
    return [time_forward(cfg, runs, name) for name in kernels.BACKENDS if _available(name)]
