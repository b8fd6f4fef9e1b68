"""Plain gradient descent on the fused-output MSE over a synthetic dataset."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import HanConfig, HanParams, forward_cached, init_params
from .gradcheck import backward


@dataclass
class TrainConfig:
    step_size: float = 0.05
    steps: int = 200
    seed: int = 0

    def __post_init__(self):
        if not self.step_size >= 0:
            raise ValueError("step_size must be non-negative")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")


@dataclass
class TrainResult:
    losses: list[float]
    smoothed: list[float]  # running minimum of ``losses``
    gate_means: dict[str, np.ndarray]  # class -> mean L x N x N gates after training
    params: HanParams
    diverged_at: int | None = None
    initial_gate_means: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.diverged_at is None


def dataset_loss(scenarios, params: HanParams, cfg: HanConfig, with_grad: bool = True):
    """Mean over scenarios of the per-element MSE; optionally its gradient."""
    total = 0.0
    grads = params.zeros_like() if with_grad else None
    n = len(scenarios)
    for sc in scenarios:
        fused, cache = forward_cached((sc.rgb, sc.tir), params, cfg)
        err = fused - sc.target
        total += float(np.mean(err * err)) / n
        if with_grad:
            g, _ = backward(cache, 2.0 * err / (err.size * n))
            for (_, dst), (_, src) in zip(grads.named_arrays(), g.named_arrays()):
                dst += src
    return total, grads


def mean_gates(scenarios, params: HanParams, cfg: HanConfig) -> dict[str, np.ndarray]:
    sums: dict[str, list] = {}
    for sc in scenarios:
        _, cache = forward_cached((sc.rgb, sc.tir), params, cfg)
        sums.setdefault(sc.cls, []).append(cache.gates)
    return {cls: np.mean(g, axis=0) for cls, g in sums.items()}


def train_demo(scenarios, cfg: HanConfig, tcfg: TrainConfig, params: HanParams | None = None) -> TrainResult:
    """Full-batch gradient descent; stops early if the loss stops being finite."""
    if len({sc.cls for sc in scenarios}) < 2:
        raise ValueError("train_demo needs at least two scenario classes")
    params = init_params(cfg, tcfg.seed) if params is None else params.copy()
    initial = mean_gates(scenarios, params, cfg)
    losses = []
    diverged = None
    # overflow on the way to a non-finite loss is reported through diverged_at
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(tcfg.steps + 1):
            loss, grads = dataset_loss(scenarios, params, cfg, with_grad=step < tcfg.steps)
            if not np.isfinite(loss):
                diverged = step
                break
            losses.append(loss)
            if step == tcfg.steps:
                break
            for (_, p), (_, g) in zip(params.named_arrays(), grads.named_arrays()):
                p -= tcfg.step_size * g
    smoothed = list(np.minimum.accumulate(losses)) if losses else []
    gates = mean_gates(scenarios, params, cfg) if diverged is None else {}
    return TrainResult(losses, [float(v) for v in smoothed], gates, params, diverged, initial)
