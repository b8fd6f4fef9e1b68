"""Property and verification suites shared by ``hanfuse check`` and the tests.

Each ``measure_*`` function runs one suite and returns the measured
quantities; :func:`run_suites` compares them to fixed thresholds.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import reference
from .engine import (
    HanConfig,
    aggregate_inputs,
    forward_cached,
    han_forward,
    han_forward_static,
    init_params,
    param_count,
    random_params,
    zero_router_params,
)
from .formats import decode_params, decode_tensor, dump_traces, encode_params, encode_tensor, export_dot
from .fusion import CeuParams, CmeuParams, ModalityPair, SeuParams, ceu_forward, cmeu_forward, seu_forward
from .gradcheck import backward, max_relative_error, network_fd_gradient
from .routing import RouterParams, router_forward
from .synth import DEFAULT_COUNTS, make_dataset
from .train import TrainConfig, train_demo

# Published HAN sizes for the layer ablation (parameters, millions).
PUBLISHED_PARAMS_M = {2: 5.26, 3: 7.89, 4: 10.52}
PUBLISHED_ROUTER_FREE_PARAMS_M = {1: 0.52, 3: 1.57}

GRAD_CONFIG = HanConfig(C=16, H=4, W=4, G=8, c=8, L=2)
DEMO_CONFIG = HanConfig(C=16, H=8, W=8, L=3)
DEMO_TRAIN = TrainConfig(step_size=0.05, steps=200, seed=0)
DEMO_DATA_SEED = 0


def _rand_pair(rng, shape, scale=1.0):
    return ModalityPair(scale * rng.standard_normal(shape), scale * rng.standard_normal(shape))


def _rand_router(rng, C, Hr, N, scale):
    return RouterParams(scale * rng.standard_normal((4 * C, Hr)), scale * rng.standard_normal(Hr),
                        scale * rng.standard_normal((Hr, N)), scale * rng.standard_normal(N))


def measure_gate_range(draws: int = 10_000, seed: int = 0) -> dict:
    """Router gates over random inputs and parameters spanning several magnitudes."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    lo, hi = np.inf, -np.inf
    for _ in range(draws):
        C = int(rng.choice([2, 4, 8]))
        H, W = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        pair = _rand_pair(rng, (C, H, W), 10.0 ** rng.uniform(-2, 2))
        p = _rand_router(rng, C, max(C, 4), 4, 10.0 ** rng.uniform(-2, 1.5))
        g = router_forward(pair.rgb, pair.tir, p)
        lo, hi = min(lo, g.min()), max(hi, g.max())
    # zero MLP: all gates and every routed (layer > 0) input must vanish
    cfg = HanConfig(C=8, H=3, W=3, L=3, G=4)
    zero_gate_max = zero_input_max = 0.0
    for s in range(20):
        params = zero_router_params(random_params(cfg, s))
        _, cache = forward_cached(_rand_pair(rng, cfg.shape), params, cfg)
        zero_gate_max = max(zero_gate_max, float(np.abs(cache.gates).max()))
        for layer_inputs in cache.inputs[1:]:
            for pair in layer_inputs:
                zero_input_max = max(zero_input_max, float(np.abs(pair.rgb).max()), float(np.abs(pair.tir).max()))
    return {"draws": draws, "min_gate": float(lo), "max_gate": float(hi), "zero_mlp_max_gate": zero_gate_max,
            "zero_mlp_max_routed_input": zero_input_max, "seconds": time.perf_counter() - t0}


def measure_oracle_equivalence(instances: int = 100, seed: int = 1) -> dict:
    """Largest elementwise gap between each vectorized unit and its loop oracle."""
    rng = np.random.default_rng(seed)
    worst = dict.fromkeys(("seu", "ceu", "cmeu", "router", "aggregate"), 0.0)
    for _ in range(instances):
        C, G = 16, 8
        H, W = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        f = rng.standard_normal((C, H, W))
        sp = SeuParams(rng.uniform(-1, 1, G), rng.uniform(-1, 1, G))
        got = seu_forward(f, sp, G)
        worst["seu"] = max(worst["seu"], float(np.abs(got - reference.seu(f, sp.gamma, sp.beta, G)).max()))

        w = rng.uniform(-1, 1, 3)
        worst["ceu"] = max(worst["ceu"], float(np.abs(ceu_forward(f, CeuParams(w)) - reference.ceu(f, w)).max()))

        C2, c = 8, 4
        fq, fkv = rng.standard_normal((C2, 3, 3)), rng.standard_normal((C2, 3, 3))
        mp = CmeuParams(rng.uniform(0.5, 1.5, C2), rng.uniform(-0.5, 0.5, C2), rng.uniform(-0.5, 0.5, (C2, c)),
                        rng.uniform(-0.5, 0.5, (C2, c)), rng.uniform(-0.5, 0.5, (C2, c)), rng.uniform(-0.5, 0.5, (c, C2)))
        ref = reference.cmeu(fq, fkv, mp.norm_scale, mp.norm_shift, mp.Wq, mp.Wk, mp.Wv, mp.Wo)
        worst["cmeu"] = max(worst["cmeu"], float(np.abs(cmeu_forward(fq, fkv, mp) - ref).max()))

        pair = _rand_pair(rng, (8, 4, 4))
        rp = _rand_router(rng, 8, 8, 4, 0.5)
        ref = reference.router(pair.rgb, pair.tir, rp.W1, rp.b1, rp.W2, rp.b2)
        worst["router"] = max(worst["router"], float(np.abs(router_forward(pair.rgb, pair.tir, rp) - ref).max()))

        prev = [_rand_pair(rng, (4, 2, 3)) for _ in range(4)]
        gates = rng.uniform(0, 1, (4, 4))
        got = aggregate_inputs(prev, gates)
        ref = reference.aggregate(prev, gates)
        gap = max(float(np.abs(g.rgb - r[0]).max()) for g, r in zip(got, ref))
        gap = max(gap, max(float(np.abs(g.tir - r[1]).max()) for g, r in zip(got, ref)))
        worst["aggregate"] = max(worst["aggregate"], gap)
    worst["instances"] = instances
    return worst


def kink_margin(cache) -> float:
    """Distance of the forward pass from the non-smooth points of the network.

    The minimum over router pre-activations (hidden ReLU and output ReLU) and
    over the gap between the two largest values of every max-pooled channel.
    """
    margin = np.inf
    for layer in cache.router_caches:
        for f, _, pre, _, o, _, _ in layer:
            margin = min(margin, float(np.abs(pre).min()), float(np.abs(o).min()))
            flat = np.sort(f.reshape(f.shape[0], -1), axis=1)
            if flat.shape[1] > 1:
                margin = min(margin, float((flat[:, -1] - flat[:, -2]).min()))
    return margin


def gradient_case(seed: int, cfg: HanConfig = GRAD_CONFIG):
    """Random parameters in [-0.5, 0.5], a random input pair and probe gradient."""
    rng = np.random.default_rng(10_000 + seed)
    params = random_params(cfg, seed, 0.5)
    return params, _rand_pair(rng, cfg.shape), rng.standard_normal(cfg.shape)


def measure_gradients(n_seeds: int = 10, cfg: HanConfig = GRAD_CONFIG, min_margin: float = 1e-3,
                      h: float = 1e-5, dtype=np.longdouble) -> dict:
    """Analytic vs central-difference gradients on the first seeds clear of kinks."""
    t0 = time.perf_counter()
    errors, used, skipped = [], [], []
    seed = 0
    while len(used) < n_seeds:
        params, pair, upstream = gradient_case(seed, cfg)
        _, cache = forward_cached(pair, params, cfg)
        if kink_margin(cache) < min_margin:
            skipped.append(seed)
        else:
            analytic, _ = backward(cache, upstream)
            numeric = network_fd_gradient(pair, params, cfg, upstream, h=h, dtype=dtype)
            errors.append(max_relative_error(analytic, numeric))
            used.append(seed)
        seed += 1
    return {"seeds": used, "skipped": skipped, "max_rel_errors": errors,
            "max_rel_error": max(errors), "seconds": time.perf_counter() - t0}


def measure_table3(C: int = 16, H: int = 8, W: int = 8) -> dict:
    counts = {L: param_count(HanConfig(C=C, H=H, W=W, L=L)) for L in (1, 2, 3, 4)}
    free = {L: param_count(HanConfig(C=C, H=H, W=W, L=L), routers=False) for L in (1, 2, 3, 4)}
    return {"param_count": counts, "router_free": free,
            "per_layer": {L: counts[L] / L for L in counts},
            "router_free_ratio_3_1": free[3] / free[1],
            "published_params_M": PUBLISHED_PARAMS_M,
            "published_router_free_M": PUBLISHED_ROUTER_FREE_PARAMS_M}


def measure_static_edges(cfg: HanConfig = DEMO_CONFIG, inputs: int = 8, seed: int = 2) -> dict:
    rng = np.random.default_rng(seed)
    params = init_params(cfg, seed)
    static_sets, dynamic_sets = set(), set()
    for _ in range(inputs):
        pair = _rand_pair(rng, cfg.shape, 10.0 ** rng.uniform(-1, 1))
        _, trace = han_forward_static(pair, params, cfg, return_trace=True)
        static_sets.add(tuple(trace.active_edges))
        _, trace = han_forward(pair, params, cfg)
        dynamic_sets.add(tuple(trace.active_edges))
    return {"static_edge_sets": len(static_sets), "dynamic_edge_sets": len(dynamic_sets)}


def measure_training(cfg: HanConfig = DEMO_CONFIG, tcfg: TrainConfig = DEMO_TRAIN,
                     data_seed: int = DEMO_DATA_SEED) -> dict:
    t0 = time.perf_counter()
    data = make_dataset(DEFAULT_COUNTS, cfg, data_seed)
    result = train_demo(data, cfg, tcfg)
    gap = float(np.abs(result.gate_means["noisy-tir"] - result.gate_means["noisy-rgb"]).sum()) if result.ok else float("nan")
    return {"initial_loss": result.losses[0], "final_loss": result.losses[-1],
            "loss_ratio": result.losses[-1] / result.losses[0], "gate_l1_noisy_tir_vs_rgb": gap,
            "diverged_at": result.diverged_at, "seconds": time.perf_counter() - t0, "result": result}


def measure_replay(cfg: HanConfig = HanConfig(C=8, H=4, W=4, L=3, G=4), frames: int = 5, seed: int = 3) -> dict:
    """Replaying gates (in memory and through the JSON trace) and binary round trips."""
    import json

    from .formats import trace_from_dict

    rng = np.random.default_rng(seed)
    params = random_params(cfg, seed)
    replay_ok = json_ok = tensor_ok = params_ok = dot_ok = True
    for _ in range(frames):
        pair = _rand_pair(rng, cfg.shape)
        fused, trace = han_forward(pair, params, cfg)
        replayed, _ = han_forward(pair, params, cfg, replay=trace)
        replay_ok &= fused.tobytes() == replayed.tobytes()
        doc = json.loads(dump_traces(cfg, [trace]))
        loaded = trace_from_dict(doc["frames"][0], cfg)
        again, _ = han_forward(pair, params, cfg, replay=loaded)
        json_ok &= fused.tobytes() == again.tobytes()
        dot_ok &= export_dot(trace) == export_dot(loaded)
        t, _ = decode_tensor(encode_tensor(pair.rgb))
        tensor_ok &= t.tobytes() == pair.rgb.tobytes()
    reloaded = decode_params(encode_params(params))
    params_ok = all(a.tobytes() == b.tobytes() for (_, a), (_, b) in zip(params.named_arrays(), reloaded.named_arrays()))
    return {"replay_bit_exact": bool(replay_ok), "json_replay_bit_exact": bool(json_ok),
            "tensor_round_trip": bool(tensor_ok), "params_round_trip": bool(params_ok), "dot_deterministic": bool(dot_ok)}


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str


def run_suites(level: str = "fast") -> list[SuiteResult]:
    full = level == "full"
    out = []

    g = measure_gate_range(10_000 if full else 1_000)
    ok = 0.0 <= g["min_gate"] and g["max_gate"] < 1.0 and g["zero_mlp_max_gate"] == 0.0 \
        and g["zero_mlp_max_routed_input"] == 0.0
    out.append(SuiteResult("gate-range", ok, f"{g['draws']} draws, gates in [{g['min_gate']:.3g}, {g['max_gate']!r}]"))

    o = measure_oracle_equivalence(100 if full else 10)
    ok = all(o[k] < 1e-12 for k in ("seu", "ceu", "router", "aggregate")) and o["cmeu"] < 1e-10
    out.append(SuiteResult("oracle-equivalence", ok,
                           ", ".join(f"{k} {o[k]:.1e}" for k in ("seu", "ceu", "cmeu", "router", "aggregate"))))

    t = measure_table3()
    per_layer = set(t["per_layer"].values())
    ok = len(per_layer) == 1 and t["router_free_ratio_3_1"] == 3
    out.append(SuiteResult("table3-structure", ok,
                           f"params/L constant={len(per_layer) == 1}, router-free L3:L1={t['router_free_ratio_3_1']:g}; "
                           f"absolute match to published {PUBLISHED_PARAMS_M[3]}M not attempted "
                           "(fusion-stage C, H, W unpublished)"))

    r = measure_replay()
    out.append(SuiteResult("trace-replay", all(r.values()), ", ".join(f"{k}={v}" for k, v in r.items())))

    s = measure_static_edges()
    out.append(SuiteResult("static-edges", s["static_edge_sets"] == 1,
                           f"{s['static_edge_sets']} static edge set(s), {s['dynamic_edge_sets']} dynamic"))

    if full:
        gr = measure_gradients()
        out.append(SuiteResult("gradient-fd", gr["max_rel_error"] < 1e-5,
                               f"max rel error {gr['max_rel_error']:.2e} over seeds {gr['seeds']}"))
        tr = measure_training()
        ok = tr["diverged_at"] is None and tr["loss_ratio"] <= 0.5 and tr["gate_l1_noisy_tir_vs_rgb"] > 0.05
        out.append(SuiteResult("train-demo", ok, f"loss ratio {tr['loss_ratio']:.3f}, "
                               f"gate L1 gap {tr['gate_l1_noisy_tir_vs_rgb']:.3f}"))
    return out
