"""Command-line interface: ``hanfuse <subcommand> ...``.

Exit codes: 0 success, 1 a check or verification failed, 2 usage, config or
file-format error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import kernels
from .engine import HanConfig, flop_count, han_forward, init_params, param_count
from .errors import ConfigError, FormatError, ShapeError
from .formats import (
    _atomic_write,
    export_dot,
    read_params,
    read_tensor,
    read_trace,
    write_params,
    write_tensor,
    write_trace,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class CliError(Exception):
    def __init__(self, message, code=EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path=None, overrides=(), **defaults) -> HanConfig:
    data = dict(defaults)
    if path:
        try:
            data.update(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {path}: {exc}") from None
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise CliError(f"--set expects key=value, got {item!r}")
        data[key.strip()] = _parse_value(value)
    try:
        return HanConfig.from_dict(data)
    except TypeError as exc:
        raise CliError(f"invalid config: {exc}") from None


def cmd_init(args) -> int:
    cfg = load_config(args.config, args.set)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    params = init_params(cfg)
    write_params(args.out, params, args.dtype)
    print(f"wrote {args.out}")
    print(f"param_count {param_count(cfg)}  (router-free {param_count(cfg, routers=False)})")
    print(f"flop_count  {flop_count(cfg)}  (router-free {flop_count(cfg, routers=False)})")
    return EXIT_OK


def _frame_paths(out: str, n: int) -> list[Path]:
    p = Path(out)
    if n == 1:
        return [p]
    return [p.with_name(f"{p.stem}_{i}{p.suffix}") for i in range(n)]


def _forward_one(job):
    params, cfg, rgb_path, tir_path, replay = job
    rgb, tir = read_tensor(rgb_path), read_tensor(tir_path)
    if rgb.shape != cfg.shape or tir.shape != cfg.shape:
        raise ShapeError(f"inputs {rgb.shape}/{tir.shape} do not match params (C={cfg.C}) / each other")
    return han_forward((rgb, tir), params, cfg, replay=replay)


def cmd_forward(args) -> int:
    if len(args.rgb) != len(args.tir):
        raise CliError("need the same number of --rgb and --tir tensors")
    params = read_params(args.params)
    first = read_tensor(args.rgb[0])
    if first.ndim != 3:
        raise CliError(f"input must be C x H x W, got shape {first.shape}")
    try:
        cfg = params.infer_config(first.shape[1], first.shape[2], router_tap=args.router_tap)
    except ConfigError as exc:
        raise CliError(str(exc)) from None
    replays = [None] * len(args.rgb)
    if args.replay:
        rcfg, frames = read_trace(args.replay)
        if (rcfg.L, rcfg.N) != (cfg.L, cfg.N):
            raise CliError("replay trace does not match the parameter file's layer structure")
        if len(frames) != len(args.rgb):
            raise CliError(f"replay trace has {len(frames)} frame(s), got {len(args.rgb)} input pair(s)")
        replays = frames
    jobs = [(params, cfg, r, t, rp) for r, t, rp in zip(args.rgb, args.tir, replays)]
    if args.jobs > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_forward_one, jobs))
    else:
        results = [_forward_one(j) for j in jobs]
    for path, (fused, _) in zip(_frame_paths(args.out, len(results)), results):
        write_tensor(path, fused, args.dtype)
    traces = [t for _, t in results]
    for t in traces:
        t.threshold = args.threshold
    if args.trace:
        write_trace(args.trace, cfg, traces)
    gates = np.stack([t.gates for t in traces])
    for l in range(cfg.L):
        g = gates[:, l]
        print(f"layer {l}: gates min {g.min():.4f} mean {g.mean():.4f} max {g.max():.4f}")
    return EXIT_OK


def cmd_trace(args) -> int:
    cfg, frames = read_trace(args.trace)
    if args.threshold is not None:
        for f in frames:
            f.threshold = args.threshold
    if not 0 <= args.frame < len(frames):
        raise CliError(f"frame {args.frame} out of range (trace has {len(frames)})")
    trace = frames[args.frame]
    if args.dot:
        _atomic_write(args.dot, export_dot(frames, args.frame).encode("utf-8"))
        print(f"wrote {args.dot}")
    elif args.print_dot:
        sys.stdout.write(export_dot(frames, args.frame))
    print(f"frames {len(frames)}  L={cfg.L} N={cfg.N}  threshold {trace.threshold}")
    print(f"active edges ({len(trace.active_edges)}): {trace.active_edges}")
    return EXIT_OK


def cmd_check(args) -> int:
    from .checks import run_suites

    failures = []
    if args.params:
        try:
            read_params(args.params)
            print(f"PASS params-file: {args.params} loads")
        except (FormatError, OSError) as exc:
            print(f"FAIL params-file: format error: {exc}")
            failures.append("params-file")
    for suite in run_suites(args.level):
        print(f"{'PASS' if suite.passed else 'FAIL'} {suite.name}: {suite.detail}")
        if not suite.passed:
            failures.append(suite.name)
    if failures:
        print(f"failed: {', '.join(failures)}")
        return EXIT_FAIL
    print("all suites passed")
    return EXIT_OK


def cmd_train_demo(args) -> int:
    from .synth import DEFAULT_COUNTS, load_dataset, make_dataset
    from .train import TrainConfig, train_demo

    if args.data:
        cfg, data = load_dataset(args.data)
    else:
        cfg = load_config(args.config, args.set, C=16, H=8, W=8, L=3)
        data = make_dataset(DEFAULT_COUNTS, cfg, args.seed)
    result = train_demo(data, cfg, TrainConfig(args.step_size, args.steps, args.seed))
    if not result.ok:
        print(f"training diverged at step {result.diverged_at}")
        return EXIT_FAIL
    report = {
        "config": cfg.to_dict(),
        "train": {"step_size": args.step_size, "steps": args.steps, "seed": args.seed},
        "losses": result.losses,
        "smoothed": result.smoothed,
        "gate_means": {k: v.tolist() for k, v in result.gate_means.items()},
    }
    if args.out:
        _atomic_write(args.out, json.dumps(report, indent=1).encode("utf-8"))
    if args.params_out:
        write_params(args.params_out, result.params)
    print(f"loss {result.losses[0]:.6f} -> {result.losses[-1]:.6f} over {args.steps} steps")
    for cls, g in result.gate_means.items():
        print(f"{cls:>14}: mean gate {g.mean():.4f}  per-layer {[round(float(x), 4) for x in g.mean(axis=(1, 2))]}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import compare_backends, time_forward, time_kernels

    cfg = load_config(args.config, args.set)
    rows = compare_backends(cfg, args.runs) if args.backend == "both" else [time_forward(cfg, args.runs, args.backend)]
    for row in rows:
        print(f"{row['backend']:>6}: forward median {row['median_ms']:.3f} ms (min {row['min_ms']:.3f}) over {row['runs']} runs")
    if args.per_kernel:
        for name, ops in time_kernels(runs=args.runs).items():
            print(f"{name:>6}: " + "  ".join(f"{op} {us:.1f}us" for op, us in ops.items()))
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth import CLASSES, make_dataset, save_dataset

    counts = {}
    for item in args.counts.split(","):
        cls, sep, n = item.partition("=")
        if not sep or cls not in CLASSES:
            raise CliError(f"bad --counts entry {item!r}; classes are {', '.join(CLASSES)}")
        counts[cls] = int(n)
    cfg = load_config(args.config, args.set)
    data = make_dataset(counts, cfg, args.seed)
    manifest = save_dataset(args.out, data, cfg, args.dtype)
    print(f"wrote {len(data)} scenarios, manifest {manifest}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hanfuse", description="Routed attention fusion of RGB/thermal features.")
    parser.add_argument("--kernels", choices=kernels.BACKENDS, help="kernel backend (default: numba if available)")
    sub = parser.add_subparsers(dest="command", required=True)

    def config_args(p):
        p.add_argument("--config", help="JSON file with HanConfig fields")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config field")

    p = sub.add_parser("init", help="write freshly initialized parameters")
    config_args(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--dtype", choices=("float64", "float32"), default="float64")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("forward", help="fuse RGB/thermal tensors")
    p.add_argument("--params", required=True)
    p.add_argument("--rgb", nargs="+", required=True)
    p.add_argument("--tir", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trace")
    p.add_argument("--replay", help="trace JSON whose gates replace the routers")
    p.add_argument("--threshold", type=float, default=0.1)
    p.add_argument("--router-tap", choices=("output", "input"), default="output")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--dtype", choices=("float64", "float32"), default="float64")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("trace", help="summarize a trace or export its DOT graph")
    p.add_argument("--trace", required=True)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--dot", help="write DOT text here")
    p.add_argument("--print-dot", action="store_true")
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("check", help="run the property and verification suites")
    p.add_argument("--level", choices=("fast", "full"), default="fast")
    p.add_argument("--params", help="also verify that this parameter file loads")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("train-demo", help="gradient descent on synthetic scenarios")
    config_args(p)
    p.add_argument("--data", help="dataset directory written by 'synth' (default: generate)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--step-size", type=float, default=0.05)
    p.add_argument("--out", help="loss curve and gate report JSON")
    p.add_argument("--params-out")
    p.set_defaults(func=cmd_train_demo)

    p = sub.add_parser("bench", help="time the forward pass per kernel backend")
    config_args(p)
    p.add_argument("--runs", type=int, default=30)
    p.add_argument("--backend", choices=(*kernels.BACKENDS, "both"), default="both")
    p.add_argument("--per-kernel", action="store_true", help="also time individual kernels")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="write a synthetic scenario dataset")
    config_args(p)
    p.add_argument("--counts", default="clean-both=2,noisy-tir=2,noisy-rgb=2,complementary=2,low-contrast=2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--dtype", choices=("float64", "float32"), default="float64")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.kernels:
        kernels.set_backend(args.kernels)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, ShapeError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
