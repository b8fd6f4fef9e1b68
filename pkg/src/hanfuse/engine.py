"""Hierarchical attention network: L densely routed layers of four fusion units.

Layer 0 feeds the raw (rgb, tir) pair to every unit. Between layers, unit
``i`` of layer ``l`` receives ``sum_j gates[l-1][j][i] * O_j`` where ``O_j``
is the output pair of unit ``j`` in layer ``l-1`` and ``gates[l-1][j]`` is
produced by that unit's router. The last layer's gates become per-unit
fusion weights (the mean of each unit's gate vector); the weighted pairs
are summed and the two streams added to give the fused map.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError
from .fusion import (
    CeuParams,
    CmeuParams,
    ModalityPair,
    SeuParams,
    ceu_backward,
    ceu_forward_cached,
    cmeu_backward,
    cmeu_forward_cached,
    seu_backward,
    seu_forward_cached,
)
from .rng import Rng
from .routing import RouterParams, router_backward, router_forward_cached

UNIT_NAMES = ("SEU", "CEU", "CMEU_r2t", "CMEU_t2r")
DEFAULT_THRESHOLD = 0.1
ROUTER_TAPS = ("output", "input")


@dataclass(frozen=True)
class HanConfig:
    C: int = 16
    H: int = 8
    W: int = 8
    L: int = 3
    N: int = 4
    G: int = 8
    k: int = 3
    c: int | None = None  # CMEU inner width, default C // 2
    H_r: int | None = None  # router hidden width, default max(C, N)
    seed: int = 0
    eps: float = 1e-5
    # which pair the router of a unit reads: its output (default) or its input
    router_tap: str = "output"

    def __post_init__(self):
        if self.c is None:
            object.__setattr__(self, "c", max(self.C // 2, 1))
        if self.H_r is None:
            object.__setattr__(self, "H_r", max(self.C, self.N))
        self.validate()

    def validate(self) -> None:
        for name in ("C", "H", "W", "L", "G", "k", "c", "H_r"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.N != 4:
            raise ConfigError(f"N must be 4 (one slot per fusion unit), got {self.N}")
        if self.C % self.G:
            raise ConfigError(f"G must divide C (G={self.G}, C={self.C})")
        if self.k % 2 == 0:
            raise ConfigError(f"k must be odd, got {self.k}")
        if self.k > 2 * self.C - 1:
            raise ConfigError(f"k must not exceed 2C-1, got k={self.k}")
        if not self.eps > 0:
            raise ConfigError("eps must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.router_tap not in ROUTER_TAPS:
            raise ConfigError(f"router_tap must be one of {ROUTER_TAPS}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.C, self.H, self.W)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HanConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "HanConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class LayerParams:
    seu_rgb: SeuParams
    seu_tir: SeuParams
    ceu_rgb: CeuParams
    ceu_tir: CeuParams
    cmeu_r2t: CmeuParams
    cmeu_t2r: CmeuParams
    routers: list[RouterParams]


_BLOCKS = ("seu_rgb", "seu_tir", "ceu_rgb", "ceu_tir", "cmeu_r2t", "cmeu_t2r")


def _map_arrays(obj, fn):
    if isinstance(obj, np.ndarray):
        return fn(obj)
    if isinstance(obj, list):
        return [_map_arrays(o, fn) for o in obj]
    return type(obj)(**{f.name: _map_arrays(getattr(obj, f.name), fn) for f in dataclasses.fields(obj)})


@dataclass
class HanParams:
    """All learnable arrays. Gradients use the same structure."""

    layers: list[LayerParams] = field(default_factory=list)

    def named_arrays(self):
        """``(name, array)`` pairs in canonical order, e.g. ``layer0.router2.W1``."""
        for l, layer in enumerate(self.layers):
            for block in _BLOCKS:
                params = getattr(layer, block)
                for f in dataclasses.fields(params):
                    yield f"layer{l}.{block}.{f.name}", getattr(params, f.name)
            for j, router in enumerate(layer.routers):
                for f in dataclasses.fields(router):
                    yield f"layer{l}.router{j}.{f.name}", getattr(router, f.name)

    def map(self, fn) -> "HanParams":
        return _map_arrays(self, fn)

    def copy(self) -> "HanParams":
        return self.map(np.copy)

    def zeros_like(self) -> "HanParams":
        return self.map(np.zeros_like)

    def size(self) -> int:
        return sum(a.size for _, a in self.named_arrays())

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _, a in self.named_arrays()])

    @classmethod
    def from_named(cls, arrays: dict) -> "HanParams":
        """Rebuild from a name->array mapping; every canonical name must be present."""
        arrays = dict(arrays)
        n_layers = 0
        while f"layer{n_layers}.seu_rgb.gamma" in arrays:
            n_layers += 1
        if n_layers == 0:
            raise ShapeError("no layer0 parameters found")

        def take(name):
            try:
                return np.asarray(arrays.pop(name), dtype=np.float64)
            except KeyError:
                raise ShapeError(f"missing parameter {name}") from None

        def build(kind, prefix):
            return kind(**{f.name: take(f"{prefix}.{f.name}") for f in dataclasses.fields(kind)})

        kinds = {"seu": SeuParams, "ceu": CeuParams, "cmeu": CmeuParams}
        layers = []
        for l in range(n_layers):
            blocks = {b: build(kinds[b.split("_")[0]], f"layer{l}.{b}") for b in _BLOCKS}
            routers = []
            while f"layer{l}.router{len(routers)}.W1" in arrays:
                routers.append(build(RouterParams, f"layer{l}.router{len(routers)}"))
            layers.append(LayerParams(routers=routers, **blocks))
        if arrays:
            raise ShapeError(f"unexpected parameter(s): {', '.join(sorted(arrays))}")
        return cls(layers)

    def infer_config(self, H: int, W: int, **extra) -> HanConfig:
        """Recover the structural config from array shapes (spatial dims must be given)."""
        first = self.layers[0]
        C = first.cmeu_r2t.Wq.shape[0]
        cfg = HanConfig(
            C=C, H=H, W=W, L=len(self.layers), N=len(first.routers),
            G=first.seu_rgb.gamma.shape[0], k=first.ceu_rgb.w.shape[0],
            c=first.cmeu_r2t.Wq.shape[1], H_r=first.routers[0].W1.shape[1], **extra,
        )
        check_params(self, cfg)
        return cfg


def _expected_shapes(cfg: HanConfig) -> dict:
    C, c, G, k, N, Hr = cfg.C, cfg.c, cfg.G, cfg.k, cfg.N, cfg.H_r
    shapes = {}
    for l in range(cfg.L):
        for s in ("rgb", "tir"):
            shapes[f"layer{l}.seu_{s}.gamma"] = (G,)
            shapes[f"layer{l}.seu_{s}.beta"] = (G,)
        for s in ("rgb", "tir"):
            shapes[f"layer{l}.ceu_{s}.w"] = (k,)
        for u in ("r2t", "t2r"):
            p = f"layer{l}.cmeu_{u}"
            shapes.update({f"{p}.norm_scale": (C,), f"{p}.norm_shift": (C,), f"{p}.Wq": (C, c),
                           f"{p}.Wk": (C, c), f"{p}.Wv": (C, c), f"{p}.Wo": (c, C)})
        for j in range(N):
            p = f"layer{l}.router{j}"
            shapes.update({f"{p}.W1": (4 * C, Hr), f"{p}.b1": (Hr,), f"{p}.W2": (Hr, N), f"{p}.b2": (N,)})
    return shapes


def check_params(params: HanParams, cfg: HanConfig) -> None:
    expected = _expected_shapes(cfg)
    got = {name: a.shape for name, a in params.named_arrays()}
    if got.keys() != expected.keys():
        missing = sorted(expected.keys() - got.keys())
        extra = sorted(got.keys() - expected.keys())
        raise ConfigError(f"parameter set does not match config (missing {missing[:3]}, extra {extra[:3]})")
    for name, shape in expected.items():
        if got[name] != shape:
            raise ConfigError(f"{name} has shape {got[name]}, config requires {shape}")


def _xavier(rng: Rng, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, (fan_in, fan_out))


def init_params(cfg: HanConfig, seed: int | None = None) -> HanParams:
    """Initial parameters: neutral SEU gates, small CEU kernels, Xavier projections.

    Router output biases start at 0.5 so gates begin open (tanh(0.5) ~ 0.46)
    and gradients reach every edge.
    """
    rng = Rng(cfg.seed if seed is None else seed)
    C, c, G, k, N, Hr = cfg.C, cfg.c, cfg.G, cfg.k, cfg.N, cfg.H_r
    layers = []
    for _ in range(cfg.L):
        seu = [SeuParams(np.zeros(G), np.zeros(G)) for _ in range(2)]
        ceu = [CeuParams(rng.uniform(-0.1, 0.1, (k,))) for _ in range(2)]
        cmeu = [
            CmeuParams(np.ones(C), np.zeros(C), _xavier(rng, C, c), _xavier(rng, C, c),
                       _xavier(rng, C, c), _xavier(rng, c, C))
            for _ in range(2)
        ]
        routers = [
            RouterParams(_xavier(rng, 4 * C, Hr), np.zeros(Hr), _xavier(rng, Hr, N), np.full(N, 0.5))
            for _ in range(N)
        ]
        layers.append(LayerParams(seu[0], seu[1], ceu[0], ceu[1], cmeu[0], cmeu[1], routers))
    return HanParams(layers)


def random_params(cfg: HanConfig, seed: int, scale: float = 0.5) -> HanParams:
    """Every parameter uniform in ``[-scale, scale]``; used for gradient and oracle checks."""
    rng = Rng(seed)
    return init_params(cfg, seed).map(lambda a: rng.uniform(-scale, scale, a.shape))


def zero_router_params(params: HanParams) -> HanParams:
    out = params.copy()
    for layer in out.layers:
        for r in layer.routers:
            for a in (r.W1, r.b1, r.W2, r.b2):
                a[...] = 0.0
    return out


# -- per-unit dispatch -----------------------------------------------------

def _dispatch_cached(i: int, pair: ModalityPair, lp: LayerParams, cfg: HanConfig):
    if i == 0:
        rgb, c_rgb = seu_forward_cached(pair.rgb, lp.seu_rgb, cfg.G, cfg.eps)
        tir, c_tir = seu_forward_cached(pair.tir, lp.seu_tir, cfg.G, cfg.eps)
        return ModalityPair(rgb, tir), (c_rgb, c_tir)
    if i == 1:
        rgb, c_rgb = ceu_forward_cached(pair.rgb, lp.ceu_rgb)
        tir, c_tir = ceu_forward_cached(pair.tir, lp.ceu_tir)
        return ModalityPair(rgb, tir), (c_rgb, c_tir)
    if i == 2:
        tir, cache = cmeu_forward_cached(pair.tir, pair.rgb, lp.cmeu_r2t, cfg.eps)
        return ModalityPair(pair.rgb, tir), cache
    if i == 3:
        rgb, cache = cmeu_forward_cached(pair.rgb, pair.tir, lp.cmeu_t2r, cfg.eps)
        return ModalityPair(rgb, pair.tir), cache
    raise ConfigError(f"unit index must be in 0..3, got {i}")


def unit_dispatch(l: int, i: int, pair: ModalityPair, params: HanParams, cfg: HanConfig) -> ModalityPair:
    """Run unit ``i`` of layer ``l`` on an input pair.

    0: SEU on each stream, 1: CEU on each stream, 2: thermal enhanced from
    RGB (rgb passes through), 3: RGB enhanced from thermal (tir passes through).
    """
    if not 0 <= l < len(params.layers):
        raise ConfigError(f"layer index {l} out of range")
    return _dispatch_cached(i, ModalityPair(*pair), params.layers[l], cfg)[0]


def _dispatch_backward(i: int, gout: ModalityPair, cache, glp: LayerParams) -> ModalityPair:
    """Accumulate parameter grads of unit ``i`` into ``glp``; return input grad pair."""
    if i == 0:
        g_rgb, gp_rgb = seu_backward(gout.rgb, cache[0])
        g_tir, gp_tir = seu_backward(gout.tir, cache[1])
        _accumulate(glp.seu_rgb, gp_rgb)
        _accumulate(glp.seu_tir, gp_tir)
        return ModalityPair(g_rgb, g_tir)
    if i == 1:
        g_rgb, gp_rgb = ceu_backward(gout.rgb, cache[0])
        g_tir, gp_tir = ceu_backward(gout.tir, cache[1])
        _accumulate(glp.ceu_rgb, gp_rgb)
        _accumulate(glp.ceu_tir, gp_tir)
        return ModalityPair(g_rgb, g_tir)
    if i == 2:
        g_tir, g_rgb, gp = cmeu_backward(gout.tir, cache)
        _accumulate(glp.cmeu_r2t, gp)
        return ModalityPair(gout.rgb + g_rgb, g_tir)
    g_rgb, g_tir, gp = cmeu_backward(gout.rgb, cache)
    _accumulate(glp.cmeu_t2r, gp)
    return ModalityPair(g_rgb, gout.tir + g_tir)


def _accumulate(dst, src) -> None:
    for f in dataclasses.fields(dst):
        getattr(dst, f.name)[...] += getattr(src, f.name)


# -- dense routed aggregation ---------------------------------------------

def aggregate_inputs(prev_outputs, gates) -> list[ModalityPair]:
    """``input_i = sum_j gates[j][i] * prev_outputs[j]`` on both streams."""
    gates = kernels.as_real(gates)
    n = len(prev_outputs)
    if gates.shape != (n, n):
        raise ShapeError(f"gates must be {n}x{n}, got {gates.shape}")
    rgb = np.tensordot(gates.T, np.stack([p.rgb for p in prev_outputs]), axes=1)
    tir = np.tensordot(gates.T, np.stack([p.tir for p in prev_outputs]), axes=1)
    return [ModalityPair(rgb[i], tir[i]) for i in range(n)]


def fuse_outputs(last_outputs, last_gates) -> np.ndarray:
    """Weight each last-layer pair by its mean gate, sum, then add the streams."""
    weights = np.asarray(last_gates).mean(axis=1)
    rgb = weights[0] * last_outputs[0].rgb
    tir = weights[0] * last_outputs[0].tir
    for j in range(1, len(last_outputs)):
        rgb = rgb + weights[j] * last_outputs[j].rgb
        tir = tir + weights[j] * last_outputs[j].tir
    return rgb + tir


# -- forward ---------------------------------------------------------------

@dataclass
class RoutingTrace:
    """Gates of one forward pass plus per-unit norms.

    ``gates[l][j][i]`` weighs unit ``j`` of layer ``l`` into unit ``i`` of
    layer ``l+1``; the last layer's rows are the final fusion gates.
    ``unit_norms[l][i]`` holds the Frobenius norms of (input rgb, input tir,
    output rgb, output tir).
    """

    gates: np.ndarray
    unit_norms: np.ndarray
    threshold: float = DEFAULT_THRESHOLD

    @property
    def active_edges(self) -> list[tuple[int, int, int]]:
        return [tuple(int(v) for v in e) for e in np.argwhere(self.gates >= self.threshold)]


@dataclass
class ForwardCache:
    cfg: HanConfig
    params: HanParams
    inputs: list
    outputs: list
    unit_caches: list
    router_caches: list
    gates: np.ndarray
    routed: bool


def _validate_input(pair, cfg: HanConfig) -> ModalityPair:
    rgb = kernels.as_real(pair[0])
    tir = kernels.as_real(pair[1])
    if rgb.shape != cfg.shape or tir.shape != cfg.shape:
        raise ConfigError(f"input shapes {rgb.shape}/{tir.shape} do not match config {cfg.shape}")
    return ModalityPair(rgb, tir)


def forward_cached(pair, params: HanParams, cfg: HanConfig, gates=None):
    """Full forward keeping every intermediate needed by the backward pass.

    With ``gates`` given (an ``L x N x N`` array) routers are bypassed and the
    supplied gates are used instead.
    """
    pair = _validate_input(pair, cfg)
    if len(params.layers) != cfg.L:
        raise ConfigError(f"params have {len(params.layers)} layers, config says L={cfg.L}")
    routed = gates is None
    if routed:
        gates = np.zeros((cfg.L, cfg.N, cfg.N), dtype=pair.rgb.dtype)
    else:
        gates = np.array(gates, dtype=pair.rgb.dtype)
        if gates.shape != (cfg.L, cfg.N, cfg.N):
            raise ConfigError(f"replayed gates must be {(cfg.L, cfg.N, cfg.N)}, got {gates.shape}")
    inputs, outputs, unit_caches, router_caches = [], [], [], []
    layer_in = [pair] * cfg.N
    for l, lp in enumerate(params.layers):
        if l > 0:
            layer_in = aggregate_inputs(outputs[-1], gates[l - 1])
        outs, ucaches, rcaches = [], [], []
        for i in range(cfg.N):
            out, cache = _dispatch_cached(i, layer_in[i], lp, cfg)
            outs.append(out)
            ucaches.append(cache)
            if routed:
                tap = out if cfg.router_tap == "output" else layer_in[i]
                gates[l, i], rcache = router_forward_cached(tap.rgb, tap.tir, lp.routers[i])
                rcaches.append(rcache)
        inputs.append(layer_in)
        outputs.append(outs)
        unit_caches.append(ucaches)
        router_caches.append(rcaches)
    fused = fuse_outputs(outputs[-1], gates[-1])
    cache = ForwardCache(cfg, params, inputs, outputs, unit_caches, router_caches, gates, routed)
    return fused, cache


def _trace_from(cache: ForwardCache, threshold: float) -> RoutingTrace:
    norms = np.array([
        [[np.linalg.norm(cache.inputs[l][i].rgb), np.linalg.norm(cache.inputs[l][i].tir),
          np.linalg.norm(cache.outputs[l][i].rgb), np.linalg.norm(cache.outputs[l][i].tir)]
         for i in range(cache.cfg.N)]
        for l in range(cache.cfg.L)
    ])
    return RoutingTrace(cache.gates.copy(), norms, threshold)


def han_forward(pair, params: HanParams, cfg: HanConfig, replay=None, threshold=DEFAULT_THRESHOLD):
    """Fused feature map and routing trace for one frame.

    ``replay`` may be a :class:`RoutingTrace` or an ``L x N x N`` gate array;
    its gates are injected and the routers skipped.
    """
    if isinstance(replay, RoutingTrace):
        replay = replay.gates
    fused, cache = forward_cached(pair, params, cfg, gates=replay)
    return fused, _trace_from(cache, threshold)


def static_gates(cfg: HanConfig) -> np.ndarray:
    return np.ones((cfg.L, cfg.N, cfg.N))


def han_forward_static(pair, params: HanParams, cfg: HanConfig, return_trace: bool = False):
    """Router-free dense fusion: every gate fixed at 1."""
    fused, cache = forward_cached(pair, params, cfg, gates=static_gates(cfg))
    if return_trace:
        return fused, _trace_from(cache, DEFAULT_THRESHOLD)
    return fused


# -- accounting ------------------------------------------------------------

def param_count(cfg: HanConfig, routers: bool = True) -> int:
    C, c, G, k, N, Hr = cfg.C, cfg.c, cfg.G, cfg.k, cfg.N, cfg.H_r
    per_layer = 2 * (2 * G) + 2 * k + 2 * (2 * C + 3 * C * c + c * C)
    if routers:
        per_layer += N * (4 * C * Hr + Hr + Hr * N + N)
    return cfg.L * per_layer


def flop_count(cfg: HanConfig, routers: bool = True) -> int:
    """FLOPs of one forward pass.

    A multiply-accumulate counts 2; pooling, normalization, activations and
    elementwise products or sums count 1 per element touched.
    """
    C, c, G, k, N, Hr = cfg.C, cfg.c, cfg.G, cfg.k, cfg.N, cfg.H_r
    n = cfg.H * cfg.W
    seu = 2 * (4 * C * n + 4 * G * n)
    ceu = 2 * (2 * C * n + 2 * k * C + C)
    cmeu = 2 * (7 * C * n + 8 * n * C * c + 4 * n * n * c + 2 * n * n)
    router = 4 * C * n + (2 * 4 * C * Hr + 2 * Hr) + (2 * Hr * N + 3 * N)
    units = seu + ceu + cmeu + (N * router if routers else 0)
    aggregate = N * N * 2 * (2 * C * n)
    final = N * N + N * 2 * (2 * C * n) + C * n
    return cfg.L * units + (cfg.L - 1) * aggregate + final
