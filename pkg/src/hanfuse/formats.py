"""Binary tensor and parameter files, JSON routing traces, DOT export.

TensorFile layout (little-endian)::

    b"FTNS" | version u8 (=1) | dtype u8 (0: float32, 1: float64) | rank u8 (1..3)
    | dims rank * u32 | payload, row-major

ParamsFile layout::

    b"FPRM" | version u8 (=1) | entry count u32
    | entries: name length u16 | UTF-8 name | complete TensorFile bytes

Every writer goes through a temporary file in the target directory followed
by an atomic rename, so readers never see a partial file.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .engine import UNIT_NAMES, HanConfig, HanParams, RoutingTrace, check_params
from .errors import ConfigError, FormatError

TENSOR_MAGIC = b"FTNS"
PARAMS_MAGIC = b"FPRM"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- tensors ---------------------------------------------------------------

def encode_tensor(t, dtype="float64") -> bytes:
    t = np.asarray(t)
    dt = np.dtype(dtype)
    if dt not in _CODES:
        raise FormatError(f"unsupported storage dtype {dt}")
    if not 1 <= t.ndim <= 3:
        raise FormatError(f"tensor rank must be 1..3, got {t.ndim}")
    if any(d < 1 for d in t.shape):
        raise FormatError(f"tensor dims must be positive, got {t.shape}")
    header = TENSOR_MAGIC + struct.pack("<BBB", VERSION, _CODES[dt], t.ndim)
    header += struct.pack(f"<{t.ndim}I", *t.shape)
    return header + np.ascontiguousarray(t, dtype=dt.newbyteorder("<")).tobytes()


def decode_tensor(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one tensor starting at ``offset``; return it (as float64) and the end offset."""
    if buf[offset:offset + 4] != TENSOR_MAGIC:
        raise FormatError("bad tensor magic", offset)
    if len(buf) < offset + 7:
        raise FormatError("truncated tensor header", len(buf))
    version, code, rank = struct.unpack_from("<BBB", buf, offset + 4)
    if version != VERSION:
        raise FormatError(f"unsupported tensor version {version}", offset + 4)
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}", offset + 5)
    if not 1 <= rank <= 3:
        raise FormatError(f"tensor rank must be 1..3, got {rank}", offset + 6)
    pos = offset + 7
    if len(buf) < pos + 4 * rank:
        raise FormatError("truncated tensor dims", len(buf))
    dims = struct.unpack_from(f"<{rank}I", buf, pos)
    if any(d == 0 for d in dims):
        raise FormatError(f"zero-length dimension in {dims}", pos)
    pos += 4 * rank
    dt = _DTYPES[code]
    nbytes = int(np.prod(dims)) * dt.itemsize
    if len(buf) < pos + nbytes:
        raise FormatError(f"truncated payload: need {nbytes} bytes, have {len(buf) - pos}", len(buf))
    data = np.frombuffer(buf, dtype=dt, count=int(np.prod(dims)), offset=pos)
    return data.astype(np.float64).reshape(dims), pos + nbytes


def write_tensor(path, t, dtype="float64") -> None:
    _atomic_write(path, encode_tensor(t, dtype))


def read_tensor(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    t, end = decode_tensor(buf)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes after tensor", end)
    return t


# -- parameter sets --------------------------------------------------------

def encode_params(params: HanParams, dtype="float64") -> bytes:
    entries = list(params.named_arrays())
    out = [PARAMS_MAGIC, struct.pack("<BI", VERSION, len(entries))]
    for name, a in entries:
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw + encode_tensor(a, dtype))
    return b"".join(out)


def decode_params(buf: bytes) -> HanParams:
    if buf[:4] != PARAMS_MAGIC:
        raise FormatError("bad params magic", 0)
    if len(buf) < 9:
        raise FormatError("truncated params header", len(buf))
    version, count = struct.unpack_from("<BI", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported params version {version}", 4)
    pos = 9
    arrays = {}
    for _ in range(count):
        if len(buf) < pos + 2:
            raise FormatError("truncated entry header", len(buf))
        (n,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        if len(buf) < pos + n:
            raise FormatError("truncated entry name", len(buf))
        try:
            name = buf[pos:pos + n].decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("entry name is not UTF-8", pos) from None
        if name in arrays:
            raise FormatError(f"duplicate entry {name!r}", pos)
        pos += n
        arrays[name], pos = decode_tensor(buf, pos)
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after last entry", pos)
    try:
        return HanParams.from_named(arrays)
    except ValueError as exc:
        raise FormatError(f"inconsistent parameter set: {exc}") from None


def write_params(path, params: HanParams, dtype="float64") -> None:
    _atomic_write(path, encode_params(params, dtype))


def read_params(path, cfg: HanConfig | None = None) -> HanParams:
    params = decode_params(Path(path).read_bytes())
    if cfg is not None:
        try:
            check_params(params, cfg)
        except ConfigError as exc:
            raise FormatError(str(exc)) from None
    return params


# -- traces ----------------------------------------------------------------

def trace_to_dict(trace: RoutingTrace) -> dict:
    return {
        "gates": trace.gates.tolist(),
        "edge_threshold": trace.threshold,
        "active_edges": [list(e) for e in trace.active_edges],
        "unit_norms": trace.unit_norms.tolist(),
    }


def trace_from_dict(d: dict, cfg: HanConfig) -> RoutingTrace:
    try:
        gates = np.array(d["gates"], dtype=np.float64)
        norms = np.array(d.get("unit_norms", np.zeros((cfg.L, cfg.N, 4))), dtype=np.float64)
        trace = RoutingTrace(gates, norms, float(d["edge_threshold"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed trace frame: {exc}") from None
    if gates.shape != (cfg.L, cfg.N, cfg.N):
        raise FormatError(f"gates have shape {gates.shape}, config needs {(cfg.L, cfg.N, cfg.N)}")
    if "active_edges" in d and [tuple(e) for e in d["active_edges"]] != trace.active_edges:
        raise FormatError("active_edges disagree with gates and edge_threshold")
    return trace


def dump_traces(cfg: HanConfig, traces) -> str:
    doc = {"config": cfg.to_dict(), "frames": [trace_to_dict(t) for t in traces]}
    return json.dumps(doc, indent=1)


def write_trace(path, cfg: HanConfig, traces) -> None:
    if isinstance(traces, RoutingTrace):
        traces = [traces]
    _atomic_write(path, dump_traces(cfg, traces).encode("utf-8"))


def read_trace(path) -> tuple[HanConfig, list[RoutingTrace]]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        cfg = HanConfig.from_dict(doc["config"])
        frames = doc["frames"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"malformed trace file: {exc}") from None
    return cfg, [trace_from_dict(f, cfg) for f in frames]


def export_dot(traces, frame: int = 0) -> str:
    """Active-edge graph of one frame as Graphviz DOT text.

    Nodes ``L{l}U{i}`` carry the unit name; an active gate ``(l, j, i)`` becomes
    the edge ``L{l}U{j} -> L{l+1}U{i}`` labelled with the gate to two decimals.
    Gates of the last layer feed the final fusion and point at a ``FUSED``
    node, which only appears when such an edge exists.
    """
    if isinstance(traces, RoutingTrace):
        traces = [traces]
    if not 0 <= frame < len(traces):
        raise IndexError(f"frame {frame} out of range (have {len(traces)})")
    trace = traces[frame]
    L, N = trace.gates.shape[:2]
    lines = ["digraph han {", "  rankdir=LR;"]
    for l in range(L):
        for i in range(N):
            lines.append(f'  "L{l}U{i}" [label="{UNIT_NAMES[i]}"];')
    edges = trace.active_edges
    if any(l == L - 1 for l, _, _ in edges):
        lines.append('  "FUSED" [shape=box];')
    for l, j, i in edges:
        dst = "FUSED" if l == L - 1 else f"L{l + 1}U{i}"
        lines.append(f'  "L{l}U{j}" -> "{dst}" [label="{trace.gates[l, j, i]:.2f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
