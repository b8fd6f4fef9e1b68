"""Dense float64 kernels behind a switchable backend.

Two interchangeable backends implement the same functions: ``numba``
(compiled loops, the default when numba imports) and ``numpy`` (vectorized
array code). Set ``HANFUSE_KERNELS=numpy`` before import to force the numpy
path, or call :func:`set_backend` at runtime. Only the numpy backend
accepts extended precision (``np.longdouble``) arrays. Callers must reach
kernels through this module (``kernels.matmul(...)``) so a switch takes effect.
"""

from __future__ import annotations

import contextlib
import importlib
import os

import numpy as np

from ..errors import ConfigError, ShapeError

BACKENDS = ("numba", "numpy")
ENV_VAR = "HANFUSE_KERNELS"

_impl = None
backend = None


def load_backend(name: str):
    if name not in BACKENDS:
        raise ConfigError(f"unknown kernel backend {name!r}; expected one of {BACKENDS}")
    return importlib.import_module(f"{__name__}._{name}")


def set_backend(name: str) -> None:
    global _impl, backend
    _impl = load_backend(name)
    backend = name


@contextlib.contextmanager
def use_backend(name: str):
    previous = backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def _default_backend() -> str:
    requested = os.environ.get(ENV_VAR, "").strip().lower()
    if requested:
        return requested
    try:
        import numba  # noqa: F401
    except ImportError:
        return "numpy"
    return "numba"


def as_real(a):
    """Contiguous floating array; float64 unless already floating (e.g. longdouble)."""
    if type(a) is np.ndarray and a.dtype.kind == "f" and a.flags.c_contiguous:
        return a
    a = np.asarray(a)
    if a.dtype.kind != "f":
        a = a.astype(np.float64)
    return np.ascontiguousarray(a)


def _as2d(a, what):
    a = as_real(a)
    if a.ndim != 2:
        raise ShapeError(f"{what} must be a matrix, got shape {a.shape}")
    return a


def matmul(a, b):
    a = _as2d(a, "matmul lhs")
    b = _as2d(b, "matmul rhs")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    return _impl.matmul(a, b)


def softmax_rows(a):
    a = _as2d(a, "softmax input")
    if a.shape[1] == 0:
        raise ShapeError("softmax over an empty row")
    return _impl.softmax_rows(a)


def softmax_rows_backward(y, gy):
    """Vector-Jacobian product of softmax_rows given its output ``y``."""
    return _impl.softmax_rows_backward(_as2d(y, "softmax output"), _as2d(gy, "softmax grad"))


def _flatten_spatial(f):
    f = as_real(f)
    if f.ndim < 2:
        raise ShapeError(f"expected a C x H x W (or C x HW) tensor, got shape {f.shape}")
    x = f.reshape(f.shape[0], -1)
    if x.shape[1] == 0:
        raise ShapeError("spatial extent is empty")
    return x


def spatial_pool(f, mode: str = "avg"):
    """Per-channel mean or max over all spatial positions of ``f``."""
    x = _flatten_spatial(f)
    if mode == "avg":
        return _impl.pool_avg(x)
    if mode == "max":
        return _impl.pool_max(x)
    raise ConfigError(f"pool mode must be 'avg' or 'max', got {mode!r}")


def spatial_argmax(f):
    """Flat index of the first maximum of each channel, in row-major scan order."""
    return _impl.pool_argmax(_flatten_spatial(f))


def _check_kernel(x, w):
    x = as_real(x)
    w = as_real(w)
    if x.ndim != 1 or w.ndim != 1:
        raise ShapeError("conv1d_same expects vectors")
    k = w.shape[0]
    if k % 2 == 0:
        raise ConfigError(f"kernel length must be odd, got {k}")
    if k > 2 * x.shape[0] - 1:
        raise ConfigError(f"kernel length {k} exceeds 2C-1 for C={x.shape[0]}")
    return x, w


def conv1d_same(x, w):
    """Zero-padded, same-length correlation of ``x`` with the odd kernel ``w``."""
    x, w = _check_kernel(x, w)
    return _impl.conv1d_same(x, w)


def conv1d_same_backward(x, w, gy):
    x, w = _check_kernel(x, w)
    return _impl.conv1d_same_backward(x, w, as_real(gy))


def normalize_spatial(a, eps: float = 1e-5):
    """Standardize each row: ``(a - mean) / (std + eps)``, constant rows map to 0.

    ``std`` is the population standard deviation over the row.
    """
    if not eps > 0:
        raise ConfigError("eps must be positive")
    return _impl.normalize_spatial(_as2d(a, "normalize input"), eps)


def normalize_spatial_backward(a, gy, eps: float = 1e-5):
    return _impl.normalize_spatial_backward(
        _as2d(a, "normalize input"), _as2d(gy, "normalize grad"), eps
    )


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


set_backend(_default_backend())
