"""Kernel backend selection.

The hot kernels (matmul and the 1-D convolution passes) exist twice: a
Cython extension (cstafnet._ckernels) and a numpy fallback
(cstafnet._pykernels) with identical accumulation semantics. The compiled
module is picked at import time when present; CSTAFNET_KERNELS=python or
=compiled forces a choice, and set_backend() switches at runtime (used by
the benchmark to compare both in one process).
"""

import os

import numpy as np

from . import _pykernels
from .errors import ConfigError, ShapeError

try:
    from . import _ckernels
except ImportError:
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["compiled"] = _ckernels


def available_backends():
    return sorted(_BACKENDS)


def set_backend(name):
    global _impl, _name
    if name not in _BACKENDS:
        raise ConfigError(
            f"kernel backend {name!r} not available (have: {available_backends()}); "
            "'compiled' requires the _ckernels extension to be built")
    _impl = _BACKENDS[name]
    _name = name


def get_backend():
    return _name


def _default_backend():
    env = os.environ.get("CSTAFNET_KERNELS", "auto")
    if env == "auto":
        return "compiled" if _ckernels is not None else "python"
    if env not in ("python", "compiled"):
        raise ConfigError(f"CSTAFNET_KERNELS must be auto, python or compiled, got {env!r}")
    if env not in _BACKENDS:
        raise ConfigError(
            "CSTAFNET_KERNELS=compiled but the _ckernels extension is not built")
    return env


def _c64(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def matmul(a, b):
    a = _c64(a)
    b = _c64(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    return _impl.matmul(a, b)


def conv1d_fwd(xp, w, t_out):
    return _impl.conv1d_fwd(_c64(xp), _c64(w), t_out)


def conv1d_bwd_x(gy, w):
    return _impl.conv1d_bwd_x(_c64(gy), _c64(w))


def conv1d_bwd_w(xp, gy):
    return _impl.conv1d_bwd_w(_c64(xp), _c64(gy))


_name = _default_backend()
_impl = _BACKENDS[_name]
