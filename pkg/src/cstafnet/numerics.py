"""Dense-tensor kernel layer: elementwise math, matrix products, stable
reductions, seeded randomness, and the finite-difference gradient oracle.

Tensors are plain C-order float64 ndarrays throughout the package. All
summation orders are fixed (see backend/_pykernels) so repeated runs on
one platform are bit-reproducible.
"""

import numpy as np

from . import backend
from .errors import ConfigError, NumericError, ShapeError

matmul = backend.matmul

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class RngState:
    """Counter-based deterministic generator (splitmix64 output function).

    The state is just (seed, position): value i of a stream is a pure
    function of seed and i, so draws are identical on every platform and
    the state can be serialized as two integers.
    """

    def __init__(self, seed, pos=0):
        self.seed = int(seed) & _MASK64
        self.pos = int(pos)

    def _draw_u64(self, n):
        start = (self.seed + (self.pos + 1) * _GOLDEN) & _MASK64
        z = (np.uint64(start)
             + np.arange(n, dtype=np.uint64) * np.uint64(_GOLDEN))
        self.pos += n
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))

    def random(self, shape=None):
        """Uniform float64 in [0, 1), drawn in row-major order."""
        if shape is None:
            return float(self._draw_u64(1)[0] >> np.uint64(11)) * 2.0 ** -53
        n = int(np.prod(shape))
        u = (self._draw_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        return u.reshape(shape)

    def uniform(self, low, high, shape=None):
        return low + (high - low) * self.random(shape)

    def permutation(self, n):
        """Deterministic random permutation of range(n).

        Sorts n counter-based keys; a stable sort keeps the (vanishingly
        unlikely) key collisions deterministic too.
        """
        return np.argsort(self._draw_u64(n), kind="stable")


def activation(kind, x):
    """Elementwise relu / sigmoid / tanh."""
    x = np.asarray(x, dtype=np.float64)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return np.tanh(x)
    raise ConfigError(f"unknown activation kind {kind!r}")


def sigmoid(x):
    # Piecewise form never exponentiates a large positive value, so the
    # output is finite (and in (0,1]) for any finite input.
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x, axis=-1):
    """Shift-by-max softmax; slices along `axis` sum to 1."""
    x = np.asarray(x, dtype=np.float64)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def glorot_init(rows, cols, rng):
    """Uniform init in +-sqrt(6 / (rows + cols)), row-major draw order."""
    if rows < 1 or cols < 1:
        raise ConfigError(f"glorot_init needs positive dims, got {rows}x{cols}")
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, (rows, cols))


def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of a scalar function, one coordinate at
    a time: (f(x + h e_i) - f(x - h e_i)) / 2h."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat = grad.reshape(-1)
    for i in range(x.size):
        xp = x.copy().reshape(-1)
        xp[i] += h
        fp = f(xp.reshape(x.shape))
        xm = x.copy().reshape(-1)
        xm[i] -= h
        fm = f(xm.reshape(x.shape))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(
                f"finite_diff_grad: non-finite function value at coordinate {i}")
        flat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a, b, floor=1e-8):
    """Elementwise |a-b| / max(|a|, |b|, floor), reduced to the maximum."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
