"""Forward and exact backward passes for every layer of the network:
same-padded 1-D convolution, batch normalization, inverted dropout, GRU
cell plus bidirectional wrapper, temporal attention, channel attention,
global max pooling, and dense maps.

Each layer has a `<name>_fwd` returning (output, cache) and a
`<name>_bwd(grad_out, cache)` returning (grad_input, param_grads) where
param_grads is a dict keyed by parameter field name. The plain top-level
functions (conv1d_same, bigru, ...) are thin wrappers that drop the cache
and accept single samples (T, C) as well as batches (B, T, C).
"""

from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import ConfigError, ShapeError
from .numerics import sigmoid, softmax


@dataclass
class ConvParams:
    w: np.ndarray  # (k, C_in, F)
    b: np.ndarray  # (F,)


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.9


@dataclass
class GruParams:
    """One gate triple per field prefix: u_* input weights (C_in x U),
    r_* recurrent weights (U x U), b_* bias (U,)."""
    u_z: np.ndarray
    r_z: np.ndarray
    b_z: np.ndarray
    u_r: np.ndarray
    r_r: np.ndarray
    b_r: np.ndarray
    u_h: np.ndarray
    r_h: np.ndarray
    b_h: np.ndarray


@dataclass
class TemporalAttentionParams:
    w: np.ndarray  # (T, T)
    b: np.ndarray  # (T,)


@dataclass
class ChannelAttentionParams:
    w1: np.ndarray  # (C, C // ratio)
    b1: np.ndarray
    w2: np.ndarray  # (C // ratio, C)
    b2: np.ndarray


@dataclass
class DenseParams:
    w: np.ndarray  # (in, out)
    b: np.ndarray  # (out,)


def _lift(x):
    """Accept (T, C) or (B, T, C); return a 3-D view plus a restore flag."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise ShapeError(f"expected a (T, C) or (B, T, C) tensor, got shape {x.shape}")


def _mm(a, b):
    return backend.matmul(a, b)


def _mmT(a, b):
    """a.T @ b with a C-contiguous transpose (backend needs contiguity)."""
    return backend.matmul(np.ascontiguousarray(a.T), b)


# ---------------------------------------------------------------------------
# convolution

def conv1d_same_fwd(x, p, act="linear"):
    k, c_in, _ = p.w.shape
    if k % 2 == 0:
        raise ConfigError(f"same padding needs an odd kernel size, got {k}")
    if x.shape[2] != c_in:
        raise ShapeError(
            f"conv1d channel mismatch: input has {x.shape[2]}, kernel expects {c_in}")
    batch, t, _ = x.shape
    pad = (k - 1) // 2
    xp = np.zeros((batch, t + k - 1, c_in))
    xp[:, pad:pad + t] = x
    pre = backend.conv1d_fwd(xp, p.w, t) + p.b
    y = np.maximum(pre, 0.0) if act == "relu" else pre
    return y, (xp, p.w, pre if act == "relu" else None, pad, t)


def conv1d_same_bwd(gy, cache):
    xp, w, pre, pad, t = cache
    if pre is not None:
        gy = gy * (pre > 0)
    grads = {
        "w": backend.conv1d_bwd_w(xp, gy),
        "b": gy.sum(axis=(0, 1)),
    }
    gx = backend.conv1d_bwd_x(gy, w)[:, pad:pad + t]
    return gx, grads


def conv1d_same(x, p, act="linear"):
    x3, single = _lift(x)
    y, _ = conv1d_same_fwd(x3, p, act)
    return y[0] if single else y


def multi_scale_block_fwd(x, convs):
    filters = {p.w.shape[2] for p in convs}
    if len(filters) != 1:
        raise ShapeError(f"multi-scale convs must share a filter count, got {sorted(filters)}")
    outs, caches = [], []
    for p in convs:
        y, c = conv1d_same_fwd(x, p, act="relu")
        outs.append(y)
        caches.append(c)
    return np.concatenate(outs, axis=2), (caches, filters.pop())


def multi_scale_block_bwd(gy, cache):
    caches, f = cache
    gx = None
    grads = []
    for i, c in enumerate(caches):
        gxi, gi = conv1d_same_bwd(np.ascontiguousarray(gy[:, :, i * f:(i + 1) * f]), c)
        gx = gxi if gx is None else gx + gxi
        grads.append(gi)
    return gx, grads


def multi_scale_block(x, convs):
    x3, single = _lift(x)
    y, _ = multi_scale_block_fwd(x3, convs)
    return y[0] if single else y


# ---------------------------------------------------------------------------
# batch normalization

def batch_norm_fwd(x, p, mode, update_stats=True):
    """Normalize per channel over the batch and time axes.

    Train mode uses batch statistics (population variance) and folds them
    into the running estimates; infer mode uses the running estimates.
    """
    if mode == "train":
        if x.shape[0] < 2:
            raise ConfigError("batch_norm in train mode needs a batch of at least 2")
        mean = x.mean(axis=(0, 1))
        var = x.var(axis=(0, 1))
        if update_stats:
            m = p.momentum
            p.running_mean = m * p.running_mean + (1.0 - m) * mean
            p.running_var = m * p.running_var + (1.0 - m) * var
    elif mode == "infer":
        mean = p.running_mean
        var = p.running_var
    else:
        raise ConfigError(f"batch_norm mode must be train or infer, got {mode!r}")
    inv_std = 1.0 / np.sqrt(var + p.eps)
    xhat = (x - mean) * inv_std
    y = p.gamma * xhat + p.beta
    n = x.shape[0] * x.shape[1]
    return y, (xhat, inv_std, p.gamma, mode, n)


def batch_norm_bwd(gy, cache):
    xhat, inv_std, gamma, mode, n = cache
    grads = {
        "gamma": (gy * xhat).sum(axis=(0, 1)),
        "beta": gy.sum(axis=(0, 1)),
    }
    ghat = gy * gamma
    if mode == "infer":
        # Running statistics are constants at inference time.
        return ghat * inv_std, grads
    gx = inv_std * (ghat
                    - ghat.mean(axis=(0, 1))
                    - xhat * (ghat * xhat).mean(axis=(0, 1)))
    return gx, grads


def batch_norm(x, p, mode):
    y, _ = batch_norm_fwd(np.asarray(x, dtype=np.float64), p, mode)
    return y


# ---------------------------------------------------------------------------
# dropout

def dropout_fwd(x, rate, mode, rng=None, mask=None):
    """Inverted dropout: survivors are scaled by 1/(1-rate) so inference
    is an identity. A pre-drawn mask can be supplied to freeze the layer
    (gradient checks rely on this)."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "infer"):
        raise ConfigError(f"dropout mode must be train or infer, got {mode!r}")
    if mode == "infer" or rate == 0.0:
        return x, None
    if mask is None:
        if rng is None:
            raise ConfigError("train-mode dropout needs an rng or a frozen mask")
        mask = rng.random(x.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    return x * mask * scale, (mask, scale)


def dropout_bwd(gy, cache):
    if cache is None:
        return gy
    mask, scale = cache
    return gy * mask * scale


def dropout(x, rate, mode, rng=None):
    y, _ = dropout_fwd(np.asarray(x, dtype=np.float64), rate, mode, rng)
    return y


# ---------------------------------------------------------------------------
# GRU

def _gru_check(x_dim, h_dim, p):
    if p.u_z.shape != (x_dim, h_dim) or p.r_z.shape != (h_dim, h_dim):
        raise ShapeError(
            f"gru shapes disagree: input {x_dim}, state {h_dim}, "
            f"u_z {p.u_z.shape}, r_z {p.r_z.shape}")


def gru_step(x_t, h_prev, p):
    """One GRU update:

        z = sigmoid(x u_z + h_prev r_z + b_z)
        r = sigmoid(x u_r + h_prev r_r + b_r)
        hc = tanh(x u_h + (r * h_prev) r_h + b_h)
        h = (1 - z) * h_prev + z * hc
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    single = x_t.ndim == 1
    if single:
        x_t, h_prev = x_t[None], h_prev[None]
    _gru_check(x_t.shape[1], h_prev.shape[1], p)
    z = sigmoid(_mm(x_t, p.u_z) + _mm(h_prev, p.r_z) + p.b_z)
    r = sigmoid(_mm(x_t, p.u_r) + _mm(h_prev, p.r_r) + p.b_r)
    hc = np.tanh(_mm(x_t, p.u_h) + _mm(r * h_prev, p.r_h) + p.b_h)
    h = (1.0 - z) * h_prev + z * hc
    return h[0] if single else h


def gru_seq_fwd(x, p):
    """Run a GRU over (B, T, C_in) with h_0 = 0; returns (B, T, U) states.

    The input projections for all steps are batched into three matmuls up
    front; only the recurrent products stay inside the time loop.
    """
    batch, t_len, c_in = x.shape
    units = p.r_z.shape[0]
    _gru_check(c_in, units, p)
    flat = np.ascontiguousarray(x.reshape(batch * t_len, c_in))
    xz = _mm(flat, p.u_z).reshape(batch, t_len, units)
    xr = _mm(flat, p.u_r).reshape(batch, t_len, units)
    xh = _mm(flat, p.u_h).reshape(batch, t_len, units)
    zs = np.empty((batch, t_len, units))
    rs = np.empty((batch, t_len, units))
    hcs = np.empty((batch, t_len, units))
    hs = np.empty((batch, t_len, units))
    h = np.zeros((batch, units))
    for t in range(t_len):
        z = sigmoid(xz[:, t] + _mm(h, p.r_z) + p.b_z)
        r = sigmoid(xr[:, t] + _mm(h, p.r_r) + p.b_r)
        hc = np.tanh(xh[:, t] + _mm(r * h, p.r_h) + p.b_h)
        zs[:, t], rs[:, t], hcs[:, t] = z, r, hc
        h = (1.0 - z) * h + z * hc
        hs[:, t] = h
    return hs, (x, p, zs, rs, hcs, hs)


def gru_seq_bwd(gh_out, cache):
    """Backprop through time for gru_seq_fwd.

    gh_out carries the loss gradient at every emitted state (the layer
    returns full sequences). Returns the input gradient and per-parameter
    gradients accumulated over all steps.
    """
    x, p, zs, rs, hcs, hs = cache
    batch, t_len, c_in = x.shape
    units = hs.shape[2]
    gx = np.empty((batch, t_len, c_in))
    grads = {name: np.zeros_like(getattr(p, name)) for name in
             ("u_z", "r_z", "b_z", "u_r", "r_r", "b_r", "u_h", "r_h", "b_h")}
    carry = np.zeros((batch, units))
    for t in range(t_len - 1, -1, -1):
        gh = gh_out[:, t] + carry
        z, r, hc = zs[:, t], rs[:, t], hcs[:, t]
        h_prev = hs[:, t - 1] if t > 0 else np.zeros((batch, units))
        x_t = np.ascontiguousarray(x[:, t])

        gz = gh * (hc - h_prev)
        ghc = gh * z
        gh_prev = gh * (1.0 - z)

        gah = ghc * (1.0 - hc * hc)
        grh = _mm(gah, np.ascontiguousarray(p.r_h.T))  # grad w.r.t. (r * h_prev)
        gr = grh * h_prev
        gh_prev += grh * r
        gaz = gz * z * (1.0 - z)
        gar = gr * r * (1.0 - r)

        gx[:, t] = (_mm(gaz, np.ascontiguousarray(p.u_z.T))
                    + _mm(gar, np.ascontiguousarray(p.u_r.T))
                    + _mm(gah, np.ascontiguousarray(p.u_h.T)))
        gh_prev += _mm(gaz, np.ascontiguousarray(p.r_z.T))
        gh_prev += _mm(gar, np.ascontiguousarray(p.r_r.T))

        grads["u_z"] += _mmT(x_t, gaz)
        grads["r_z"] += _mmT(h_prev, gaz)
        grads["b_z"] += gaz.sum(axis=0)
        grads["u_r"] += _mmT(x_t, gar)
        grads["r_r"] += _mmT(h_prev, gar)
        grads["b_r"] += gar.sum(axis=0)
        grads["u_h"] += _mmT(x_t, gah)
        grads["r_h"] += _mmT(r * h_prev, gah)
        grads["b_h"] += gah.sum(axis=0)
        carry = gh_prev
    return gx, grads


def bigru_fwd(x, fwd, bwd):
    """Forward GRU plus a GRU over the reversed sequence, concatenated as
    [forward, backward] channels at every step."""
    if fwd.r_z.shape != bwd.r_z.shape or fwd.u_z.shape != bwd.u_z.shape:
        raise ShapeError("forward and backward GRU parameter shapes disagree")
    h_f, cache_f = gru_seq_fwd(x, fwd)
    x_rev = np.ascontiguousarray(x[:, ::-1])
    h_b_rev, cache_b = gru_seq_fwd(x_rev, bwd)
    y = np.concatenate([h_f, h_b_rev[:, ::-1]], axis=2)
    return y, (cache_f, cache_b, h_f.shape[2])


def bigru_bwd(gy, cache):
    cache_f, cache_b, units = cache
    gx_f, grads_f = gru_seq_bwd(np.ascontiguousarray(gy[:, :, :units]), cache_f)
    gx_b, grads_b = gru_seq_bwd(np.ascontiguousarray(gy[:, ::-1, units:]), cache_b)
    return gx_f + gx_b[:, ::-1], (grads_f, grads_b)


def bigru(seq, fwd, bwd):
    x3, single = _lift(seq)
    y, _ = bigru_fwd(x3, fwd, bwd)
    return y[0] if single else y


# ---------------------------------------------------------------------------
# attention

def temporal_attention_fwd(h, p):
    """Per-channel softmax weights over the time axis, multiplied back
    into the sequence elementwise."""
    batch, t_len, chans = h.shape
    if p.w.shape != (t_len, t_len):
        raise ShapeError(
            f"temporal attention is fixed to T={p.w.shape[0]}, got a length-{t_len} sequence")
    flat = np.ascontiguousarray(h.transpose(0, 2, 1).reshape(batch * chans, t_len))
    logits = _mm(flat, np.ascontiguousarray(p.w.T)) + p.b
    a_flat = softmax(logits, axis=1)
    a = a_flat.reshape(batch, chans, t_len).transpose(0, 2, 1)
    return h * a, (h, flat, a_flat, p, (batch, t_len, chans))


def temporal_attention_bwd(gy, cache):
    h, flat, a_flat, p, (batch, t_len, chans) = cache
    a = a_flat.reshape(batch, chans, t_len).transpose(0, 2, 1)
    gh = gy * a
    ga_flat = np.ascontiguousarray((gy * h).transpose(0, 2, 1).reshape(batch * chans, t_len))
    gl = a_flat * (ga_flat - np.sum(ga_flat * a_flat, axis=1, keepdims=True))
    grads = {"w": _mmT(gl, flat), "b": gl.sum(axis=0)}
    gflat = _mm(gl, p.w)
    gh += gflat.reshape(batch, chans, t_len).transpose(0, 2, 1)
    return gh, grads


def temporal_attention(h, p):
    x3, single = _lift(h)
    y, _ = temporal_attention_fwd(x3, p)
    return y[0] if single else y


def attention_weights(h, p):
    """The softmax weight tensor A (sums to 1 over time per channel)."""
    x3, single = _lift(h)
    batch, t_len, chans = x3.shape
    flat = np.ascontiguousarray(x3.transpose(0, 2, 1).reshape(batch * chans, t_len))
    a = softmax(_mm(flat, np.ascontiguousarray(p.w.T)) + p.b, axis=1)
    a = a.reshape(batch, chans, t_len).transpose(0, 2, 1)
    return a[0] if single else a


def channel_attention_fwd(h, p):
    """Squeeze (temporal mean) -> bottleneck relu -> expand sigmoid ->
    per-channel rescale in (0, 1)."""
    batch, t_len, chans = h.shape
    if p.w1.shape[0] != chans:
        raise ShapeError(
            f"channel attention expects {p.w1.shape[0]} channels, got {chans}")
    s = h.mean(axis=1)
    pre1 = _mm(s, p.w1) + p.b1
    z1 = np.maximum(pre1, 0.0)
    pre2 = _mm(z1, p.w2) + p.b2
    scale = sigmoid(pre2)
    return h * scale[:, None, :], (h, s, pre1, z1, scale, p, t_len)


def channel_attention_bwd(gy, cache):
    h, s, pre1, z1, scale, p, t_len = cache
    gh = gy * scale[:, None, :]
    gscale = (gy * h).sum(axis=1)
    gpre2 = gscale * scale * (1.0 - scale)
    gz1 = _mm(gpre2, np.ascontiguousarray(p.w2.T))
    gpre1 = gz1 * (pre1 > 0)
    gs = _mm(gpre1, np.ascontiguousarray(p.w1.T))
    grads = {
        "w1": _mmT(s, gpre1), "b1": gpre1.sum(axis=0),
        "w2": _mmT(z1, gpre2), "b2": gpre2.sum(axis=0),
    }
    gh += gs[:, None, :] / t_len
    return gh, grads


def channel_attention(h, p):
    x3, single = _lift(h)
    y, _ = channel_attention_fwd(x3, p)
    return y[0] if single else y


def channel_scales(h, p):
    """The per-channel sigmoid scales s' of the attention block."""
    x3, single = _lift(h)
    s = x3.mean(axis=1)
    z1 = np.maximum(_mm(s, p.w1) + p.b1, 0.0)
    scale = sigmoid(_mm(z1, p.w2) + p.b2)
    return scale[0] if single else scale


# ---------------------------------------------------------------------------
# pooling and dense

def global_max_pool_fwd(h):
    idx = np.argmax(h, axis=1)  # first index on ties
    y = np.take_along_axis(h, idx[:, None, :], axis=1)[:, 0, :]
    return y, (idx, h.shape)


def global_max_pool_bwd(gy, cache):
    idx, shape = cache
    gx = np.zeros(shape)
    np.put_along_axis(gx, idx[:, None, :], gy[:, None, :], axis=1)
    return gx


def global_max_pool(h):
    x3, single = _lift(h)
    y, _ = global_max_pool_fwd(x3)
    return y[0] if single else y


def dense_fwd(x, p, act="linear"):
    if x.shape[1] != p.w.shape[0]:
        raise ShapeError(
            f"dense input width {x.shape[1]} does not match weights {p.w.shape}")
    pre = _mm(x, p.w) + p.b
    if act == "relu":
        y = np.maximum(pre, 0.0)
    elif act == "sigmoid":
        y = sigmoid(pre)
    elif act == "softmax":
        y = softmax(pre, axis=1)
    elif act == "linear":
        y = pre
    else:
        raise ConfigError(f"unknown dense activation {act!r}")
    return y, (x, pre, y, act, p)


def dense_bwd(gy, cache):
    x, pre, y, act, p = cache
    if act == "relu":
        gpre = gy * (pre > 0)
    elif act == "sigmoid":
        gpre = gy * y * (1.0 - y)
    elif act == "softmax":
        gpre = y * (gy - np.sum(gy * y, axis=1, keepdims=True))
    else:
        gpre = gy
    grads = {"w": _mmT(x, gpre), "b": gpre.sum(axis=0)}
    return _mm(gpre, np.ascontiguousarray(p.w.T)), grads


def dense(x, p, act="linear"):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    y, _ = dense_fwd(x[None] if single else x, p, act)
    return y[0] if single else y
