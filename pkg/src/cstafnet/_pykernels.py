"""Numpy fallback for the compiled kernel core (_ckernels).

Both backends implement the same accumulation-order contract so their
outputs are bit-identical:

  matmul     out[m,n] += a[m,k] * b[k,n], k ascending, from zero
  conv fwd   y[b,t,f] += xp[b,t+j,c] * w[j,c,f], (j,c) ascending, from zero
  conv bwd_x gxp[b,t+j,c] += gy[b,t,f] * w[j,c,f], (j,f) ascending, from zero
  conv bwd_w gw[j,c,f] = sum over (b,t) ascending, from zero

All inputs are expected to be C-contiguous float64; callers go through
cstafnet.backend which enforces that.
"""

import numpy as np


def matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(k):
        out += a[:, i, None] * b[i, :]
    return out


def conv1d_fwd(xp, w, t_out):
    """Correlate a zero-padded sequence batch with a filter bank.

    xp: (B, T + k - 1, C) padded input, w: (k, C, F). Returns (B, T, F)
    without bias or activation (the caller applies those).
    """
    batch = xp.shape[0]
    k, c_in, filters = w.shape
    y = np.zeros((batch, t_out, filters))
    for j in range(k):
        for c in range(c_in):
            y += xp[:, j:j + t_out, c, None] * w[j, c, :]
    return y


def conv1d_bwd_x(gy, w):
    """Gradient of conv1d_fwd w.r.t. the padded input. Returns (B, T+k-1, C)."""
    batch, t_out, filters = gy.shape
    k, c_in, _ = w.shape
    gxp = np.zeros((batch, t_out + k - 1, c_in))
    for j in range(k):
        for f in range(filters):
            gxp[:, j:j + t_out, :] += gy[:, :, f, None] * w[j, :, f]
    return gxp


def conv1d_bwd_w(xp, gy):
    """Gradient of conv1d_fwd w.r.t. the filters. Returns (k, C, F)."""
    batch, t_out, filters = gy.shape
    c_in = xp.shape[2]
    k = xp.shape[1] - t_out + 1
    gw = np.empty((k, c_in, filters))
    gy_flat = np.ascontiguousarray(gy.reshape(batch * t_out, filters))
    for j in range(k):
        xp_j = np.ascontiguousarray(
            xp[:, j:j + t_out, :].reshape(batch * t_out, c_in).T)
        gw[j] = matmul(xp_j, gy_flat)
    return gw
