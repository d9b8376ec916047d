"""Pure-numpy fallbacks for the hot kernels.

Semantics (including accumulation order for the scatter-add) match the numba
versions exactly; see ``emu.kernels`` for backend selection.
"""

import numpy as np


def _wrap_indices(n_out, k, stride, n):
    # (n_out, k) wrapped source indices for one axis
    pad = k // 2
    return (np.arange(n_out)[:, None] * stride + np.arange(k)[None, :] - pad) % n


def im2col(x, k, stride, out):
    B, H, W, C = x.shape
    Ho = H // stride
    Wo = W // stride
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)), mode="wrap")
    sb, sy, sx, sc = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(B, Ho, Wo, k, k, C),
        strides=(sb, sy * stride, sx * stride, sy, sx, sc),
    )
    out[...] = view.reshape(B * Ho * Wo, k * k * C)
    return out


def col2im(cols, B, H, W, C, k, stride, out):
    Ho = H // stride
    Wo = W // stride
    ys = _wrap_indices(Ho, k, stride, H)
    xs = _wrap_indices(Wo, k, stride, W)
    vals = cols.reshape(B, Ho, Wo, k, k, C)
    bi = np.arange(B)[:, None, None, None, None]
    yi = ys[None, :, None, :, None]
    xi = xs[None, None, :, None, :]
    np.add.at(out, (bi, yi, xi), vals)
    return out


def adamw_update(w, g, m, v, lr, beta1, omb1, beta2, omb2, eps, weight_decay, bc1, bc2):
    m *= beta1
    m += omb1 * g
    v *= beta2
    v += omb2 * (g * g)
    mhat = m / bc1
    vhat = v / bc2
    w -= lr * (mhat / (np.sqrt(vhat) + eps) + weight_decay * w)
    return w
