"""Numba implementations of the hot inner loops.

Patch extraction works on channels-last (B, H, W, C) arrays so the innermost
copy runs over the contiguous channel axis.  Everything is single-threaded:
results must not depend on thread count, and per-call thread dispatch costs
more than it buys at these sizes.  The scatter-add accumulation order
(b, yo, xo, ky, kx) matches the numpy fallback bit for bit.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _wrapped(n_out, k, stride, n):
    pad = k // 2
    idx = np.empty((n_out, k), dtype=np.int64)
    for o in range(n_out):
        for j in range(k):
            idx[o, j] = (o * stride + j - pad) % n
    return idx


@njit(cache=True)
def im2col(x, k, stride, out):
    """Gather periodic k x k patches of x (B,H,W,C) into out (B*Ho*Wo, k*k*C)."""
    B, H, W, C = x.shape
    Ho = H // stride
    Wo = W // stride
    ys = _wrapped(Ho, k, stride, H)
    xs = _wrapped(Wo, k, stride, W)
    for b in range(B):
        for yo in range(Ho):
            for xo in range(Wo):
                m = (b * Ho + yo) * Wo + xo
                for ky in range(k):
                    iy = ys[yo, ky]
                    for kx in range(k):
                        ix = xs[xo, kx]
                        base = (ky * k + kx) * C
                        for c in range(C):
                            out[m, base + c] = x[b, iy, ix, c]
    return out


@njit(cache=True)
def col2im(cols, B, H, W, C, k, stride, out):
    """Scatter-add patch gradients (B*Ho*Wo, k*k*C) back onto out (B,H,W,C)."""
    Ho = H // stride
    Wo = W // stride
    ys = _wrapped(Ho, k, stride, H)
    xs = _wrapped(Wo, k, stride, W)
    for b in range(B):
        for yo in range(Ho):
            for xo in range(Wo):
                m = (b * Ho + yo) * Wo + xo
                for ky in range(k):
                    iy = ys[yo, ky]
                    for kx in range(k):
                        ix = xs[xo, kx]
                        base = (ky * k + kx) * C
                        for c in range(C):
                            out[b, iy, ix, c] += cols[m, base + c]
    return out


@njit(cache=True)
def adamw_update(w, g, m, v, lr, beta1, omb1, beta2, omb2, eps, weight_decay, bc1, bc2):
    """Fused in-place AdamW step on flat arrays (decoupled weight decay).

    All scalars must already be cast to the array dtype so arithmetic runs at
    the same precision as the numpy fallback.
    """
    for i in range(w.size):
        gi = g[i]
        m[i] = beta1 * m[i] + omb1 * gi
        v[i] = beta2 * v[i] + omb2 * (gi * gi)
        mhat = m[i] / bc1
        vhat = v[i] / bc2
        w[i] = w[i] - lr * (mhat / (np.sqrt(vhat) + eps) + weight_decay * w[i])
    return w
