"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

A Tensor wraps a numpy array plus an optional backward closure; the implicit
graph formed by parent links is walked once, in reverse topological order, by
``backward``.  Gradients accumulate additively across fan-out.  Only the
primitives the emulator network needs are provided; convolution padding is
periodic (wrap) everywhere, matching the doubly periodic domain.
"""

from __future__ import annotations

import numpy as np
import scipy.fft as sfft

from . import kernels
from .errors import ConfigurationError, ContractError, ShapeError

_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_A = 0.044715


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad=False, parents=(), backward=None):
        arr = np.asarray(values)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.values = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def size(self):
        return self.values.size

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray):
    """Add a gradient contribution that may alias upstream storage."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.values.dtype, copy=True)
    else:
        t.grad += g


def _accumulate_owned(t: Tensor, g: np.ndarray):
    """Add a freshly allocated gradient the op gives up ownership of."""
    if not t.requires_grad:
        return
    if t.grad is None and g.dtype == t.values.dtype:
        t.grad = g
    else:
        _accumulate(t, g)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _make(values, parents, backward):
    if any(p.requires_grad for p in parents):
        return Tensor(values, requires_grad=True, parents=tuple(parents), backward=backward)
    return Tensor(values)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_vals = a.values + b.values

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(out_vals, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_vals = a.values - b.values

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(out_vals, (a, b), bwd)


def multiply(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_vals = a.values * b.values

    def bwd(g):
        _accumulate(a, _unbroadcast(g * b.values, a.shape))
        _accumulate(b, _unbroadcast(g * a.values, b.shape))

    return _make(out_vals, (a, b), bwd)


def scale(a, alpha: float) -> Tensor:
    a = _as_tensor(a)
    c = a.values.dtype.type(alpha)

    def bwd(g):
        _accumulate(a, g * c)

    return _make(a.values * c, (a,), bwd)


def _to_nhwc(xv):
    return np.ascontiguousarray(xv.transpose(0, 2, 3, 1))


def _to_nchw(xv):
    return np.ascontiguousarray(xv.transpose(0, 3, 1, 2))


def _weight_matrix(wv):
    # (Co, Ci, K, K) -> (K*K*Ci, Co), row order (ky, kx, ci)
    Co, Ci, K, _ = wv.shape
    return np.ascontiguousarray(wv.transpose(2, 3, 1, 0)).reshape(K * K * Ci, Co)


def _flip_matrix(wv):
    # adjoint kernel: correlate the output gradient with the spatially
    # flipped kernel, channels swapped: (K*K*Co, Ci), row order (ky, kx, co)
    Co, Ci, K, _ = wv.shape
    wt = wv[:, :, ::-1, ::-1].transpose(2, 3, 0, 1)
    return np.ascontiguousarray(wt).reshape(K * K * Co, Ci)


def _conv_raw(xv, wv, bv, stride):
    B, C, H, W = xv.shape
    Co, Ci, K, _ = wv.shape
    xt = _to_nhwc(xv)
    if K == 1 and stride == 1:
        cols = xt.reshape(B * H * W, C)
    else:
        cols = kernels.im2col(xt, K, stride)
    y = cols @ _weight_matrix(wv)
    if bv is not None:
        y += bv
    Ho, Wo = H // stride, W // stride
    return _to_nchw(y.reshape(B, Ho, Wo, Co))


def conv2d(x, w, b=None, stride: int = 1) -> Tensor:
    """2D cross-correlation with periodic (wrap) padding, odd kernel size.

    x: (B, C_in, H, W); w: (C_out, C_in, K, K); b: (C_out,) or None.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    b = _as_tensor(b) if b is not None else None
    if x.values.ndim != 4 or w.values.ndim != 4:
        raise ShapeError(f"conv2d expects 4D input/kernel, got {x.shape} and {w.shape}")
    B, C, H, W_ = x.shape
    Co, Ci, K, K2 = w.shape
    if Ci != C:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {w.shape}")
    if K != K2 or K % 2 == 0:
        raise ShapeError(f"conv2d kernel must be square with odd size, got {w.shape}")
    if H % stride or W_ % stride:
        raise ShapeError(f"stride {stride} must divide spatial dims {(H, W_)}")
    needs_grad = x.requires_grad or w.requires_grad or (b is not None and b.requires_grad)

    xt = _to_nhwc(x.values)
    if K == 1 and stride == 1:
        cols = xt.reshape(B * H * W_, C)
    else:
        cols = kernels.im2col(xt, K, stride)
    y = cols @ _weight_matrix(w.values)
    if b is not None:
        y += b.values
    Ho, Wo = H // stride, W_ // stride
    out_vals = _to_nchw(y.reshape(B, Ho, Wo, Co))
    if not needs_grad:
        cols = None  # nothing to cache

    def bwd(g):
        M = B * Ho * Wo
        g_nhwc = _to_nhwc(g)
        gm = g_nhwc.reshape(M, Co)
        if w.requires_grad:
            dw = (cols.T @ gm).reshape(K, K, Ci, Co)
            _accumulate_owned(w, np.ascontiguousarray(dw.transpose(3, 2, 0, 1)))
        if b is not None and b.requires_grad:
            _accumulate(b, gm.sum(axis=0))
        if x.requires_grad:
            if K == 1 and stride == 1:
                dx = gm @ w.values.reshape(Co, Ci)
            elif stride == 1:
                dx = kernels.im2col(g_nhwc, K, 1) @ _flip_matrix(w.values)
            else:
                cols_g = gm @ _weight_matrix(w.values).T
                dx = kernels.col2im(cols_g, (B, H, W_, C), K, stride)
                _accumulate_owned(x, _to_nchw(dx))
                return
            _accumulate_owned(x, _to_nchw(dx.reshape(B, H, W_, C)))

    parents = (x, w) if b is None else (x, w, b)
    return _make(out_vals, parents, bwd)


def group_norm(x, gamma, beta, groups: int, eps: float = 1e-5) -> Tensor:
    """Normalize over (C/groups, H, W) blocks per sample, then scale/shift."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    B, C, H, W = x.shape
    if C % groups:
        raise ConfigurationError(f"channels {C} not divisible by groups {groups}")
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"norm scale/shift must have shape ({C},)")
    xg = x.values.reshape(B, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    sq = np.einsum("bgi,bgi->bg", xg, xg) / xg.shape[2]
    var = np.maximum(sq[..., None] - mu * mu, 0.0)
    inv = 1.0 / np.sqrt(var + x.values.dtype.type(eps))
    xhat = ((xg - mu) * inv).reshape(B, C, H, W)
    out_vals = xhat * gamma.values[None, :, None, None] + beta.values[None, :, None, None]

    def bwd(g):
        if gamma.requires_grad:
            _accumulate(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            _accumulate(beta, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxhat = (g * gamma.values[None, :, None, None]).reshape(B, groups, -1)
            xh = xhat.reshape(B, groups, -1)
            n = dxhat.shape[2]
            m1 = (dxhat.sum(axis=2, keepdims=True)) / n
            m2 = np.einsum("bgi,bgi->bg", dxhat, xh)[..., None] / n
            dx = inv * (dxhat - m1 - xh * m2)
            _accumulate_owned(x, dx.reshape(B, C, H, W))

    return _make(out_vals, (x, gamma, beta), bwd)


def gelu(x) -> Tensor:
    """GELU in the tanh form 0.5*x*(1 + tanh(c*(x + a*x^3)))."""
    x = _as_tensor(x)
    xv = x.values
    c = xv.dtype.type(_GELU_C)
    a = xv.dtype.type(_GELU_A)
    t = np.tanh(c * (xv + a * xv * xv * xv))
    out_vals = 0.5 * xv * (1.0 + t)

    def bwd(g):
        du = c * (1.0 + 3.0 * a * xv * xv)
        _accumulate_owned(x, g * (0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * du))

    return _make(out_vals, (x,), bwd)


def down2(x) -> Tensor:
    """2x mean-pool on the trailing two axes of (B, C, H, W)."""
    x = _as_tensor(x)
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"down2 needs even spatial dims, got {(H, W)}")
    out_vals = x.values.reshape(B, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))

    def bwd(g):
        q = x.values.dtype.type(0.25)
        _accumulate(x, np.repeat(np.repeat(g * q, 2, axis=2), 2, axis=3))

    return _make(out_vals, (x,), bwd)


def up2(x) -> Tensor:
    """2x nearest-neighbour upsampling on the trailing two axes."""
    x = _as_tensor(x)
    out_vals = np.repeat(np.repeat(x.values, 2, axis=2), 2, axis=3)

    def bwd(g):
        B, C, H2, W2 = g.shape
        _accumulate(x, g.reshape(B, C, H2 // 2, 2, W2 // 2, 2).sum(axis=(3, 5)))

    return _make(out_vals, (x,), bwd)


def concat(tensors, axis: int = 1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    out_vals = np.concatenate([t.values for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(sl)])

    return _make(out_vals, tuple(ts), bwd)


def _spectral_row_index(H, m):
    # retained ky rows: [0..m-1] then [-(m-1)..-1]
    return np.concatenate([np.arange(m), np.arange(H - m + 1, H)])


def _conjugate_row_perm(m):
    # permutation mapping the row of ky to the row of -ky
    n = 2 * m - 1
    perm = np.zeros(n, dtype=np.intp)
    for j in range(1, m):
        perm[j] = n - j
        perm[n - j] = j
    return perm


def spectral_conv_depthwise(x, w, mode_cap: int) -> Tensor:
    """Per-channel multiplication of retained Fourier modes by complex weights.

    x: (B, C, H, W) real.  w: (C, 2*mode_cap-1, mode_cap, 2) real storage of
    complex weights for ky in [-(m-1), m-1] and kx in [0, m).  The kx = 0
    column is Hermitian-symmetrized so the retained half-spectrum stays the
    transform of a real field; modes beyond the cap are zeroed.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    B, C, H, W_ = x.shape
    m = int(mode_cap)
    if m < 1 or m > min(H, W_) // 2:
        raise ConfigurationError(
            f"mode_cap must be in [1, min(H,W)/2] = [1, {min(H, W_)//2}], got {m}"
        )
    if w.shape != (C, 2 * m - 1, m, 2):
        raise ShapeError(f"spectral weights must have shape {(C, 2*m-1, m, 2)}, got {w.shape}")
    rows = _spectral_row_index(H, m)
    perm = _conjugate_row_perm(m)

    wc = w.values[..., 0] + 1j * w.values[..., 1]
    wsym = wc.copy()
    wsym[:, :, 0] = 0.5 * (wc[:, :, 0] + np.conj(wc[:, perm, 0]))

    def forward_modes(v):
        # retained half-spectrum block (B, C, 2m-1, m): full transform along
        # the last axis, then the row transform on the kept columns only
        cols = sfft.rfft(v, axis=-1)[..., :m]
        return sfft.fft(cols, axis=-2)[:, :, rows, :]

    def inverse_modes(block, dtype):
        full = np.zeros((block.shape[0], block.shape[1], H, m), dtype=block.dtype)
        full[:, :, rows, :] = block
        cols = sfft.ifft(full, axis=-2)
        return sfft.irfft(cols, n=W_, axis=-1).astype(dtype, copy=False)

    xh_r = forward_modes(x.values)
    out_vals = inverse_modes(xh_r * wsym[None], x.values.dtype)

    def bwd(g):
        gh_r = forward_modes(g)
        if x.requires_grad:
            _accumulate_owned(x, inverse_modes(gh_r * np.conj(wsym[None]), x.values.dtype))
        if w.requires_grad:
            # d(loss)/d(wsym) under the real inner product; interior kx columns
            # appear twice in the full spectrum.
            h = (gh_r * np.conj(xh_r)).sum(axis=0)
            mult = np.full(m, 2.0 / (H * W_))
            mult[0] = 1.0 / (H * W_)
            h = h * mult[None, None, :]
            dsym_re = h.real
            dsym_im = h.imag
            dre = dsym_re.copy()
            dim = dsym_im.copy()
            # distribute the kx = 0 symmetrization: wsym0 = (w0 + conj(w0[perm]))/2
            dre[:, :, 0] = 0.5 * (dsym_re[:, :, 0] + dsym_re[:, perm, 0])
            dim[:, :, 0] = 0.5 * (dsym_im[:, :, 0] - dsym_im[:, perm, 0])
            _accumulate(w, np.stack([dre, dim], axis=-1).astype(w.values.dtype))

    return _make(out_vals, (x, w), bwd)


def l1_mean(x) -> Tensor:
    """Mean absolute value, as a scalar tensor."""
    x = _as_tensor(x)
    out_vals = np.abs(x.values).mean()

    def bwd(g):
        _accumulate(x, g * np.sign(x.values) / x.size)

    return _make(np.asarray(out_vals, dtype=x.dtype), (x,), bwd)


def l2_mean(x) -> Tensor:
    """Mean squared value, as a scalar tensor."""
    x = _as_tensor(x)
    out_vals = np.mean(x.values * x.values)

    def bwd(g):
        _accumulate(x, g * (2.0 / x.size) * x.values)

    return _make(np.asarray(out_vals, dtype=x.dtype), (x,), bwd)


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every reachable requires_grad tensor.

    Reverse topological sweep; fan-out gradients are summed.  Repeatable
    bit-exactly for a fixed graph.
    """
    if loss.shape != ():
        raise ContractError(f"backward expects a scalar loss, got shape {loss.shape}")
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones((), dtype=loss.dtype)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
