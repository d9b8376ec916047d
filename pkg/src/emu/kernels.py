"""Backend selection for the hot numeric kernels.

The numba JIT path is used by default.  Set ``EMU_NUMBA=0`` to force the
pure-numpy fallback (useful for debugging and as the baseline in
``benchmarks/bench_kernels.py``).  Both backends produce bit-identical
results; the test suite asserts this.
"""

import os

import numpy as np

from . import _kernels_numpy

# The network's matrix products are narrow; on the 2-4 core machines this
# package targets, multi-threaded BLAS loses to a single thread fighting the
# gather kernels for cache.  Override with EMU_BLAS_THREADS if profiling says
# otherwise on your hardware.
try:
    from threadpoolctl import threadpool_limits

    threadpool_limits(int(os.environ.get("EMU_BLAS_THREADS", "1")), user_api="blas")
except Exception:  # pragma: no cover - threadpoolctl is optional
    pass

_flag = os.environ.get("EMU_NUMBA", "1").strip().lower()
_want_numba = _flag not in ("0", "false", "no", "off")

if _want_numba:
    try:
        from . import _kernels_numba as _impl

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _impl = _kernels_numpy
        NUMBA_ENABLED = False
else:
    _impl = _kernels_numpy
    NUMBA_ENABLED = False


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"


def im2col(x: np.ndarray, k: int, stride: int = 1) -> np.ndarray:
    """Periodic patch extraction: channels-last (B,H,W,C) -> (B*Ho*Wo, k*k*C)."""
    B, H, W, C = x.shape
    Ho, Wo = H // stride, W // stride
    out = np.empty((B * Ho * Wo, k * k * C), dtype=x.dtype)
    return _impl.im2col(np.ascontiguousarray(x), k, stride, out)


def col2im(cols: np.ndarray, shape: tuple, k: int, stride: int = 1) -> np.ndarray:
    """Adjoint of im2col: scatter-add patches back to channels-last (B,H,W,C)."""
    B, H, W, C = shape
    out = np.zeros(shape, dtype=cols.dtype)
    return _impl.col2im(np.ascontiguousarray(cols), B, H, W, C, k, stride, out)


def adamw_update(w, g, m, v, lr, beta1, beta2, eps, weight_decay, step):
    """In-place AdamW with bias correction on flat float arrays."""
    t = w.dtype.type
    return _impl.adamw_update(
        w, g, m, v,
        t(lr), t(beta1), t(1.0 - beta1), t(beta2), t(1.0 - beta2),
        t(eps), t(weight_decay),
        t(1.0 - beta1**step), t(1.0 - beta2**step),
    )
