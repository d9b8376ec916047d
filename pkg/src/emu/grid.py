"""Spectral grid utilities for the doubly periodic 2pi x 2pi domain.

Fields are real arrays of shape ``(ny, nx)`` indexed ``[y][x]``.  Because the
domain length is fixed at 2pi, physical wavenumbers coincide with integer mode
indices.  Spectral coefficients use the numpy ``rfft2`` half-spectrum layout:
full ``ky`` range, non-negative ``kx`` (shape ``(ny, nx//2 + 1)``).
"""

from __future__ import annotations

import numpy as np
import scipy.fft as sfft

from .errors import ConfigurationError, InvalidFieldError

DOMAIN_LENGTH = 2.0 * np.pi


def is_valid_grid_size(n: int) -> bool:
    """Grid sizes must be powers of two, at least 8 (FFT requirement)."""
    return n >= 8 and (n & (n - 1)) == 0


class Grid:
    """Precomputed wavenumber arrays and masks for one resolution.

    Attributes
    ----------
    nx, ny : int
        Points per dimension (powers of two).
    kx, ky : ndarray
        Integer wavenumbers on the rfft2 layout, shape ``(ny, nx//2+1)``.
    k2 : ndarray
        ``kx**2 + ky**2``.
    inv_k2 : ndarray
        ``1/k2`` with the mean mode zeroed.
    dealias : ndarray of bool
        2/3-rule mask: keeps ``|kx| <= nx//3`` and ``|ky| <= ny//3``.
    """

    def __init__(self, nx: int, ny: int):
        if not (is_valid_grid_size(nx) and is_valid_grid_size(ny)):
            raise ConfigurationError(
                f"grid size must be a power of two >= 8, got nx={nx}, ny={ny}"
            )
        self.nx = nx
        self.ny = ny
        self.shape = (ny, nx)

        x1 = np.arange(nx) * (DOMAIN_LENGTH / nx)
        y1 = np.arange(ny) * (DOMAIN_LENGTH / ny)
        self.x, self.y = np.meshgrid(x1, y1)

        kx1 = np.arange(nx // 2 + 1, dtype=np.float64)
        ky1 = np.fft.fftfreq(ny, d=1.0 / ny).astype(np.float64)
        self.kx, self.ky = np.meshgrid(kx1, ky1)
        self.k2 = self.kx**2 + self.ky**2
        with np.errstate(divide="ignore"):
            inv = np.where(self.k2 > 0.0, 1.0 / np.where(self.k2 > 0, self.k2, 1.0), 0.0)
        self.inv_k2 = inv
        self.dealias = (np.abs(self.kx) <= nx // 3) & (np.abs(self.ky) <= ny // 3)

    def to_spectral(self, field: np.ndarray) -> np.ndarray:
        return sfft.rfft2(field)

    def to_grid(self, coeffs: np.ndarray) -> np.ndarray:
        return sfft.irfft2(coeffs, s=self.shape)

    def __repr__(self):
        return f"Grid(nx={self.nx}, ny={self.ny})"


_GRID_CACHE: dict[tuple[int, int], Grid] = {}


def get_grid(nx: int, ny: int) -> Grid:
    """Return a cached Grid for the given resolution."""
    key = (nx, ny)
    if key not in _GRID_CACHE:
        _GRID_CACHE[key] = Grid(nx, ny)
    return _GRID_CACHE[key]


def ensure_field(field: np.ndarray, grid: Grid, name: str = "field") -> np.ndarray:
    """Validate a real grid field against its grid; returns it as float64."""
    arr = np.asarray(field, dtype=np.float64)
    if arr.shape != grid.shape:
        raise InvalidFieldError(
            f"{name} has shape {arr.shape}, expected {grid.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise InvalidFieldError(f"{name} contains non-finite values")
    return arr
