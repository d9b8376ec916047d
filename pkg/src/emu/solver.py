"""Pseudo-spectral integrator for 2D incompressible flow in vorticity form.

The prognostic variable is the scalar vorticity ``omega`` on a doubly periodic
2pi x 2pi domain.  The streamfunction ``psi`` solves ``lap(psi) = -omega`` and
the velocity is ``(d psi/dy, -d psi/dx)``.  The tendency combines nonlinear
advection (pseudo-spectral with 2/3-rule dealiasing), viscous diffusion at
Reynolds number ``Re``, linear Rayleigh drag, stationary Kolmogorov-type
forcing, and a beta-plane Coriolis term that drives zonal jets.

Time integration is classical fixed-step RK4.  The solver state is kept
band-limited (dealiased) and exactly zero-mean at every step.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.fft as sfft

from .errors import ConfigurationError, ContractError, DivergenceError, InvalidFieldError
from .grid import Grid, ensure_field, get_grid

MEAN_TOL = 1e-10


@dataclass(frozen=True)
class FlowParams:
    """Physical and discretization parameters of one flow configuration.

    ``snapshot_stride`` solver steps separate consecutive emitted snapshots,
    so the emulator time step is ``dt_solver * snapshot_stride``.
    """

    reynolds: float = 2000.0
    drag: float = 0.1
    beta: float = 20.0
    forcing_wavenumber: int = 4
    forcing_amplitude: float = 2.0
    dt_solver: float = 1e-3
    snapshot_stride: int = 50

    def __post_init__(self):
        if not self.reynolds > 0:
            raise ConfigurationError(f"reynolds must be > 0, got {self.reynolds}")
        if not self.dt_solver > 0:
            raise ConfigurationError(f"dt_solver must be > 0, got {self.dt_solver}")
        if self.snapshot_stride < 1:
            raise ConfigurationError(
                f"snapshot_stride must be >= 1, got {self.snapshot_stride}"
            )
        if self.forcing_wavenumber < 0:
            raise ConfigurationError("forcing_wavenumber must be >= 0")

    @property
    def dt_emulator(self) -> float:
        return self.dt_solver * self.snapshot_stride

    def validate_for_grid(self, grid: Grid) -> None:
        """Forcing must survive dealiasing: k_f < min(nx, ny)/3."""
        if self.forcing_wavenumber >= min(grid.nx, grid.ny) / 3:
            raise ConfigurationError(
                f"forcing_wavenumber {self.forcing_wavenumber} does not survive "
                f"dealiasing on a {grid.nx}x{grid.ny} grid (needs < {min(grid.nx, grid.ny)/3:.1f})"
            )


@dataclass
class TrajectoryDataset:
    """An ordered sequence of vorticity snapshots from one integration.

    ``snapshots`` has shape ``(n, ny, nx)`` in float32.  ``normalization_scale``
    is the constant divisor already applied to the stored values (1.0 for raw
    solver output).
    """

    params: FlowParams
    nx: int
    ny: int
    snapshots: np.ndarray
    dt_emulator: float
    normalization_scale: float
    seed: int

    def __post_init__(self):
        if self.snapshots.ndim != 3 or self.snapshots.shape[0] < 2:
            raise ConfigurationError("dataset needs at least 2 snapshots")
        if self.snapshots.shape[1:] != (self.ny, self.nx):
            raise ConfigurationError(
                f"snapshot shape {self.snapshots.shape[1:]} != grid ({self.ny}, {self.nx})"
            )

    @property
    def n_snapshots(self) -> int:
        return int(self.snapshots.shape[0])

    def with_snapshots(self, snapshots: np.ndarray, scale: float) -> "TrajectoryDataset":
        return replace(self, snapshots=snapshots, normalization_scale=scale)


def forcing_field(grid: Grid, params: FlowParams) -> np.ndarray:
    """Stationary Kolmogorov-type forcing A*(cos(k_f x) + cos(k_f y))."""
    kf = params.forcing_wavenumber
    return params.forcing_amplitude * (np.cos(kf * grid.x) + np.cos(kf * grid.y))


def _check_zero_mean(omega: np.ndarray, name: str) -> None:
    m = float(omega.mean())
    if abs(m) > MEAN_TOL * max(1.0, float(np.max(np.abs(omega)))):
        raise InvalidFieldError(f"{name} must have zero mean, got mean={m:.3e}")


def poisson_solve(omega: np.ndarray, grid: Grid) -> np.ndarray:
    """Invert lap(psi) = -omega spectrally; the mean mode of psi is zero."""
    w = ensure_field(omega, grid, "omega")
    _check_zero_mean(w, "omega")
    wh = grid.to_spectral(w)
    ph = wh * grid.inv_k2
    return grid.to_grid(ph)


def velocity_from_vorticity(omega: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Velocity (vx, vy) = (d psi/dy, -d psi/dx) computed spectrally."""
    w = ensure_field(omega, grid, "omega")
    _check_zero_mean(w, "omega")
    ph = grid.to_spectral(w) * grid.inv_k2
    vxh = 1j * grid.ky * ph
    vyh = -1j * grid.kx * ph
    v = sfft.irfft2(np.stack([vxh, vyh]), s=grid.shape)
    return v[0], v[1]


def jacobian(omega: np.ndarray, psi: np.ndarray, grid: Grid) -> np.ndarray:
    """Advection term (d psi/dy)(d omega/dx) - (d psi/dx)(d omega/dy).

    The quadratic product is evaluated on the grid and dealiased with the
    2/3 rule, which makes the discrete advection conserve the mean, energy,
    and enstrophy integrals of band-limited inputs.
    """
    w = np.asarray(omega, dtype=np.float64)
    p = np.asarray(psi, dtype=np.float64)
    if w.shape != p.shape:
        raise InvalidFieldError(f"omega shape {w.shape} != psi shape {p.shape}")
    ensure_field(w, grid, "omega")
    wh = grid.to_spectral(w)
    ph = grid.to_spectral(p)
    derivs = np.stack([
        1j * grid.ky * ph,   # psi_y
        1j * grid.kx * ph,   # psi_x
        1j * grid.kx * wh,   # omega_x
        1j * grid.ky * wh,   # omega_y
    ])
    py, px, wx, wy = sfft.irfft2(derivs, s=grid.shape)
    nl = py * wx - px * wy
    nh = grid.to_spectral(nl) * grid.dealias
    return grid.to_grid(nh)


def _rhs_hat(wh: np.ndarray, grid: Grid, params: FlowParams, fh: np.ndarray) -> np.ndarray:
    """Tendency in spectral space.  ``wh`` must be dealiased and zero-mean."""
    ph = wh * grid.inv_k2
    vxh = 1j * grid.ky * ph
    vyh = -1j * grid.kx * ph
    wxh = 1j * grid.kx * wh
    wyh = 1j * grid.ky * wh
    vx, vy, wx, wy = sfft.irfft2(np.stack([vxh, vyh, wxh, wyh]), s=grid.shape)
    nl = vx * wx + vy * wy
    nh = sfft.rfft2(nl)
    nh *= grid.dealias
    out = -nh - (grid.k2 / params.reynolds) * wh - params.drag * wh + fh
    if params.beta != 0.0:
        out += params.beta * vyh
    out[0, 0] = 0.0
    return out


def rhs(omega: np.ndarray, params: FlowParams, grid: Grid) -> np.ndarray:
    """Full tendency d omega/dt on the grid."""
    w = ensure_field(omega, grid, "omega")
    params.validate_for_grid(grid)
    fh = grid.to_spectral(forcing_field(grid, params)) * grid.dealias
    return grid.to_grid(_rhs_hat(grid.to_spectral(w), grid, params, fh))


def _rk4_hat(wh: np.ndarray, grid: Grid, params: FlowParams, fh: np.ndarray) -> np.ndarray:
    dt = params.dt_solver
    k1 = _rhs_hat(wh, grid, params, fh)
    k2 = _rhs_hat(wh + 0.5 * dt * k1, grid, params, fh)
    k3 = _rhs_hat(wh + 0.5 * dt * k2, grid, params, fh)
    k4 = _rhs_hat(wh + dt * k3, grid, params, fh)
    return wh + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step(omega: np.ndarray, params: FlowParams, grid: Grid) -> np.ndarray:
    """Advance the vorticity by one classical RK4 step of ``dt_solver``."""
    w = ensure_field(omega, grid, "omega")
    params.validate_for_grid(grid)
    fh = grid.to_spectral(forcing_field(grid, params)) * grid.dealias
    wh = grid.to_spectral(w) * grid.dealias
    wh[0, 0] = 0.0
    out = _rk4_hat(wh, grid, params, fh)
    if not np.isfinite(out.view(np.float64)).all():
        raise DivergenceError("RK4 step produced non-finite values", step=1)
    return grid.to_grid(out)


def random_initial_vorticity(grid: Grid, seed: int, k_center: int, half_width: int = 2) -> np.ndarray:
    """Isotropic random vorticity, band-limited to |k| in [k_center-hw, k_center+hw].

    Zero-mean, unit variance, deterministic in the seed.
    """
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(grid.shape)
    nh = grid.to_spectral(noise)
    kmag = np.sqrt(grid.k2)
    band = (kmag >= max(k_center - half_width, 1)) & (kmag <= k_center + half_width)
    nh *= band & grid.dealias
    nh[0, 0] = 0.0
    w = grid.to_grid(nh)
    std = w.std()
    if std == 0.0:
        raise ConfigurationError("initial-condition band is empty on this grid")
    return w / std


def energy(omega: np.ndarray, grid: Grid) -> float:
    """Domain mean of the kinetic energy density 0.5*(vx^2 + vy^2).

    Accepts any finite field (emulator output included); the mean mode
    carries no velocity and is dropped.
    """
    w = ensure_field(omega, grid, "omega")
    ph = grid.to_spectral(w) * grid.inv_k2
    vxh = 1j * grid.ky * ph
    vyh = -1j * grid.kx * ph
    v = sfft.irfft2(np.stack([vxh, vyh]), s=grid.shape)
    return float(0.5 * np.mean(v[0] * v[0] + v[1] * v[1]))


def enstrophy(omega: np.ndarray, grid: Grid) -> float:
    """Domain mean of 0.5*omega^2."""
    w = ensure_field(omega, grid, "omega")
    return float(0.5 * np.mean(w * w))


def energy_series(snapshots: np.ndarray, grid: Grid) -> np.ndarray:
    """Kinetic energy of each snapshot in a (n, ny, nx) stack."""
    return np.array([energy(s, grid) for s in snapshots], dtype=np.float64)


def generate_trajectory(
    grid: Grid,
    seed: int,
    params: FlowParams,
    n_snapshots: int,
    spinup_steps: int = 10_000,
) -> TrajectoryDataset:
    """Integrate from a seeded random initial condition and record snapshots.

    The first ``spinup_steps`` solver steps are discarded; afterwards one
    snapshot is emitted every ``snapshot_stride`` steps, the first immediately
    after spinup.  Deterministic given ``(seed, params)``.
    """
    if n_snapshots < 2:
        raise ContractError(f"n_snapshots must be >= 2, got {n_snapshots}")
    params.validate_for_grid(grid)
    fh = grid.to_spectral(forcing_field(grid, params)) * grid.dealias

    w0 = random_initial_vorticity(grid, seed, params.forcing_wavenumber)
    wh = grid.to_spectral(w0) * grid.dealias
    wh[0, 0] = 0.0

    step = 0

    def advance(n_steps):
        nonlocal wh, step
        for _ in range(n_steps):
            wh = _rk4_hat(wh, grid, params, fh)
            step += 1
            if step % 200 == 0 and not np.isfinite(wh.view(np.float64)).all():
                raise DivergenceError(
                    f"integration diverged at solver step {step}", step=step
                )

    advance(spinup_steps)
    snaps = np.empty((n_snapshots, grid.ny, grid.nx), dtype=np.float32)
    for i in range(n_snapshots):
        if i > 0:
            advance(params.snapshot_stride)
        snap = grid.to_grid(wh)
        if not np.isfinite(snap).all():
            raise DivergenceError(f"integration diverged at solver step {step}", step=step)
        snaps[i] = snap.astype(np.float32)
    return TrajectoryDataset(
        params=params,
        nx=grid.nx,
        ny=grid.ny,
        snapshots=snaps,
        dt_emulator=params.dt_emulator,
        normalization_scale=1.0,
        seed=seed,
    )


def stiff_scheme_demo(lam: float, dt: float, n_steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Explicit vs implicit Euler on the stiff decay problem du/dt = lam*u, u0=1.

    The explicit trace uses u <- u + dt*lam*u.  The implicit trace solves
    u_next = u + dt*lam*u_next by Newton iteration to residual <= 1e-14.
    Returns both traces (length n_steps+1) for inspection.
    """
    if lam > 0:
        raise ConfigurationError(f"stiff demo expects lambda <= 0, got {lam}")
    if lam == 0:
        warnings.warn("lambda = 0: both schemes are the identity", stacklevel=2)
    explicit = np.empty(n_steps + 1)
    implicit = np.empty(n_steps + 1)
    explicit[0] = implicit[0] = 1.0
    ue = ui = 1.0
    for n in range(1, n_steps + 1):
        ue = ue + dt * lam * ue
        # Newton on g(u) = u - ui - dt*lam*u; g'(u) = 1 - dt*lam
        u = ui
        for _ in range(50):
            g = u - ui - dt * lam * u
            if abs(g) <= 1e-14:
                break
            u = u - g / (1.0 - dt * lam)
        ui = u
        explicit[n] = ue
        implicit[n] = ui
    return explicit, implicit
