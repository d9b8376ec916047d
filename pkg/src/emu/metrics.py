"""Evaluation suite: rollout MSE, energy-based stability, spectra, zonal mean,
and principal-component autocorrelation.

All metrics are pure functions of arrays; CSV emitters live at the bottom.
Spectral quantities use the convention that binned energies sum to the domain
mean kinetic energy (discrete Parseval identity).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .errors import ContractError, ShapeError
from .grid import Grid

STABILITY_SIGMA = 5.0
REFERENCE_SIGMA = 4.0


def rollout_mse(predicted: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Grid-mean squared error per step for one trajectory pair."""
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise ShapeError(f"predicted {predicted.shape} vs truth {truth.shape}")
    d = predicted.astype(np.float64) - truth.astype(np.float64)
    return np.mean(d * d, axis=(1, 2))


def aggregate_mse(per_trial: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard deviation across trials, per step."""
    stack = np.stack(per_trial)
    return stack.mean(axis=0), stack.std(axis=0)


@dataclass
class StabilityReport:
    energy_series: list
    reference_mean: float
    reference_std: float
    stable: np.ndarray
    first_violation_step: list
    eval_stride: int

    @property
    def stability_rate(self) -> float:
        return float(np.count_nonzero(self.stable)) / len(self.stable)


def stability_rate(
    energy_series: list[np.ndarray],
    reference: np.ndarray,
    eval_stride: int = 100,
) -> StabilityReport:
    """Flag each trajectory stable iff its energy stays within 5 sigma of the
    reference mean at every sampled step.  A single excursion is final: the
    verdict never recovers.
    """
    if len(energy_series) == 0 or len(reference) == 0:
        raise ContractError("stability_rate needs nonempty inputs")
    reference = np.asarray(reference, dtype=np.float64)
    mu = float(reference.mean())
    sigma = float(reference.std())
    if sigma > 0 and np.any(np.abs(reference - mu) > REFERENCE_SIGMA * sigma):
        warnings.warn(
            "reference trajectory exceeds 4 sigma of its own mean; "
            "stability thresholds may be unreliable",
            stacklevel=2,
        )
    stable = np.ones(len(energy_series), dtype=bool)
    first_violation = []
    for i, series in enumerate(energy_series):
        series = np.asarray(series, dtype=np.float64)
        sampled = series[::eval_stride]
        bad = np.abs(sampled - mu) > STABILITY_SIGMA * sigma
        if bad.any():
            stable[i] = False
            first_violation.append(int(np.argmax(bad)) * eval_stride)
        else:
            first_violation.append(None)
    return StabilityReport(
        energy_series=list(energy_series),
        reference_mean=mu,
        reference_std=sigma,
        stable=stable,
        first_violation_step=first_violation,
        eval_stride=eval_stride,
    )


@dataclass
class SpectrumProfile:
    """Radially binned kinetic energy plus the raw 2D transform magnitude."""

    wavenumbers: np.ndarray
    energy: np.ndarray
    transform_magnitude: np.ndarray

    @property
    def total_energy(self) -> float:
        return float(self.energy.sum())


def transform_magnitude(field: np.ndarray) -> np.ndarray:
    """|FFT2| of a field, normalized by the number of grid points."""
    f = np.asarray(field, dtype=np.float64)
    return np.abs(sfft.fft2(f)) / f.size


def energy_spectrum(omega: np.ndarray, grid: Grid, k_max: int | None = None) -> SpectrumProfile:
    """Radial kinetic-energy spectrum of a vorticity field.

    Bins run over k = 1..k_max (default min(nx, ny)//3, the dealiased range);
    energy in modes whose rounded radius exceeds k_max is accumulated into the
    last bin so the binned total equals the mean kinetic energy exactly.
    """
    w = np.asarray(omega, dtype=np.float64)
    ny, nx = grid.ny, grid.nx
    if w.shape != (ny, nx):
        raise ShapeError(f"field shape {w.shape} != grid {(ny, nx)}")
    if k_max is None:
        k_max = min(nx, ny) // 3
    wh = sfft.rfft2(w)
    ph = wh * grid.inv_k2
    vxh = 1j * grid.ky * ph
    vyh = -1j * grid.kx * ph
    # multiplicity of each rfft column in the full spectrum
    mult = np.full(nx // 2 + 1, 2.0)
    mult[0] = 1.0
    mult[-1] = 1.0
    modal = 0.5 * (np.abs(vxh) ** 2 + np.abs(vyh) ** 2) * mult[None, :] / (nx * ny) ** 2
    kr = np.minimum(np.rint(np.sqrt(grid.k2)).astype(int), k_max)
    binned = np.bincount(kr.ravel(), weights=modal.ravel(), minlength=k_max + 1)
    return SpectrumProfile(
        wavenumbers=np.arange(1, k_max + 1),
        energy=binned[1:],
        transform_magnitude=transform_magnitude(w),
    )


def spectrum_error_short(pred_seq: np.ndarray, truth_seq: np.ndarray) -> float:
    """Mean over time of the mean absolute difference of transform magnitudes."""
    pred_seq = np.asarray(pred_seq)
    truth_seq = np.asarray(truth_seq)
    if pred_seq.shape != truth_seq.shape:
        raise ShapeError(f"pred {pred_seq.shape} vs truth {truth_seq.shape}")
    errs = [
        np.abs(transform_magnitude(p) - transform_magnitude(t)).mean()
        for p, t in zip(pred_seq, truth_seq)
    ]
    return float(np.mean(errs))


def mean_transform_magnitude(seq: np.ndarray) -> np.ndarray:
    return np.mean([transform_magnitude(s) for s in np.asarray(seq)], axis=0)


def spectrum_error_long(pred_seq: np.ndarray, reference_mean: np.ndarray) -> float:
    """Mean absolute difference between the time-mean predicted transform
    magnitude and a stored reference mean."""
    pred_mean = mean_transform_magnitude(pred_seq)
    if pred_mean.shape != reference_mean.shape:
        raise ShapeError(
            f"prediction grid {pred_mean.shape} vs reference {reference_mean.shape}"
        )
    return float(np.abs(pred_mean - reference_mean).mean())


def zonal_mean(snapshots: np.ndarray) -> np.ndarray:
    """Profile over y of the time- and x-averaged field."""
    snaps = np.asarray(snapshots, dtype=np.float64)
    if snaps.ndim == 2:
        snaps = snaps[None]
    if snaps.ndim != 3 or snaps.shape[0] == 0:
        raise ContractError("zonal_mean needs a nonempty (n, ny, nx) stack")
    return snaps.mean(axis=(0, 2))


@dataclass
class PCABasis:
    mean: np.ndarray
    components: np.ndarray  # (n_components, dim), orthonormal rows
    eigenvalues: np.ndarray

    def project(self, field: np.ndarray) -> np.ndarray:
        return self.components @ (np.asarray(field, dtype=np.float64).ravel() - self.mean)


def fit_pca(reference: np.ndarray, n_components: int) -> PCABasis:
    """Principal components of mean-centered flattened snapshots.

    Uses the Gram-matrix eigendecomposition when the snapshot count is below
    the flattened dimension.  Degenerate directions (vanishing eigenvalues)
    reduce the component count with a warning.
    """
    ref = np.asarray(reference, dtype=np.float64)
    n = ref.shape[0]
    if n < n_components:
        raise ContractError(
            f"need at least n_components={n_components} reference snapshots, got {n}"
        )
    X = ref.reshape(n, -1)
    mean = X.mean(axis=0)
    Xc = X - mean
    dim = Xc.shape[1]
    if n <= dim:
        gram = Xc @ Xc.T
        evals, evecs = np.linalg.eigh(gram)
    else:
        cov = Xc.T @ Xc
        evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    tol = max(evals[0], 0.0) * 1e-12
    usable = int(np.count_nonzero(evals > tol))
    if usable < n_components:
        warnings.warn(
            f"covariance rank {usable} < requested components {n_components}; reducing",
            stacklevel=2,
        )
        n_components = usable
    if n_components < 1:
        raise ContractError("reference snapshots are all identical; no principal axes")
    evals = evals[:n_components]
    evecs = evecs[:, :n_components]
    if n <= dim:
        comps = (Xc.T @ evecs) / np.sqrt(evals)[None, :]
        comps = comps.T
    else:
        comps = evecs.T
    return PCABasis(mean=mean, components=comps, eigenvalues=evals)


def pca_autocorrelation(
    reference: np.ndarray,
    pred_seq: np.ndarray,
    truth_seq: np.ndarray,
    n_components: int,
) -> np.ndarray:
    """Per-step Pearson correlation, across principal components, between the
    projections of predicted and true fields."""
    pred_seq = np.asarray(pred_seq)
    truth_seq = np.asarray(truth_seq)
    if pred_seq.shape != truth_seq.shape:
        raise ShapeError(f"pred {pred_seq.shape} vs truth {truth_seq.shape}")
    basis = fit_pca(reference, n_components)
    out = np.empty(pred_seq.shape[0])
    for i, (p, t) in enumerate(zip(pred_seq, truth_seq)):
        a = basis.project(p)
        b = basis.project(t)
        a = a - a.mean()
        b = b - b.mean()
        denom = np.linalg.norm(a) * np.linalg.norm(b)
        out[i] = float(a @ b / denom) if denom > 0 else 0.0
    return out


# -- CSV emitters (RFC-4180, header row mandatory) --------------------------


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_mse_csv(path, mse_mean: np.ndarray, mse_std: np.ndarray):
    _write_rows(
        path,
        ["step", "mse_mean", "mse_std"],
        [(i + 1, f"{m:.10e}", f"{s:.10e}") for i, (m, s) in enumerate(zip(mse_mean, mse_std))],
    )


def write_stability_csv(path, seeds, report: StabilityReport):
    rows = []
    for seed, ok, step in zip(seeds, report.stable, report.first_violation_step):
        rows.append((seed, int(ok), "" if step is None else step))
    _write_rows(path, ["seed", "stable", "first_violation_step"], rows)


def write_spectrum_csv(path, truth: SpectrumProfile, pred: SpectrumProfile):
    _write_rows(
        path,
        ["k", "energy_truth", "energy_pred"],
        [
            (int(k), f"{et:.10e}", f"{ep:.10e}")
            for k, et, ep in zip(truth.wavenumbers, truth.energy, pred.energy)
        ],
    )


def write_zonal_csv(path, profile_truth: np.ndarray, profile_pred: np.ndarray):
    _write_rows(
        path,
        ["y_index", "zonal_mean_truth", "zonal_mean_pred"],
        [
            (i, f"{t:.10e}", f"{p:.10e}")
            for i, (t, p) in enumerate(zip(profile_truth, profile_pred))
        ],
    )


def write_pca_csv(path, correlations: np.ndarray):
    _write_rows(
        path,
        ["step", "pca_correlation"],
        [(i + 1, f"{c:.10e}") for i, c in enumerate(correlations)],
    )


def write_loss_csv(path, steps, losses, eval_steps, eval_mses):
    eval_map = {int(s): m for s, m in zip(eval_steps, eval_mses)}
    rows = []
    for s, l in zip(steps, losses):
        ev = eval_map.get(int(s))
        rows.append((int(s), f"{l:.10e}", "" if ev is None else f"{ev:.10e}"))
    _write_rows(path, ["step", "loss", "eval_mse"], rows)
