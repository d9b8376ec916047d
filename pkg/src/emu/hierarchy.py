"""Fixed coarse-graining transforms and augmented-state bookkeeping.

An augmented state couples the current full-resolution field with a ladder of
coarser companion fields.  Depending on the input mode those companions are
either coarse previews of *future* frames (the two- and three-level schemes),
coarse copies of the current frame, coarse versions of past frames, or plain
full-resolution history frames.  This module builds training samples for every
supported mode and advances the augmented state during autoregressive rollout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .errors import ConfigurationError, ContractError, ShapeError
from .solver import TrajectoryDataset

MODE_L1 = "l1"
MODE_L2 = "l2"
MODE_L3 = "l3"
MODE_TWO_STEP_AHEAD = "two_step_ahead"
MODE_SPATIAL_HIERARCHY = "spatial_hierarchy"
MODE_HISTORY_HIERARCHY = "history_hierarchy"
MODE_TWO_STEP_HISTORY = "two_step_history"
MODE_THREE_STEP_HISTORY = "three_step_history"

ALL_MODES = (
    MODE_L1,
    MODE_L2,
    MODE_L3,
    MODE_TWO_STEP_AHEAD,
    MODE_SPATIAL_HIERARCHY,
    MODE_HISTORY_HIERARCHY,
    MODE_TWO_STEP_HISTORY,
    MODE_THREE_STEP_HISTORY,
)

# modes whose companion fields are coarse-grained (rather than history frames)
LATENT_MODES = (MODE_L2, MODE_L3, MODE_SPATIAL_HIERARCHY, MODE_HISTORY_HIERARCHY)

KIND_MEAN_POOL = "mean-pool"
KIND_SPECTRAL = "spectral-truncate"


@dataclass(frozen=True)
class HierarchyConfig:
    """Number of levels and the fixed per-level downsampling ratios.

    ``ratios`` has ``levels - 1`` entries, nondecreasing; each must divide the
    grid size it is applied to.
    """

    levels: int = 1
    ratios: tuple[int, ...] = ()
    kind: str = KIND_MEAN_POOL

    def __post_init__(self):
        if self.levels < 1:
            raise ConfigurationError(f"levels must be >= 1, got {self.levels}")
        if len(self.ratios) != self.levels - 1:
            raise ConfigurationError(
                f"need {self.levels - 1} ratios for {self.levels} levels, got {self.ratios}"
            )
        if any(r < 1 for r in self.ratios):
            raise ConfigurationError(f"ratios must be positive, got {self.ratios}")
        if any(a > b for a, b in zip(self.ratios, self.ratios[1:])):
            raise ConfigurationError(f"ratios must be nondecreasing, got {self.ratios}")
        if self.kind not in (KIND_MEAN_POOL, KIND_SPECTRAL):
            raise ConfigurationError(f"unknown downsampling kind {self.kind!r}")


def downsample(u: np.ndarray, ratio: int, kind: str = KIND_MEAN_POOL) -> np.ndarray:
    """Coarsen the trailing two axes by an integer ratio.

    mean-pool averages ratio x ratio blocks; spectral-truncate keeps modes
    ``|kx|, |ky| < n/(2*ratio)`` and evaluates them on the coarse grid.  Both
    preserve the mean exactly.
    """
    u = np.asarray(u)
    H, W = u.shape[-2], u.shape[-1]
    if ratio < 1:
        raise ConfigurationError(f"ratio must be >= 1, got {ratio}")
    if H % ratio or W % ratio:
        raise ConfigurationError(f"ratio {ratio} does not divide grid {(H, W)}")
    if ratio == 1:
        return u.copy()
    lead = u.shape[:-2]
    if kind == KIND_MEAN_POOL:
        v = u.reshape(*lead, H // ratio, ratio, W // ratio, ratio)
        return v.mean(axis=(-3, -1))
    if kind == KIND_SPECTRAL:
        Hc, Wc = H // ratio, W // ratio
        mh, mw = Hc // 2, Wc // 2  # strict cutoff: |ky| < mh, |kx| < mw
        fh = sfft.rfft2(u)
        out = np.zeros((*lead, Hc, Wc // 2 + 1), dtype=fh.dtype)
        out[..., :mh, :mw] = fh[..., :mh, :mw]
        if mh > 1:
            out[..., -(mh - 1):, :mw] = fh[..., -(mh - 1):, :mw]
        out /= ratio * ratio
        return sfft.irfft2(out, s=(Hc, Wc)).astype(u.dtype)
    raise ConfigurationError(f"unknown downsampling kind {kind!r}")


@dataclass
class AugmentedState:
    """Model input at one rollout position.

    ``u`` is the current field, ``latents`` the coarse companions ordered by
    level, ``history`` older full-resolution frames ordered oldest first.
    ``index`` is the time index of ``u``; companion ``latents[l-1]`` carries
    time index ``index + l`` for the future-latent modes.
    """

    u: np.ndarray
    latents: tuple[np.ndarray, ...] = ()
    history: tuple[np.ndarray, ...] = ()
    index: int = 0


@dataclass
class TrainingSample:
    """One supervised pair: augmented inputs and per-head target arrays."""

    inputs: AugmentedState
    targets: tuple[np.ndarray, ...]
    anchor: int


def mode_window(mode: str, levels: int) -> tuple[int, int]:
    """(lookback, lookahead) snapshot indices needed around an anchor."""
    if mode == MODE_L1:
        return 0, 1
    if mode in (MODE_L2, MODE_L3):
        return 0, levels
    if mode == MODE_TWO_STEP_AHEAD:
        return 0, 2
    if mode == MODE_SPATIAL_HIERARCHY:
        return 0, 1
    if mode == MODE_HISTORY_HIERARCHY:
        return levels - 1, 1
    if mode == MODE_TWO_STEP_HISTORY:
        return 1, 1
    if mode == MODE_THREE_STEP_HISTORY:
        return 2, 1
    raise ConfigurationError(f"unknown input mode {mode!r}")


def expected_levels(mode: str) -> int | None:
    """Hierarchy levels implied by the mode, or None when unconstrained."""
    return {MODE_L1: 1, MODE_L2: 2, MODE_L3: 3}.get(mode)


def _pyramids(snaps: np.ndarray, config: HierarchyConfig) -> list[np.ndarray]:
    return [downsample(snaps, r, config.kind) for r in config.ratios]


def build_samples(
    dataset: TrajectoryDataset, config: HierarchyConfig, mode: str
) -> list[TrainingSample]:
    """One sample per valid anchor index, for any supported input mode.

    Target companions are, by construction, the fixed coarse-graining of the
    ground-truth snapshot at the shifted index.
    """
    if mode not in ALL_MODES:
        raise ConfigurationError(f"unknown input mode {mode!r}")
    want = expected_levels(mode)
    if want is not None and config.levels != want:
        raise ConfigurationError(
            f"mode {mode!r} requires levels={want}, config has {config.levels}"
        )
    snaps = dataset.snapshots
    n = snaps.shape[0]
    lookback, lookahead = mode_window(mode, config.levels)
    if n < lookback + lookahead + 1:
        raise ConfigurationError(
            f"dataset has {n} snapshots; mode {mode!r} needs at least "
            f"{lookback + lookahead + 1}"
        )
    pyr = _pyramids(snaps, config) if mode in LATENT_MODES else []

    samples = []
    for a in range(lookback, n - lookahead):
        if mode == MODE_L1:
            state = AugmentedState(u=snaps[a], index=a)
            targets = (snaps[a + 1],)
        elif mode in (MODE_L2, MODE_L3):
            lat = tuple(pyr[l - 1][a + l] for l in range(1, config.levels))
            state = AugmentedState(u=snaps[a], latents=lat, index=a)
            targets = (snaps[a + 1],) + tuple(
                pyr[l - 1][a + 1 + l] for l in range(1, config.levels)
            )
        elif mode == MODE_TWO_STEP_AHEAD:
            state = AugmentedState(u=snaps[a], index=a)
            targets = (snaps[a + 1], snaps[a + 2])
        elif mode == MODE_SPATIAL_HIERARCHY:
            lat = tuple(pyr[l - 1][a] for l in range(1, config.levels))
            state = AugmentedState(u=snaps[a], latents=lat, index=a)
            targets = (snaps[a + 1],) + tuple(
                pyr[l - 1][a + 1] for l in range(1, config.levels)
            )
        elif mode == MODE_HISTORY_HIERARCHY:
            lat = tuple(pyr[l - 1][a - l] for l in range(1, config.levels))
            state = AugmentedState(u=snaps[a], latents=lat, index=a)
            targets = (snaps[a + 1],)
        elif mode == MODE_TWO_STEP_HISTORY:
            state = AugmentedState(u=snaps[a], history=(snaps[a - 1],), index=a)
            targets = (snaps[a + 1],)
        else:  # MODE_THREE_STEP_HISTORY
            state = AugmentedState(
                u=snaps[a], history=(snaps[a - 2], snaps[a - 1]), index=a
            )
            targets = (snaps[a + 1],)
        samples.append(TrainingSample(inputs=state, targets=targets, anchor=a))
    return samples


def latent_shapes(mode: str, config: HierarchyConfig, ny: int, nx: int) -> list[tuple[int, int]]:
    if mode not in LATENT_MODES:
        return []
    return [(ny // r, nx // r) for r in config.ratios]


def history_length(mode: str) -> int:
    return {MODE_TWO_STEP_HISTORY: 1, MODE_THREE_STEP_HISTORY: 2}.get(mode, 0)


INIT_ZEROS = "zeros"
INIT_DOWNSAMPLE = "downsample"


def init_state(
    u0: np.ndarray,
    config: HierarchyConfig,
    mode: str,
    init_mode: str = INIT_ZEROS,
) -> AugmentedState:
    """Augmented state for the first rollout step.

    Companion fields start as zeros (default, matching the conditioning
    dropout used in training) or as coarse copies of ``u0``.  For the
    current-frame hierarchy mode the companions are always derived from
    ``u0`` since they are defined by it.
    """
    if init_mode not in (INIT_ZEROS, INIT_DOWNSAMPLE):
        raise ConfigurationError(f"unknown init mode {init_mode!r}")
    u0 = np.asarray(u0)
    ny, nx = u0.shape
    hist = tuple(
        np.zeros_like(u0) for _ in range(history_length(mode))
    )
    if mode == MODE_SPATIAL_HIERARCHY or (
        mode in LATENT_MODES and init_mode == INIT_DOWNSAMPLE
    ):
        lat = tuple(downsample(u0, r, config.kind) for r in config.ratios)
    else:
        lat = tuple(
            np.zeros((ny // r, nx // r), dtype=u0.dtype) for r in config.ratios
        ) if mode in LATENT_MODES else ()
    return AugmentedState(u=u0, latents=lat, history=hist, index=0)


def advance_state(
    outputs: tuple[np.ndarray, ...],
    config: HierarchyConfig,
    mode: str,
    state: AugmentedState,
) -> AugmentedState:
    """Next augmented state from the heads of the previous forward pass.

    For the future-latent modes this is a pure reindexing of the outputs; for
    the other modes it shifts history buffers or re-derives coarse companions
    from the new current frame.  No ground truth is consulted.
    """
    if not outputs:
        raise ContractError("advance_state needs at least the full-resolution head")
    u_next = np.asarray(outputs[0])
    if u_next.shape != state.u.shape:
        raise ShapeError(f"head shape {u_next.shape} != state shape {state.u.shape}")
    idx = state.index + 1
    if mode in (MODE_L1, MODE_TWO_STEP_AHEAD):
        return AugmentedState(u=u_next, index=idx)
    if mode in (MODE_L2, MODE_L3):
        if len(outputs) != config.levels:
            raise ContractError(
                f"mode {mode!r} expects {config.levels} heads, got {len(outputs)}"
            )
        return AugmentedState(u=u_next, latents=tuple(outputs[1:]), index=idx)
    if mode == MODE_SPATIAL_HIERARCHY:
        lat = tuple(downsample(u_next, r, config.kind) for r in config.ratios)
        return AugmentedState(u=u_next, latents=lat, index=idx)
    if mode == MODE_HISTORY_HIERARCHY:
        # companions become coarse copies of the frames now lying 1..L-1 back
        past = (state.u,) + state.history
        frames = []
        for l, r in enumerate(config.ratios, start=1):
            if l <= len(past):
                frames.append(downsample(past[l - 1], r, config.kind))
            else:
                frames.append(np.zeros(
                    (state.u.shape[0] // r, state.u.shape[1] // r), dtype=u_next.dtype
                ))
        keep = config.levels - 2
        hist = ((state.u,) + state.history)[:keep] if keep > 0 else ()
        return AugmentedState(u=u_next, latents=tuple(frames), history=hist, index=idx)
    if mode in (MODE_TWO_STEP_HISTORY, MODE_THREE_STEP_HISTORY):
        depth = history_length(mode)
        hist = (state.history + (state.u,))[-depth:]
        return AugmentedState(u=u_next, history=hist, index=idx)
    raise ConfigurationError(f"unknown input mode {mode!r}")
