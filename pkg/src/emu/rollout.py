"""Autoregressive rollout engines for every supported input mode.

After the first step the engine touches ground truth only when an explicit
teacher-forcing sequence is supplied (a diagnostic mode); otherwise the
augmented state advances purely from the model's own heads.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import hierarchy as hi
from .errors import ConfigurationError, ContractError
from .model import EmulatorModel, ModelParams

POLICY_ONE_STEP = "one-step"
POLICY_STRIDE2 = "stride-2"


@dataclass
class BatchRolloutResult:
    """Stacked results for several trajectories rolled out together."""

    predicted: np.ndarray  # (n_traj, steps, ny, nx)
    forward_pass_count: int
    diverged_at: list  # per trajectory: step index or None


@dataclass
class RolloutResult:
    """Predicted snapshots and bookkeeping for one trajectory."""

    predicted: np.ndarray  # (n, ny, nx)
    forward_pass_count: int
    step_times: np.ndarray
    diverged: bool = False
    diverged_at: int | None = None

    @property
    def steps(self) -> int:
        return int(self.predicted.shape[0])


def teacher_latents_from_truth(
    truth: np.ndarray, config, steps: int
) -> list[list[np.ndarray]]:
    """Per-step ground-truth companion inputs for teacher-forced diagnostics.

    ``truth[t]`` must be the true field at time index t (with t=0 the rollout
    start).  Entry ``[t][l-1]`` is the coarse companion the model would have
    seen at step t had its conditioning been perfect.
    """
    mcfg = config
    h = mcfg.hierarchy
    out = []
    for t in range(steps):
        if mcfg.input_mode in (hi.MODE_L2, hi.MODE_L3):
            idx = [t + l for l in range(1, h.levels)]
        elif mcfg.input_mode == hi.MODE_SPATIAL_HIERARCHY:
            idx = [t for _ in range(1, h.levels)]
        elif mcfg.input_mode == hi.MODE_HISTORY_HIERARCHY:
            idx = [t - l for l in range(1, h.levels)]
        else:
            out.append([])
            continue
        lats = []
        for l, i in enumerate(idx, start=1):
            r = h.ratios[l - 1]
            if 0 <= i < truth.shape[0]:
                lats.append(hi.downsample(truth[i], r, h.kind))
            else:
                lats.append(
                    np.zeros((truth.shape[1] // r, truth.shape[2] // r), truth.dtype)
                )
        out.append(lats)
    return out


def _state_inputs(state: hi.AugmentedState, config, dtype):
    depth = hi.history_length(config.input_mode)
    if depth:
        frames = list(state.history)[-depth:] + [state.u]
        while len(frames) < depth + 1:
            frames.insert(0, np.zeros_like(state.u))
    else:
        frames = [state.u]
    stem = np.stack(frames).astype(dtype)[None]
    latents = [np.asarray(z, dtype=dtype)[None, None] for z in state.latents]
    return stem, latents


def rollout(
    model: EmulatorModel,
    params: ModelParams,
    u0: np.ndarray,
    steps: int,
    teacher_latents=None,
    init_mode: str | None = None,
    policy: str = POLICY_ONE_STEP,
) -> RolloutResult:
    """Roll the emulator forward from ``u0`` for ``steps`` emitted frames.

    ``u0`` must be normalized like the training data.  The two-head
    look-ahead mode advances with its first head under the default policy and
    emits both heads under ``stride-2``.
    """
    cfg = model.config
    mode = cfg.input_mode
    if policy not in (POLICY_ONE_STEP, POLICY_STRIDE2):
        raise ConfigurationError(f"unknown rollout policy {policy!r}")
    if policy == POLICY_STRIDE2 and mode != hi.MODE_TWO_STEP_AHEAD:
        raise ConfigurationError("stride-2 policy only applies to the two-head mode")
    if steps < 1:
        raise ContractError("steps must be >= 1")
    u0 = np.asarray(u0)
    dtype = next(iter(params.tensors.values())).values.dtype
    state = hi.init_state(
        u0, cfg.hierarchy, mode, init_mode or cfg.latent_init
    )
    if teacher_latents is not None and len(teacher_latents) < steps:
        raise ContractError("teacher_latents shorter than the rollout")

    preds = np.empty((steps, u0.shape[0], u0.shape[1]), dtype=np.float32)
    times = np.empty(steps)
    count0 = model.forward_calls
    emitted = 0
    while emitted < steps:
        t0 = time.perf_counter()
        if teacher_latents is not None and state.latents:
            state = hi.AugmentedState(
                u=state.u,
                latents=tuple(teacher_latents[emitted]),
                history=state.history,
                index=state.index,
            )
        stem, lats = _state_inputs(state, cfg, dtype)
        out = model.forward(params, stem, lats)
        head_arrays = out.arrays()
        u_next = head_arrays[0]
        if not np.isfinite(u_next).all():
            times[emitted] = time.perf_counter() - t0
            return RolloutResult(
                predicted=preds[:emitted],
                forward_pass_count=model.forward_calls - count0,
                step_times=times[: emitted + 1].copy(),
                diverged=True,
                diverged_at=emitted,
            )
        preds[emitted] = u_next
        emitted += 1
        if policy == POLICY_STRIDE2 and emitted < steps:
            u2 = head_arrays[1]
            preds[emitted] = u2
            emitted += 1
            state = hi.AugmentedState(u=u2, index=state.index + 2)
        else:
            state = hi.advance_state(head_arrays, cfg.hierarchy, mode, state)
        times[emitted - 1] = time.perf_counter() - t0
    return RolloutResult(
        predicted=preds,
        forward_pass_count=model.forward_calls - count0,
        step_times=times,
    )


def rollout_many(
    model: EmulatorModel,
    params: ModelParams,
    u0_stack: np.ndarray,
    steps: int,
    init_mode: str | None = None,
) -> BatchRolloutResult:
    """Roll several trajectories forward together on the batch axis.

    Every network operation is independent per batch element, so each
    trajectory evolves exactly as it would alone up to floating-point
    blocking differences in the matrix products.  A trajectory that goes
    non-finite is flagged and keeps its NaNs; the others are unaffected.
    """
    cfg = model.config
    mode = cfg.input_mode
    u0_stack = np.asarray(u0_stack)
    if u0_stack.ndim != 3:
        raise ContractError("u0_stack must be (n_traj, ny, nx)")
    n, ny, nx = u0_stack.shape
    dtype = next(iter(params.tensors.values())).values.dtype
    imode = init_mode or cfg.latent_init

    u = u0_stack.astype(dtype)
    if mode == hi.MODE_SPATIAL_HIERARCHY or (
        mode in hi.LATENT_MODES and imode == hi.INIT_DOWNSAMPLE
    ):
        latents = [hi.downsample(u, r, cfg.hierarchy.kind) for r in cfg.hierarchy.ratios]
    elif mode in hi.LATENT_MODES:
        latents = [
            np.zeros((n, ny // r, nx // r), dtype=dtype) for r in cfg.hierarchy.ratios
        ]
    else:
        latents = []
    depth = hi.history_length(mode)
    history = [np.zeros_like(u) for _ in range(depth)]

    preds = np.empty((n, steps, ny, nx), dtype=np.float32)
    diverged_at = [None] * n
    count0 = model.forward_calls
    for t in range(steps):
        stem = np.stack(history + [u], axis=1) if depth else u[:, None]
        out = model.forward(params, stem, [z[:, None] for z in latents])
        heads = [h.values[:, 0] for h in out.heads]
        u_next = heads[0]
        bad = ~np.isfinite(u_next.reshape(n, -1)).all(axis=1)
        for i in np.nonzero(bad)[0]:
            if diverged_at[i] is None:
                diverged_at[i] = t
        preds[:, t] = u_next
        if mode in (hi.MODE_L2, hi.MODE_L3):
            latents = heads[1:]
        elif mode == hi.MODE_SPATIAL_HIERARCHY:
            latents = [
                hi.downsample(u_next, r, cfg.hierarchy.kind) for r in cfg.hierarchy.ratios
            ]
        elif mode == hi.MODE_HISTORY_HIERARCHY:
            past = [u] + history
            new = []
            for l, r in enumerate(cfg.hierarchy.ratios, start=1):
                if l <= len(past):
                    new.append(hi.downsample(past[l - 1], r, cfg.hierarchy.kind))
                else:
                    new.append(np.zeros((n, ny // r, nx // r), dtype=dtype))
            keep = cfg.hierarchy.levels - 2
            history = ([u] + history)[:keep] if keep > 0 else []
            latents = new
        elif depth:
            history = (history + [u])[-depth:]
        u = u_next
    return BatchRolloutResult(
        predicted=preds,
        forward_pass_count=model.forward_calls - count0,
        diverged_at=diverged_at,
    )
