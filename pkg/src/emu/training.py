"""Training engine: multiscale loss, AdamW, batching, normalization.

The loss sums, over output heads, a per-head distance d(a, b) =
mean|a - b| + mean((a - b)^2), optionally weighted per level.  Optimization is
bias-corrected AdamW with decoupled weight decay and global-norm gradient
clipping.  Mini-batches are drawn with a seeded shuffle; with probability
``zero_out_prob`` a sample's conditioning beyond the current frame (history
frames and future companion fields) is zeroed, teaching the model to tolerate
the zero-initialized first rollout steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import hierarchy as hi
from . import kernels
from .errors import ConfigurationError, DivergenceError, ShapeError
from .model import EmulatorModel, ModelOutputs, ModelParams
from .solver import TrajectoryDataset


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    weight_decay: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    n_steps: int = 2000
    zero_out_prob: float = 0.15
    grad_clip: float = 1.0
    seed: int = 0
    eval_every: int = 100
    eval_fraction: float = 0.1
    level_weights: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigurationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.zero_out_prob < 1.0:
            raise ConfigurationError(
                f"zero_out_prob must be in [0, 1), got {self.zero_out_prob}"
            )
        if self.batch_size < 1 or self.n_steps < 0:
            raise ConfigurationError("batch_size must be >= 1 and n_steps >= 0")


def loss_fn(outputs: ModelOutputs, targets, level_weights=()) -> ad.Tensor:
    """Sum over heads of weight * (mean-l1 + mean-l2) of the prediction error."""
    heads = outputs.heads if isinstance(outputs, ModelOutputs) else outputs
    if len(heads) != len(targets):
        raise ShapeError(f"{len(heads)} heads vs {len(targets)} targets")
    if level_weights and len(level_weights) != len(heads):
        raise ShapeError(
            f"{len(level_weights)} level weights for {len(heads)} heads"
        )
    total = None
    for i, (head, tgt) in enumerate(zip(heads, targets)):
        tgt = np.asarray(tgt)
        if head.shape != tgt.shape:
            raise ShapeError(
                f"head {i} shape {head.shape} != target shape {tgt.shape}"
            )
        diff = ad.sub(head, ad.Tensor(tgt))
        d = ad.add(ad.l1_mean(diff), ad.l2_mean(diff))
        if level_weights:
            d = ad.scale(d, level_weights[i])
        total = d if total is None else ad.add(total, d)
    return total


class AdamW:
    """Bias-corrected AdamW with decoupled weight decay.

    Moments are kept per parameter; the update itself runs in the selected
    kernel backend.
    """

    def __init__(self, params: ModelParams, config: TrainConfig):
        self.config = config
        self.step_count = 0
        self._m = {k: np.zeros_like(t.values) for k, t in params.items()}
        self._v = {k: np.zeros_like(t.values) for k, t in params.items()}

    def step(self, params: ModelParams):
        cfg = self.config
        self.step_count += 1
        for name, t in params.items():
            if t.grad is None:
                continue
            g = t.grad
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite gradient for parameter {name!r}")
            kernels.adamw_update(
                t.values.reshape(-1),
                np.ascontiguousarray(g, dtype=t.values.dtype).reshape(-1),
                self._m[name].reshape(-1),
                self._v[name].reshape(-1),
                cfg.learning_rate,
                cfg.adam_beta1,
                cfg.adam_beta2,
                cfg.adam_eps,
                cfg.weight_decay,
                self.step_count,
            )


def clip_gradients(params: ModelParams, max_norm: float) -> float:
    """Scale all gradients so their global l2 norm is at most max_norm."""
    total = 0.0
    for _, t in params.items():
        if t.grad is not None:
            total += float(np.sum(t.grad.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        s = max_norm / norm
        for _, t in params.items():
            if t.grad is not None:
                t.grad *= t.grad.dtype.type(s)
    return norm


def round_to_sig_figs(x: float, figs: int = 2) -> float:
    if x == 0:
        return 0.0
    exp = math.floor(math.log10(abs(x)))
    return round(x, -exp + figs - 1)


def normalize(dataset: TrajectoryDataset, scale="auto") -> TrajectoryDataset:
    """Divide all snapshots by a constant; 'auto' uses the global standard
    deviation rounded to two significant figures."""
    if scale == "auto":
        std = float(dataset.snapshots.std(dtype=np.float64))
        if std == 0.0:
            raise ConfigurationError("dataset has zero variance; cannot normalize")
        scale = round_to_sig_figs(std, 2)
    scale = float(scale)
    if scale == 0.0:
        raise ConfigurationError("normalization scale must be nonzero")
    snaps = (dataset.snapshots / np.float32(scale)).astype(np.float32)
    return dataset.with_snapshots(snaps, dataset.normalization_scale * scale)


@dataclass
class BatchArrays:
    stem: np.ndarray
    latents: list
    targets: list


def assemble_batch(samples, idxs, config, zero_mask=None, dtype=np.float32) -> BatchArrays:
    """Stack training samples into batched arrays.

    ``zero_mask[i]`` zeroes sample i's conditioning beyond the current frame.
    Current-frame companions (the spatial-hierarchy mode) are never zeroed:
    they are always derivable at rollout time.
    """
    mode = config.input_mode
    first = samples[idxs[0]]
    n_hist = len(first.inputs.history)
    stems = []
    latents = [[] for _ in first.inputs.latents]
    targets = [[] for _ in first.targets]
    for pos, i in enumerate(idxs):
        s = samples[i]
        drop = bool(zero_mask[pos]) if zero_mask is not None else False
        frames = list(s.inputs.history) + [s.inputs.u]
        if drop and n_hist:
            frames = [np.zeros_like(f) for f in s.inputs.history] + [s.inputs.u]
        stems.append(np.stack(frames))
        for l, z in enumerate(s.inputs.latents):
            if drop and mode != hi.MODE_SPATIAL_HIERARCHY:
                z = np.zeros_like(z)
            latents[l].append(z)
        for j, t in enumerate(s.targets):
            targets[j].append(t)
    stem = np.stack(stems).astype(dtype)
    lat = [np.stack(zs)[:, None].astype(dtype) for zs in latents]
    tgt = [np.stack(ts)[:, None].astype(dtype) for ts in targets]
    return BatchArrays(stem=stem, latents=lat, targets=tgt)


def split_eval_anchors(n_samples: int, eval_fraction: float) -> tuple[np.ndarray, np.ndarray]:
    """Hold out the trailing fraction of anchors for evaluation."""
    n_eval = max(1, int(round(n_samples * eval_fraction))) if eval_fraction > 0 else 0
    train_idx = np.arange(n_samples - n_eval)
    eval_idx = np.arange(n_samples - n_eval, n_samples)
    return train_idx, eval_idx


def evaluate_one_step_mse(model, params, samples, idxs, max_batch=16) -> float:
    """Mean single-step full-resolution MSE over the given sample indices."""
    total, count = 0.0, 0
    for lo in range(0, len(idxs), max_batch):
        chunk = idxs[lo : lo + max_batch]
        batch = assemble_batch(samples, chunk, model.config)
        out = model.forward(params, batch.stem, batch.latents)
        err = out.heads[0].values - batch.targets[0]
        total += float(np.sum(np.mean((err.astype(np.float64)) ** 2, axis=(1, 2, 3))))
        count += len(chunk)
    return total / max(count, 1)


def persistence_mse(samples, idxs) -> float:
    """MSE of the copy-last-frame predictor over the given samples."""
    vals = [
        float(np.mean((samples[i].targets[0].astype(np.float64) - samples[i].inputs.u) ** 2))
        for i in idxs
    ]
    return float(np.mean(vals))


@dataclass
class TrainResult:
    params: ModelParams
    steps: np.ndarray
    losses: np.ndarray
    eval_steps: np.ndarray
    eval_mses: np.ndarray
    final_eval_mse: float
    persistence_mse: float


def train(
    dataset: TrajectoryDataset,
    model: EmulatorModel,
    train_config: TrainConfig,
    params: ModelParams | None = None,
) -> TrainResult:
    """Optimize the emulator on one trajectory dataset.

    Deterministic given (dataset, configs, seed); the loss reduction order is
    fixed regardless of thread count.  Raises DivergenceError with the step
    index if the loss goes non-finite.
    """
    cfg = train_config
    mcfg = model.config
    samples = hi.build_samples(dataset, mcfg.hierarchy, mcfg.input_mode)
    train_idx, eval_idx = split_eval_anchors(len(samples), cfg.eval_fraction)
    if len(train_idx) < 1:
        raise ConfigurationError("no training samples left after the eval split")

    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = model.init_params(int(rng.integers(2**31)))
    opt = AdamW(params, cfg)
    weights = tuple(cfg.level_weights) if cfg.level_weights else ()

    steps, losses, eval_steps, eval_mses = [], [], [], []
    order = rng.permutation(train_idx)
    cursor = 0
    last_finite = math.nan
    for step in range(cfg.n_steps):
        if cursor + cfg.batch_size > len(order):
            order = rng.permutation(train_idx)
            cursor = 0
        idxs = order[cursor : cursor + cfg.batch_size]
        cursor += cfg.batch_size
        drop = rng.random(len(idxs)) < cfg.zero_out_prob

        batch = assemble_batch(samples, idxs, mcfg, zero_mask=drop)
        params.zero_grad()
        out = model.forward(params, batch.stem, batch.latents)
        loss = loss_fn(out, batch.targets, weights)
        loss_val = float(loss.values)
        if not math.isfinite(loss_val):
            raise DivergenceError(
                f"training loss diverged at step {step} (last finite {last_finite:.6g})",
                step=step,
            )
        last_finite = loss_val
        ad.backward(loss)
        clip_gradients(params, cfg.grad_clip)
        opt.step(params)
        steps.append(step)
        losses.append(loss_val)
        if cfg.eval_every and (step + 1) % cfg.eval_every == 0 and len(eval_idx):
            eval_steps.append(step)
            eval_mses.append(evaluate_one_step_mse(model, params, samples, eval_idx))

    if len(eval_idx):
        final_mse = evaluate_one_step_mse(model, params, samples, eval_idx)
        pers = persistence_mse(samples, eval_idx)
    else:
        final_mse = math.nan
        pers = math.nan
    return TrainResult(
        params=params,
        steps=np.asarray(steps),
        losses=np.asarray(losses),
        eval_steps=np.asarray(eval_steps),
        eval_mses=np.asarray(eval_mses),
        final_eval_mse=final_mse,
        persistence_mse=pers,
    )


def smoothed_loss(losses: np.ndarray, window: int = 50) -> np.ndarray:
    """Centered-window running mean used by the training-progress checks."""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size == 0:
        return losses
    kernel = np.ones(min(window, losses.size)) / min(window, losses.size)
    return np.convolve(losses, kernel, mode="same")
