"""Command-line entry points.

    emu generate|train|rollout|evaluate|gradcheck|demo-stiff --config <path>
        [--threads N] [--seed S] [--out DIR]

Every command is deterministic given its config, writes a manifest recording
the config hash, seed, and artifact checksums, and exits 0 on success.  Errors
print one machine-parsable line to stderr: configuration problems exit 2,
binary-format problems exit 3, numerical divergence exits 4.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import hierarchy as hi
from . import io as eio
from . import metrics as mx
from .config import ExperimentConfig, config_hash, load_config, serialize_config
from .errors import (
    ConfigurationError,
    ContractError,
    DivergenceError,
    EmuError,
    FormatError,
    InvalidFieldError,
    ShapeError,
)
from .model import EmulatorModel, ModelParams
from .rollout import rollout, teacher_latents_from_truth
from .solver import energy_series, generate_trajectory, stiff_scheme_demo
from .training import normalize, smoothed_loss, train

EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_DIVERGED = 4


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(cfg: ExperimentConfig, out: Path, artifacts: dict[str, Path]) -> None:
    eio.write_manifest(
        out / "manifest.json", config_hash(cfg), cfg.run.seed, artifacts
    )


def _load_dataset(cfg: ExperimentConfig):
    return eio.read_trajectory(cfg.paths.dataset, dt_solver=cfg.flow.dt_solver)


def _load_model(cfg: ExperimentConfig):
    config_text, arrays = eio.read_checkpoint(cfg.paths.checkpoint)
    model = EmulatorModel(cfg.model_config())
    want = {name: tuple(shape) for name, shape, _ in model._plan}
    got = {name: arr.shape for name, arr in arrays.items()}
    if want != got:
        raise FormatError(
            f"checkpoint {cfg.paths.checkpoint} does not match the configured model"
        )
    params = ModelParams(
        {name: ad.Tensor(arrays[name], requires_grad=True) for name in want}
    )
    return model, params


def cmd_generate(cfg: ExperimentConfig) -> int:
    out = _out_dir(cfg)
    grid = cfg.grid()
    raw = generate_trajectory(
        grid,
        cfg.run.seed,
        cfg.flow_params(),
        cfg.data.n_snapshots,
        cfg.data.spinup_steps,
    )
    dataset = normalize(raw, cfg.normalization_scale())
    path = Path(cfg.paths.dataset)
    path.parent.mkdir(parents=True, exist_ok=True)
    eio.write_trajectory(path, dataset)
    _manifest(cfg, out, {"dataset": path})
    print(f"wrote {dataset.n_snapshots} snapshots to {path} "
          f"(scale {dataset.normalization_scale})")
    return 0


def cmd_train(cfg: ExperimentConfig) -> int:
    out = _out_dir(cfg)
    dataset = _load_dataset(cfg)
    model = EmulatorModel(cfg.model_config())
    result = train(dataset, model, cfg.train_config())
    ckpt = Path(cfg.paths.checkpoint)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    eio.write_checkpoint(ckpt, serialize_config(cfg), result.params)
    loss_csv = out / "loss.csv"
    mx.write_loss_csv(loss_csv, result.steps, result.losses, result.eval_steps, result.eval_mses)
    _manifest(cfg, out, {"checkpoint": ckpt, "loss_csv": loss_csv})
    if len(result.losses):
        sm = smoothed_loss(result.losses)
        print(
            f"trained {len(result.losses)} steps; smoothed loss "
            f"{sm[min(49, len(sm) - 1)]:.4g} -> {sm[-1]:.4g}; "
            f"eval MSE {result.final_eval_mse:.4g} "
            f"(persistence {result.persistence_mse:.4g})"
        )
    else:
        print("trained 0 steps; checkpoint equals initialization")
    return 0


def _rollout_trials(cfg, model, params, dataset, n_trials, steps):
    """Deterministic trial starts spread across the dataset."""
    n = dataset.n_snapshots
    starts = np.linspace(0, max(n - 2, 0), n_trials).astype(int)
    grid = cfg.grid()

    def one(start):
        return start, rollout(model, params, dataset.snapshots[start], steps)

    workers = max(1, cfg.run.threads)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, starts))
    else:
        results = [one(s) for s in starts]
    return results, grid


def cmd_rollout(cfg: ExperimentConfig) -> int:
    out = _out_dir(cfg)
    dataset = _load_dataset(cfg)
    model, params = _load_model(cfg)
    steps = min(cfg.evaluation.mse_steps, dataset.n_snapshots - 1)
    res = rollout(model, params, dataset.snapshots[0], steps)
    if res.diverged:
        raise DivergenceError(f"rollout diverged at step {res.diverged_at}", step=res.diverged_at)
    truth = dataset.snapshots[1 : steps + 1]
    mse = mx.rollout_mse(res.predicted, truth)
    mse_csv = out / "rollout_mse.csv"
    mx.write_mse_csv(mse_csv, mse, np.zeros_like(mse))
    pred_path = out / "predictions.bin"
    pred_ds = dataset.with_snapshots(res.predicted, dataset.normalization_scale)
    eio.write_trajectory(pred_path, pred_ds)
    _manifest(cfg, out, {"rollout_mse": mse_csv, "predictions": pred_path})
    print(
        f"rolled out {res.steps} steps with {res.forward_pass_count} forward passes; "
        f"final MSE {mse[-1]:.4g}"
    )
    return 0


def cmd_evaluate(cfg: ExperimentConfig) -> int:
    out = _out_dir(cfg)
    dataset = _load_dataset(cfg)
    model, params = _load_model(cfg)
    grid = cfg.grid()
    ev = cfg.evaluation
    artifacts = {}
    enabled = set(ev.metrics)

    # short-horizon accuracy against ground truth
    if "mse" in enabled or "pca" in enabled:
        steps = min(ev.mse_steps, dataset.n_snapshots - 1)
        n_trials = min(ev.trials, dataset.n_snapshots - steps - 1)
        starts = np.linspace(0, dataset.n_snapshots - steps - 1, max(n_trials, 1)).astype(int)
        per_trial = []
        first = None
        for s in starts:
            r = rollout(model, params, dataset.snapshots[s], steps)
            truth = dataset.snapshots[s + 1 : s + steps + 1]
            if r.steps < steps:
                raise DivergenceError(
                    f"evaluation rollout diverged at step {r.diverged_at}",
                    step=r.diverged_at,
                )
            per_trial.append(mx.rollout_mse(r.predicted, truth))
            if first is None:
                first = (r.predicted, truth)
        if "mse" in enabled:
            mean, std = mx.aggregate_mse(per_trial)
            path = out / "mse.csv"
            mx.write_mse_csv(path, mean, std)
            artifacts["mse"] = path
        if "pca" in enabled:
            n_comp = min(ev.n_components, dataset.n_snapshots)
            corr = mx.pca_autocorrelation(dataset.snapshots, first[0], first[1], n_comp)
            path = out / "pca.csv"
            mx.write_pca_csv(path, corr)
            artifacts["pca"] = path

    # long-horizon statistics from free-running rollouts
    if enabled & {"stability", "spectrum", "zonal"}:
        results, _ = _rollout_trials(cfg, model, params, dataset, ev.trials, ev.steps)
        ref_energy = energy_series(dataset.snapshots, grid)
        if "stability" in enabled:
            series = [energy_series(r.predicted, grid) for _, r in results]
            report = mx.stability_rate(series, ref_energy, ev.eval_stride)
            path = out / "stability.csv"
            mx.write_stability_csv(path, [s for s, _ in results], report)
            artifacts["stability"] = path
            print(f"stability rate {report.stability_rate:.3f}")
        preds = results[0][1].predicted
        if "spectrum" in enabled:
            sp_truth = mx.energy_spectrum(
                dataset.snapshots[-1].astype(np.float64), grid
            )
            sp_pred = mx.energy_spectrum(preds[-1].astype(np.float64), grid)
            path = out / "spectrum.csv"
            mx.write_spectrum_csv(path, sp_truth, sp_pred)
            artifacts["spectrum"] = path
        if "zonal" in enabled:
            path = out / "zonal.csv"
            mx.write_zonal_csv(
                path, mx.zonal_mean(dataset.snapshots), mx.zonal_mean(preds)
            )
            artifacts["zonal"] = path

    _manifest(cfg, out, artifacts)
    print(f"evaluation artifacts: {', '.join(sorted(artifacts))}")
    return 0


def cmd_gradcheck(cfg: ExperimentConfig) -> int:
    from .gradcheck import run_gradcheck

    out = _out_dir(cfg)
    report = run_gradcheck(seed=cfg.run.seed)
    path = out / "gradcheck.txt"
    with open(path, "w") as fh:
        fh.write(report.text)
    _manifest(cfg, out, {"gradcheck": path})
    print(report.text, end="")
    return 0 if report.passed else 1


def cmd_demo_stiff(cfg: ExperimentConfig) -> int:
    out = _out_dir(cfg)
    lam, dt, n = -1e6, 1e-3, 50
    explicit, implicit = stiff_scheme_demo(lam, dt, n)
    path = out / "stiff_demo.csv"
    import csv as _csv

    with open(path, "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(["step", "t", "explicit", "implicit"])
        for i, (e, im) in enumerate(zip(explicit, implicit)):
            w.writerow([i, repr(i * dt), repr(float(e)), repr(float(im))])
    _manifest(cfg, out, {"stiff_demo": path})
    print(f"wrote explicit/implicit traces for lambda={lam:g}, dt={dt:g} to {path}")
    return 0


_COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "rollout": cmd_rollout,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
    "demo-stiff": cmd_demo_stiff,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emu", description="2D turbulence emulator pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--threads", type=int, default=None, help="worker cap")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--out", default=None, help="output directory override")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        cfg = load_config(args.config)
        threads = args.threads
        if threads is None and os.environ.get("EMU_THREADS"):
            threads = int(os.environ["EMU_THREADS"])
        cfg = cfg.with_overrides(seed=args.seed, out_dir=args.out, threads=threads)
        return _COMMANDS[args.command](cfg)
    except (ConfigurationError, ContractError, InvalidFieldError, ShapeError) as exc:
        print(f"error: configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"error: format: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except DivergenceError as exc:
        print(f"error: divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except EmuError as exc:  # pragma: no cover - residual package errors
        print(f"error: internal: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
