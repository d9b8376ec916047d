"""Experiment configuration: flat-sectioned key=value text with explicit types.

Unknown sections or keys are rejected by name.  Serialization is canonical
(fixed section and key order, ``repr`` floats), so a config round-trips
losslessly and its SHA-256 hash changes iff a semantically meaningful field
changes.
"""

from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field, fields

from . import hierarchy as hi
from .errors import ConfigurationError
from .grid import Grid, get_grid
from .model import ModelConfig
from .solver import FlowParams
from .training import TrainConfig


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    return str(value)


def _parse_bool(s: str) -> bool:
    s = s.strip().lower()
    if s in ("true", "1", "yes", "on"):
        return True
    if s in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_float(s: str) -> float:
    v = float(s)
    if math.isnan(v):
        raise ValueError("nan is not allowed in configs")
    return v


def _parse_int_tuple(s: str) -> tuple[int, ...]:
    s = s.strip()
    return tuple(int(p) for p in s.split(",") if p.strip()) if s else ()


def _parse_float_tuple(s: str) -> tuple[float, ...]:
    s = s.strip()
    return tuple(_parse_float(p) for p in s.split(",") if p.strip()) if s else ()


def _parse_str_tuple(s: str) -> tuple[str, ...]:
    s = s.strip()
    return tuple(p.strip() for p in s.split(",") if p.strip()) if s else ()


# dataclass field annotations are strings here (future annotations)
_PARSERS = {
    "int": int,
    "float": _parse_float,
    "bool": _parse_bool,
    "str": lambda s: s.strip(),
    "tuple[int, ...]": _parse_int_tuple,
    "tuple[float, ...]": _parse_float_tuple,
    "tuple[str, ...]": _parse_str_tuple,
}


@dataclass(frozen=True)
class FlowSection:
    nx: int = 64
    ny: int = 64
    reynolds: float = 2000.0
    drag: float = 0.1
    beta: float = 20.0
    forcing_wavenumber: int = 4
    forcing_amplitude: float = 2.0
    dt_solver: float = 1e-3
    snapshot_stride: int = 50


@dataclass(frozen=True)
class DataSection:
    n_snapshots: int = 2000
    spinup_steps: int = 10000
    normalization: str = "auto"  # "auto" or a float literal


@dataclass(frozen=True)
class HierarchySection:
    levels: int = 3
    ratios: tuple[int, ...] = (4, 8)
    kind: str = hi.KIND_MEAN_POOL


@dataclass(frozen=True)
class ModelSection:
    encoder_channels: tuple[int, ...] = (16, 32, 64, 64)
    fourier_modes: int = 16
    gn_groups: int = 8
    input_mode: str = hi.MODE_L3
    latent_init: str = hi.INIT_ZEROS


@dataclass(frozen=True)
class TrainingSection:
    learning_rate: float = 3e-4
    weight_decay: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    n_steps: int = 2000
    zero_out_prob: float = 0.15
    grad_clip: float = 1.0
    eval_every: int = 100
    eval_fraction: float = 0.1
    level_weights: tuple[float, ...] = ()


@dataclass(frozen=True)
class EvaluationSection:
    steps: int = 2000
    trials: int = 10
    eval_stride: int = 100
    mse_steps: int = 25
    n_components: int = 8
    metrics: tuple[str, ...] = ("mse", "stability", "spectrum", "zonal", "pca")
    rollout_policy: str = "one-step"


@dataclass(frozen=True)
class PathsSection:
    dataset: str = "dataset.bin"
    checkpoint: str = "model.ckpt"
    out_dir: str = "runs/out"


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    threads: int = 1


_SECTION_CLASSES = {
    "flow": FlowSection,
    "data": DataSection,
    "hierarchy": HierarchySection,
    "model": ModelSection,
    "training": TrainingSection,
    "evaluation": EvaluationSection,
    "paths": PathsSection,
    "run": RunSection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    flow: FlowSection = field(default_factory=FlowSection)
    data: DataSection = field(default_factory=DataSection)
    hierarchy: HierarchySection = field(default_factory=HierarchySection)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    paths: PathsSection = field(default_factory=PathsSection)
    run: RunSection = field(default_factory=RunSection)

    # -- builders for the module-level config objects ----------------------

    def grid(self) -> Grid:
        return get_grid(self.flow.nx, self.flow.ny)

    def flow_params(self) -> FlowParams:
        f = self.flow
        return FlowParams(
            reynolds=f.reynolds,
            drag=f.drag,
            beta=f.beta,
            forcing_wavenumber=f.forcing_wavenumber,
            forcing_amplitude=f.forcing_amplitude,
            dt_solver=f.dt_solver,
            snapshot_stride=f.snapshot_stride,
        )

    def hierarchy_config(self) -> hi.HierarchyConfig:
        h = self.hierarchy
        return hi.HierarchyConfig(levels=h.levels, ratios=h.ratios, kind=h.kind)

    def model_config(self) -> ModelConfig:
        if self.flow.nx != self.flow.ny:
            raise ConfigurationError("the emulator requires a square grid")
        m = self.model
        return ModelConfig(
            base_resolution=self.flow.nx,
            encoder_channels=m.encoder_channels,
            fourier_modes=m.fourier_modes,
            gn_groups=m.gn_groups,
            input_mode=m.input_mode,
            hierarchy=self.hierarchy_config(),
            latent_init=m.latent_init,
        )

    def train_config(self) -> TrainConfig:
        t = self.training
        return TrainConfig(
            learning_rate=t.learning_rate,
            weight_decay=t.weight_decay,
            adam_beta1=t.adam_beta1,
            adam_beta2=t.adam_beta2,
            adam_eps=t.adam_eps,
            batch_size=t.batch_size,
            n_steps=t.n_steps,
            zero_out_prob=t.zero_out_prob,
            grad_clip=t.grad_clip,
            seed=self.run.seed,
            eval_every=t.eval_every,
            eval_fraction=t.eval_fraction,
            level_weights=t.level_weights,
        )

    def normalization_scale(self):
        s = self.data.normalization
        return "auto" if s == "auto" else _parse_float(s)

    def with_overrides(self, seed: int | None = None, out_dir: str | None = None,
                       threads: int | None = None) -> "ExperimentConfig":
        run = self.run
        paths = self.paths
        if seed is not None or threads is not None:
            run = RunSection(
                seed=run.seed if seed is None else seed,
                threads=run.threads if threads is None else threads,
            )
        if out_dir is not None:
            paths = PathsSection(
                dataset=paths.dataset, checkpoint=paths.checkpoint, out_dir=out_dir
            )
        return ExperimentConfig(
            flow=self.flow,
            data=self.data,
            hierarchy=self.hierarchy,
            model=self.model,
            training=self.training,
            evaluation=self.evaluation,
            paths=paths,
            run=run,
        )


def serialize_config(config: ExperimentConfig) -> str:
    """Canonical text form: fixed section order, declared key order."""
    lines = []
    for section, cls in _SECTION_CLASSES.items():
        lines.append(f"[{section}]")
        value = getattr(config, section)
        for f in fields(cls):
            lines.append(f"{f.name} = {_fmt(getattr(value, f.name))}")
        lines.append("")
    return "\n".join(lines)


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from exc
    sections = {}
    for section in parser.sections():
        if section not in _SECTION_CLASSES:
            raise ConfigurationError(f"unknown config section [{section}]")
        cls = _SECTION_CLASSES[section]
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigurationError(f"unknown key {key!r} in section [{section}]")
            parse = _PARSERS.get(str(known[key].type))
            if parse is None:
                raise ConfigurationError(
                    f"no parser for key {key!r} in section [{section}]"
                )
            try:
                kwargs[key] = parse(raw)
            except ValueError as exc:
                raise ConfigurationError(
                    f"bad value for {key!r} in [{section}]: {exc}"
                ) from exc
        sections[section] = cls(**kwargs)
    return ExperimentConfig(**sections)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(serialize_config(config).encode("utf-8")).hexdigest()
