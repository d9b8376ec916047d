"""Encoder-decoder emulator with coarse companion injection and multi-head output.

The network is a U-shaped stack: a stem convolution, encoder stages whose
resolution halves per stage, and a mirrored decoder with skip connections.
Coarse companion fields enter at the encoder stage whose feature resolution
matches theirs (projection convolution, channel concatenation, 1x1 merge).
Each output head reads the decoder feature at its own resolution and predicts
a residual: the full-resolution head against the current input frame, the
coarse heads against their input companions.  Heads are zero-initialized, so
a freshly initialized model is the identity map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import hierarchy as hi
from .errors import ConfigurationError, ShapeError

BLOCKS_PER_STAGE = 2

_CONV = "conv"
_ZERO = "zero"
_ONES = "ones"
_ZEROS = "zeros"
_FOURIER = "fourier"


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; every supported input mode shares them.

    ``encoder_channels[0]`` is the full-resolution stage; each later entry
    halves the spatial resolution.  ``fourier_modes`` caps the retained modes
    of the per-block depthwise spectral branch (0 disables it); the effective
    cap at a stage never exceeds half that stage's resolution.
    """

    base_resolution: int = 64
    encoder_channels: tuple[int, ...] = (16, 32, 64, 64)
    fourier_modes: int = 16
    gn_groups: int = 8
    input_mode: str = hi.MODE_L1
    hierarchy: hi.HierarchyConfig = field(default_factory=hi.HierarchyConfig)
    latent_init: str = hi.INIT_ZEROS

    def __post_init__(self):
        if self.input_mode not in hi.ALL_MODES:
            raise ConfigurationError(f"unknown input mode {self.input_mode!r}")
        want = hi.expected_levels(self.input_mode)
        if want is not None and self.hierarchy.levels != want:
            raise ConfigurationError(
                f"mode {self.input_mode!r} requires hierarchy levels {want}, "
                f"got {self.hierarchy.levels}"
            )
        if len(self.encoder_channels) < 1:
            raise ConfigurationError("need at least one encoder stage")
        n = self.base_resolution
        if n < 8 or n & (n - 1):
            raise ConfigurationError(f"base_resolution must be a power of two >= 8, got {n}")
        for i, c in enumerate(self.encoder_channels):
            if self.stage_resolution(i) < 2:
                raise ConfigurationError("too many stages for this resolution")
            g = self.stage_groups(i)
            if c % g:
                raise ConfigurationError(
                    f"stage {i} channels {c} not divisible by norm groups {g}"
                )
        for level, stage in self.injection_stages():
            if stage >= self.n_stages:
                ratio = self.hierarchy.ratios[level - 1]
                raise ConfigurationError(
                    f"no encoder stage at resolution {self.base_resolution // ratio} "
                    f"for companion level {level} (ratio {ratio})"
                )

    @property
    def n_stages(self) -> int:
        return len(self.encoder_channels)

    def stage_resolution(self, i: int) -> int:
        return self.base_resolution >> i

    def stage_modes(self, i: int) -> int:
        return min(self.fourier_modes, self.stage_resolution(i) // 2)

    def stage_groups(self, i: int) -> int:
        return min(self.gn_groups, self.encoder_channels[i])

    @property
    def in_channels(self) -> int:
        return 1 + hi.history_length(self.input_mode)

    def injection_stages(self) -> list[tuple[int, int]]:
        """(level, encoder stage) pairs for the coarse companion inputs."""
        if self.input_mode not in hi.LATENT_MODES:
            return []
        out = []
        for level, ratio in enumerate(self.hierarchy.ratios, start=1):
            stage = int(ratio).bit_length() - 1
            if 2**stage != ratio:
                raise ConfigurationError(f"ratio {ratio} must be a power of two")
            out.append((level, stage))
        return out

    def head_plan(self) -> list[tuple[str, int]]:
        """(name, decoder stage) per output head, full-resolution head first."""
        heads = [("u", 0)]
        if self.input_mode == hi.MODE_TWO_STEP_AHEAD:
            heads.append(("u2", 0))
        elif self.input_mode in (hi.MODE_L2, hi.MODE_L3, hi.MODE_SPATIAL_HIERARCHY):
            for level, stage in self.injection_stages():
                heads.append((f"z{level}", stage))
        return heads

    def out_heads(self) -> list[tuple[str, int]]:
        """(name, spatial resolution) of every output head."""
        return [(n, self.stage_resolution(s)) for n, s in self.head_plan()]


@dataclass
class ModelOutputs:
    """Per-head predictions, ordered as in ``ModelConfig.head_plan``."""

    heads: list

    def arrays(self) -> tuple[np.ndarray, ...]:
        """Head values for sample 0 of the batch, squeezed to (H, W)."""
        return tuple(h.values[0, 0] for h in self.heads)


class ModelParams:
    """Named, shaped parameter collection with deterministic ordering."""

    def __init__(self, tensors: dict[str, ad.Tensor]):
        self.tensors = tensors

    def __getitem__(self, name: str) -> ad.Tensor:
        return self.tensors[name]

    def names(self):
        return list(self.tensors)

    def items(self):
        return self.tensors.items()

    def total_count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def copy(self) -> "ModelParams":
        return ModelParams(
            {k: ad.Tensor(v.values.copy(), requires_grad=True) for k, v in self.items()}
        )

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            {k: ad.Tensor(v.values.astype(dtype), requires_grad=True) for k, v in self.items()}
        )


def _conv_spec(name, cout, cin, k, init=_CONV):
    return [(f"{name}.w", (cout, cin, k, k), init), (f"{name}.b", (cout,), _ZEROS)]


def _gn_spec(name, c):
    return [(f"{name}.g", (c,), _ONES), (f"{name}.b", (c,), _ZEROS)]


class EmulatorModel:
    """Builds the layer plan for a config and runs the forward pass.

    ``forward_calls`` counts invocations; a rollout of N steps performs
    exactly N forward passes regardless of the number of output heads.
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        self.forward_calls = 0
        self._injections = {}  # stage -> [level, ...]
        for level, stage in config.injection_stages():
            self._injections.setdefault(stage, []).append(level)
        self._plan = self._build_plan()

    def _build_plan(self):
        cfg = self.config
        ch = cfg.encoder_channels
        plan = []
        plan += _conv_spec("stem", ch[0], cfg.in_channels, 3)
        for i in range(cfg.n_stages):
            if i > 0:
                plan += _conv_spec(f"enc{i}.trans", ch[i], ch[i - 1], 1)
            for level in self._injections.get(i, []):
                plan += _conv_spec(f"enc{i}.inj{level}.proj", ch[i], 1, 3)
                plan += _conv_spec(f"enc{i}.inj{level}.merge", ch[i], 2 * ch[i], 1)
            plan += self._block_spec(f"enc{i}", i)
        for i in range(cfg.n_stages - 2, -1, -1):
            plan += _conv_spec(f"dec{i}.up", ch[i], ch[i + 1], 1)
            plan += _conv_spec(f"dec{i}.skip", ch[i], 2 * ch[i], 1)
            plan += self._block_spec(f"dec{i}", i)
        for name, stage in cfg.head_plan():
            plan += _conv_spec(f"head.{name}", 1, ch[stage], 1, init=_ZERO)
        return plan

    def _block_spec(self, prefix, stage):
        cfg = self.config
        c = cfg.encoder_channels[stage]
        m = cfg.stage_modes(stage)
        spec = []
        for b in range(BLOCKS_PER_STAGE):
            p = f"{prefix}.block{b}"
            spec += _conv_spec(f"{p}.conv1", c, c, 3)
            spec += _gn_spec(f"{p}.gn1", c)
            spec += _conv_spec(f"{p}.conv2", c, c, 3)
            spec += _gn_spec(f"{p}.gn2", c)
            if m > 0:
                spec.append((f"{p}.four.w", (c, 2 * m - 1, m, 2), _FOURIER))
        return spec

    def param_count(self) -> int:
        return sum(int(np.prod(shape)) for _, shape, _ in self._plan)

    def init_params(self, seed: int, dtype=np.float32) -> ModelParams:
        """Deterministic parameter draw.

        Convolutions: uniform +-sqrt(1/fan_in); spectral weights: complex
        Gaussian with std 1/(retained mode count); output heads: zeros.
        """
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, shape, init in self._plan:
            if init == _CONV:
                fan_in = int(np.prod(shape[1:]))
                bound = np.sqrt(1.0 / fan_in)
                vals = rng.uniform(-bound, bound, size=shape)
            elif init == _FOURIER:
                n_modes = shape[1] * shape[2]
                vals = rng.normal(0.0, 1.0 / n_modes, size=shape)
            elif init == _ONES:
                vals = np.ones(shape)
            else:  # _ZEROS and _ZERO heads
                vals = np.zeros(shape)
            tensors[name] = ad.Tensor(vals.astype(dtype), requires_grad=True)
        return ModelParams(tensors)

    # -- forward ---------------------------------------------------------

    def _block(self, x, params, prefix, stage):
        cfg = self.config
        t = params.tensors
        g = cfg.stage_groups(stage)
        h = ad.conv2d(x, t[f"{prefix}.conv1.w"], t[f"{prefix}.conv1.b"])
        h = ad.group_norm(h, t[f"{prefix}.gn1.g"], t[f"{prefix}.gn1.b"], g)
        h = ad.gelu(h)
        h = ad.conv2d(h, t[f"{prefix}.conv2.w"], t[f"{prefix}.conv2.b"])
        h = ad.group_norm(h, t[f"{prefix}.gn2.g"], t[f"{prefix}.gn2.b"], g)
        out = ad.add(x, h)
        m = cfg.stage_modes(stage)
        if m > 0:
            out = ad.add(out, ad.spectral_conv_depthwise(x, t[f"{prefix}.four.w"], m))
        return out

    def forward(self, params: ModelParams, stem: np.ndarray, latents=()) -> ModelOutputs:
        """Run the network on a batch.

        stem: (B, in_channels, H, W) with the current frame in the last
        channel (older history frames first).  latents: one (B, 1, h, w)
        array per companion level, coarse to coarser.
        """
        cfg = self.config
        t = params.tensors
        self.forward_calls += 1
        stem = np.asarray(stem)
        if stem.ndim != 4 or stem.shape[1] != cfg.in_channels or stem.shape[2:] != (
            cfg.base_resolution,
            cfg.base_resolution,
        ):
            raise ShapeError(
                f"stem input must be (B, {cfg.in_channels}, {cfg.base_resolution}, "
                f"{cfg.base_resolution}), got {stem.shape}"
            )
        n_latents = len(cfg.injection_stages())
        if len(latents) != n_latents:
            raise ShapeError(f"expected {n_latents} companion inputs, got {len(latents)}")

        latent_in = {}
        for (level, stage), z in zip(cfg.injection_stages(), latents):
            z = np.asarray(z)
            res = cfg.stage_resolution(stage)
            if z.shape[1:] != (1, res, res):
                raise ShapeError(
                    f"companion level {level} must be (B, 1, {res}, {res}), got {z.shape}"
                )
            latent_in[level] = ad.Tensor(z)

        x = ad.conv2d(ad.Tensor(stem), t["stem.w"], t["stem.b"])
        enc = []
        for i in range(cfg.n_stages):
            if i > 0:
                x = ad.down2(x)
                x = ad.conv2d(x, t[f"enc{i}.trans.w"], t[f"enc{i}.trans.b"])
            for level in self._injections.get(i, []):
                zp = ad.conv2d(
                    latent_in[level],
                    t[f"enc{i}.inj{level}.proj.w"],
                    t[f"enc{i}.inj{level}.proj.b"],
                )
                x = ad.concat([x, zp])
                x = ad.conv2d(
                    x, t[f"enc{i}.inj{level}.merge.w"], t[f"enc{i}.inj{level}.merge.b"]
                )
            for b in range(BLOCKS_PER_STAGE):
                x = self._block(x, params, f"enc{i}.block{b}", i)
            enc.append(x)

        dec = {cfg.n_stages - 1: enc[-1]}
        x = enc[-1]
        for i in range(cfg.n_stages - 2, -1, -1):
            x = ad.up2(x)
            x = ad.conv2d(x, t[f"dec{i}.up.w"], t[f"dec{i}.up.b"])
            x = ad.concat([x, enc[i]])
            x = ad.conv2d(x, t[f"dec{i}.skip.w"], t[f"dec{i}.skip.b"])
            for b in range(BLOCKS_PER_STAGE):
                x = self._block(x, params, f"dec{i}.block{b}", i)
            dec[i] = x

        current = ad.Tensor(stem[:, -1:, :, :])
        heads = []
        level_for_head = {f"z{lvl}": lvl for lvl, _ in cfg.injection_stages()}
        for name, stage in cfg.head_plan():
            delta = ad.conv2d(dec[stage], t[f"head.{name}.w"], t[f"head.{name}.b"])
            if name in level_for_head:
                base = latent_in[level_for_head[name]]
            else:
                base = current
            heads.append(ad.add(base, delta))
        return ModelOutputs(heads=heads)
