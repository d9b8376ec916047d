"""Binary artifact formats: trajectory datasets, model checkpoints, manifests.

Everything is little-endian.  Readers reject unknown magic or version; float32
payloads round-trip bit-exactly.  Each trajectory file gets a human-readable
``.meta`` sidecar duplicating the header as key=value lines.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .solver import FlowParams, TrajectoryDataset

TRAJECTORY_MAGIC = b"IEMU"
CHECKPOINT_MAGIC = b"IEMC"
FORMAT_VERSION = 1

_TRAJ_HEADER = "<4sIIIIddddIddQ"


def write_trajectory(path, dataset: TrajectoryDataset) -> None:
    path = Path(path)
    p = dataset.params
    header = struct.pack(
        _TRAJ_HEADER,
        TRAJECTORY_MAGIC,
        FORMAT_VERSION,
        dataset.nx,
        dataset.ny,
        dataset.n_snapshots,
        dataset.dt_emulator,
        p.reynolds,
        p.drag,
        p.beta,
        p.forcing_wavenumber,
        p.forcing_amplitude,
        dataset.normalization_scale,
        dataset.seed,
    )
    data = np.ascontiguousarray(dataset.snapshots, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())
    meta = {
        "magic": TRAJECTORY_MAGIC.decode(),
        "version": FORMAT_VERSION,
        "nx": dataset.nx,
        "ny": dataset.ny,
        "n_snapshots": dataset.n_snapshots,
        "dt_emulator": repr(dataset.dt_emulator),
        "reynolds": repr(p.reynolds),
        "drag": repr(p.drag),
        "beta": repr(p.beta),
        "forcing_wavenumber": p.forcing_wavenumber,
        "forcing_amplitude": repr(p.forcing_amplitude),
        "normalization_scale": repr(dataset.normalization_scale),
        "seed": dataset.seed,
    }
    with open(path.with_suffix(path.suffix + ".meta"), "w") as fh:
        for k, v in meta.items():
            fh.write(f"{k}={v}\n")


def read_trajectory(path, dt_solver: float | None = None) -> TrajectoryDataset:
    """Read a trajectory file.

    The solver step is not part of the header; ``dt_solver`` may be supplied
    to reconstruct it, otherwise a stride of 1 at ``dt_emulator`` is assumed.
    """
    path = Path(path)
    size = struct.calcsize(_TRAJ_HEADER)
    with open(path, "rb") as fh:
        raw = fh.read(size)
        if len(raw) < size:
            raise FormatError(f"{path}: truncated header")
        (
            magic,
            version,
            nx,
            ny,
            n_snapshots,
            dt_emulator,
            reynolds,
            drag,
            beta,
            kf,
            amp,
            scale,
            seed,
        ) = struct.unpack(_TRAJ_HEADER, raw)
        if magic != TRAJECTORY_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        payload = np.frombuffer(fh.read(), dtype="<f4")
    expected = n_snapshots * nx * ny
    if payload.size != expected:
        raise FormatError(
            f"{path}: payload has {payload.size} values, expected {expected}"
        )
    if dt_solver is None:
        dt_solver, stride = dt_emulator, 1
    else:
        stride = max(1, round(dt_emulator / dt_solver))
    params = FlowParams(
        reynolds=reynolds,
        drag=drag,
        beta=beta,
        forcing_wavenumber=kf,
        forcing_amplitude=amp,
        dt_solver=dt_solver,
        snapshot_stride=stride,
    )
    return TrajectoryDataset(
        params=params,
        nx=nx,
        ny=ny,
        snapshots=payload.reshape(n_snapshots, ny, nx).copy(),
        dt_emulator=dt_emulator,
        normalization_scale=scale,
        seed=seed,
    )


def write_checkpoint(path, config_text: str, params) -> None:
    """Serialize named parameter tensors after canonical config text."""
    cfg_bytes = config_text.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(cfg_bytes)))
        fh.write(cfg_bytes)
        items = list(params.items())
        fh.write(struct.pack("<I", len(items)))
        for name, tensor in items:
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            shape = tensor.values.shape
            fh.write(struct.pack("<I", len(shape)))
            fh.write(struct.pack(f"<{len(shape)}I", *shape))
            fh.write(np.ascontiguousarray(tensor.values, dtype="<f4").tobytes())


def read_checkpoint(path) -> tuple[str, dict[str, np.ndarray]]:
    """Returns (config_text, name -> float32 array)."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        (cfg_len,) = struct.unpack("<I", fh.read(4))
        config_text = fh.read(cfg_len).decode("utf-8")
        (count,) = struct.unpack("<I", fh.read(4))
        arrays = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            n = int(np.prod(shape)) if rank else 1
            buf = fh.read(4 * n)
            if len(buf) < 4 * n:
                raise FormatError(f"{path}: truncated tensor {name!r}")
            arrays[name] = np.frombuffer(buf, dtype="<f4").reshape(shape).copy()
    return config_text, arrays


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, config_hash: str, seed: int, artifacts: dict[str, str]) -> None:
    payload = {
        "config_hash": config_hash,
        "seed": seed,
        "artifacts": {name: sha256_file(p) for name, p in artifacts.items()},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
