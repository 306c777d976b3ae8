"""Checkpoint archives.

Layout of a checkpoint directory::

    config.txt        resolved run configuration, one key=value per line
    index.txt         one line per tensor: <name> <group> <shape, e.g. 16x48 or scalar>
    tensors/<name>.bin  row-major little-endian float32
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterable

import numpy as np
import torch

from .config import ConfigError, RunConfig
from .model import MCAE, build_model

logger = logging.getLogger(__name__)

GROUPS = ("encoder", "decoder", "head")
CONFIG_FILE = "config.txt"
INDEX_FILE = "index.txt"
TENSOR_DIR = "tensors"


class CheckpointError(RuntimeError):
    """Missing, corrupt or incompatible checkpoint archive."""


def _shape_str(shape: Iterable[int]) -> str:
    shape = tuple(shape)
    return "x".join(str(s) for s in shape) if shape else "scalar"


def _parse_shape(text: str) -> tuple[int, ...]:
    return () if text == "scalar" else tuple(int(s) for s in text.split("x"))


def save_checkpoint(
    model: MCAE,
    cfg: RunConfig,
    path: str | Path,
    parts: Iterable[str] = GROUPS,
) -> Path:
    parts = tuple(parts)
    unknown = set(parts) - set(GROUPS)
    if unknown:
        raise ValueError(f"unknown parameter groups {sorted(unknown)}")
    path = Path(path)
    (path / TENSOR_DIR).mkdir(parents=True, exist_ok=True)
    (path / CONFIG_FILE).write_text(cfg.to_manifest())
    lines = []
    for name, tensor in model.state_dict().items():
        group = MCAE.group_of(name)
        if group not in parts:
            continue
        arr = tensor.detach().cpu().numpy().astype("<f4")
        (path / TENSOR_DIR / f"{name}.bin").write_bytes(arr.tobytes(order="C"))
        lines.append(f"{name} {group} {_shape_str(arr.shape)}")
    # drop blobs a previous save may have left for groups not written this time
    written = {line.split()[0] for line in lines}
    for blob in (path / TENSOR_DIR).glob("*.bin"):
        if blob.stem not in written:
            blob.unlink()
    (path / INDEX_FILE).write_text("\n".join(lines) + "\n")
    return path


def read_index(path: str | Path) -> dict[str, tuple[str, tuple[int, ...]]]:
    index_path = Path(path) / INDEX_FILE
    if not index_path.is_file():
        raise CheckpointError(f"missing index file {index_path}")
    out = {}
    for lineno, line in enumerate(index_path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 3 or fields[1] not in GROUPS:
            raise CheckpointError(f"{index_path}:{lineno}: corrupt index line {line!r}")
        try:
            out[fields[0]] = (fields[1], _parse_shape(fields[2]))
        except ValueError as exc:
            raise CheckpointError(f"{index_path}:{lineno}: bad shape {fields[2]!r}") from exc
    return out


def load_config(path: str | Path) -> RunConfig:
    cfg_path = Path(path) / CONFIG_FILE
    if not cfg_path.is_file():
        raise CheckpointError(f"missing config manifest {cfg_path}")
    try:
        return RunConfig.from_manifest(cfg_path.read_text())
    except ConfigError as exc:
        raise CheckpointError(f"bad config manifest {cfg_path}: {exc}") from exc


def load_checkpoint(
    path: str | Path,
    parts: Iterable[str] | None = None,
    dtype: torch.dtype = torch.float32,
) -> tuple[MCAE, RunConfig]:
    """Rebuild the model described by the manifest and fill in stored tensors.

    ``parts`` defaults to every group present in the archive; requesting a
    group the archive lacks is an error. Groups not loaded keep their fresh
    initialization.
    """
    path = Path(path)
    cfg = load_config(path)
    index = read_index(path)
    present = {group for group, _ in index.values()}
    wanted = set(present if parts is None else parts)
    missing = wanted - present
    if missing:
        raise CheckpointError(f"checkpoint {path} has no tensors for {sorted(missing)}")

    model = build_model(cfg.encoder, cfg.decoder, cfg.schedule.seed)
    state = model.state_dict()
    loaded = {}
    for name, (group, shape) in index.items():
        if group not in wanted:
            continue
        if name not in state:
            raise CheckpointError(f"tensor {name!r} not part of the configured model")
        expected = tuple(state[name].shape)
        if expected != shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: archive has {shape}, config implies {expected}"
            )
        blob = path / TENSOR_DIR / f"{name}.bin"
        if not blob.is_file():
            raise CheckpointError(f"missing tensor blob {blob}")
        raw = blob.read_bytes()
        if len(raw) != 4 * int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"truncated tensor blob {blob}")
        loaded[name] = torch.from_numpy(np.frombuffer(raw, dtype="<f4").reshape(shape).copy())
    for name in state:
        if MCAE.group_of(name) in wanted and name not in loaded:
            raise CheckpointError(f"archive lacks tensor {name!r}")
    model.load_state_dict(loaded, strict=False)
    if dtype == torch.float64:
        model = model.double()
    return model, cfg


def checkpoint_groups(path: str | Path) -> set[str]:
    return {group for group, _ in read_index(path).values()}
