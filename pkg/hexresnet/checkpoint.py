"""
Versioned binary checkpoint container.

Layout (little-endian): 4-byte magic ``HXRN``, uint32 format version, uint64
length of a UTF-8 JSON header, the header, then every tensor of the header's
manifest in order using the layout from :mod:`hexresnet.serialization`.
"""

from __future__ import annotations

import io
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from .config import ArchConfig, TrainConfig
from .errors import CheckpointFormatError, ShapeMismatchError
from .optim import SGD
from .resnet import ResNet
from .serialization import read_tensor, write_tensor

logger = logging.getLogger(__name__)

MAGIC = b"HXRN"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<4sIQ")
GROUPS = ("param", "buffer", "velocity")


@dataclass
class Checkpoint:
    arch: ArchConfig
    train: TrainConfig
    iteration: int
    epoch: int
    params: Dict[str, np.ndarray]
    buffers: Dict[str, np.ndarray]
    velocities: Dict[str, np.ndarray] = field(default_factory=dict)
    rng_state: Dict[str, int] = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @classmethod
    def capture(
        cls,
        model: ResNet,
        arch: ArchConfig,
        train: TrainConfig,
        iteration: int,
        epoch: int,
        optimizer: Optional[SGD] = None,
    ) -> "Checkpoint":
        """Snapshot a model (and optimizer) into an in-memory checkpoint."""
        return cls(
            arch=arch,
            train=train,
            iteration=iteration,
            epoch=epoch,
            params={name: p.data.copy() for name, p in model.named_parameters()},
            buffers={name: b.copy() for name, b in model.named_buffers()},
            velocities={k: v.copy() for k, v in optimizer.velocities().items()} if optimizer else {},
            rng_state={"seed": train.seed, "epoch": epoch},
        )

    def restore(self, model: ResNet, optimizer: Optional[SGD] = None) -> None:
        state = {f"param:{k}": v for k, v in self.params.items()}
        state.update({f"buffer:{k}": v for k, v in self.buffers.items()})
        try:
            model.load_state_dict(state)
        except (KeyError, ShapeMismatchError) as exc:
            raise CheckpointFormatError(f"checkpoint does not match the model: {exc}") from exc
        if optimizer is not None and self.velocities:
            try:
                optimizer.load_velocities(self.velocities)
            except (KeyError, ValueError) as exc:
                raise CheckpointFormatError(f"checkpoint velocities do not match the model: {exc}") from exc

    def _manifest(self) -> List[Dict[str, object]]:
        groups = {"param": self.params, "buffer": self.buffers, "velocity": self.velocities}
        return [
            {"group": group, "name": name, "shape": list(array.shape)}
            for group in GROUPS
            for name, array in groups[group].items()
        ]


def save_checkpoint(path: Union[str, Path], ckpt: Checkpoint) -> Path:
    """Write ``ckpt`` atomically (temporary file then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = ckpt._manifest()
    header = json.dumps(
        {
            "arch": ckpt.arch.model_dump(mode="json"),
            "train": ckpt.train.model_dump(mode="json"),
            "iteration": ckpt.iteration,
            "epoch": ckpt.epoch,
            "rng": ckpt.rng_state,
            "tensors": manifest,
        },
        sort_keys=True,
    ).encode("utf-8")
    groups = {"param": ckpt.params, "buffer": ckpt.buffers, "velocity": ckpt.velocities}

    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fp:
        fp.write(_PREAMBLE.pack(MAGIC, ckpt.version, len(header)))
        fp.write(header)
        for entry in manifest:
            write_tensor(fp, groups[entry["group"]][entry["name"]])  # type: ignore[index]
    os.replace(tmp, path)
    logger.info("Saved checkpoint to %s (epoch %d, iteration %d)", path, ckpt.epoch, ckpt.iteration)
    return path


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> Checkpoint:
    fp = io.BytesIO(data)
    preamble = fp.read(_PREAMBLE.size)
    if len(preamble) != _PREAMBLE.size:
        raise CheckpointFormatError(f"{source}: file too short for a checkpoint")
    magic, version, header_len = _PREAMBLE.unpack(preamble)
    if magic != MAGIC:
        raise CheckpointFormatError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"{source}: unsupported checkpoint version {version}")
    raw_header = fp.read(header_len)
    if len(raw_header) != header_len:
        raise CheckpointFormatError(f"{source}: truncated header")
    try:
        header = json.loads(raw_header.decode("utf-8"))
        arch = ArchConfig(**header["arch"])
        train = TrainConfig(**header["train"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"{source}: unreadable header: {exc}") from exc

    groups: Dict[str, Dict[str, np.ndarray]] = {g: {} for g in GROUPS}
    for entry in header.get("tensors", []):
        if entry.get("group") not in groups:
            raise CheckpointFormatError(f"{source}: unknown tensor group {entry.get('group')!r}")
        tensor = read_tensor(fp)
        shape = tuple(entry["shape"])
        if tensor.size != int(np.prod(shape, dtype=np.int64)):
            raise CheckpointFormatError(f"{source}: tensor {entry['name']} does not match shape {shape}")
        groups[entry["group"]][entry["name"]] = tensor.reshape(shape)

    return Checkpoint(
        arch=arch,
        train=train,
        iteration=int(header["iteration"]),
        epoch=int(header["epoch"]),
        params=groups["param"],
        buffers=groups["buffer"],
        velocities=groups["velocity"],
        rng_state=dict(header.get("rng", {})),
        version=version,
    )


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Read a checkpoint; a missing file raises ``FileNotFoundError``."""
    path = Path(path)
    ckpt = decode_checkpoint(path.read_bytes(), source=str(path))
    logger.info("Loaded checkpoint %s (epoch %d, iteration %d)", path, ckpt.epoch, ckpt.iteration)
    return ckpt
