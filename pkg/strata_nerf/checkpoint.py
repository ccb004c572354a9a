"""
Strata-NeRF - Checkpoint Files
==============================

Binary container::

    magic     8 bytes   b"STRATANF"
    version   uint32    FORMAT_VERSION
    header    uint32 length + UTF-8 JSON (sorted keys): {"model": ModelConfig, "step": int}
    count     uint32    number of tensors
    tensors   in name order, each:
                uint32 name length, name bytes,
                uint32 rank, rank x uint64 dims,
                little-endian float64 payload

All integers are little-endian. Loading validates every tensor against the
shapes the stored ModelConfig implies.
"""

from __future__ import annotations

import json
import struct
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError
from .field import ModelConfig, parameter_shapes

MAGIC = b"STRATANF"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    config: ModelConfig
    step: int = 0

    def check_levels(self, num_levels: int) -> None:
        """Reject a dataset whose level count differs from the one the model was trained on."""
        if self.config.num_levels != num_levels:
            raise ConfigError(
                f"checkpoint was trained on {self.config.num_levels} levels, dataset has {num_levels}"
            )


def encode_checkpoint(params: Mapping[str, np.ndarray], config: ModelConfig, step: int = 0) -> bytes:
    header = json.dumps({"model": config.to_dict(), "step": int(step)}, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<I", len(header)), header,
              struct.pack("<I", len(params))]
    for name in sorted(params):
        value = np.asarray(params[name], dtype=np.float64)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)) + encoded)
        chunks.append(struct.pack(f"<I{value.ndim}Q", value.ndim, *value.shape))
        chunks.append(value.astype("<f8").tobytes())
    return b"".join(chunks)


def save_checkpoint(path: Path, params: Mapping[str, np.ndarray], config: ModelConfig, step: int = 0) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(params, config, step))
    return path


class _Reader:
    def __init__(self, data: bytes, source: str) -> None:
        self.data = data
        self.offset = 0
        self.source = source

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise CheckpointError(f"truncated checkpoint: {self.source}")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> Checkpoint:
    reader = _Reader(data, source)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"not a checkpoint file: {source}")
    (version,) = reader.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} in {source}")
    (header_len,) = reader.unpack("<I")
    try:
        header = json.loads(reader.take(header_len).decode("utf-8"))
        config = ModelConfig(**header["model"])
    except (ValueError, KeyError, TypeError, ConfigError) as exc:
        raise CheckpointError(f"invalid checkpoint header in {source}: {exc}") from None

    (count,) = reader.unpack("<I")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<I")
        name = reader.take(name_len).decode("utf-8")
        (rank,) = reader.unpack("<I")
        shape = reader.unpack(f"<{rank}Q") if rank else ()
        size = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(reader.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
    if reader.offset != len(data):
        raise CheckpointError(f"trailing bytes after the last tensor in {source}")

    validate_params(params, config, source)
    return Checkpoint(params, config, int(header.get("step", 0)))


def validate_params(params: Mapping[str, np.ndarray], config: ModelConfig, source: str = "checkpoint") -> None:
    expected = parameter_shapes(config)
    missing = sorted(set(expected) - set(params))
    extra = sorted(set(params) - set(expected))
    if missing or extra:
        raise CheckpointError(
            f"{source} does not match variant '{config.variant}': missing {missing}, unexpected {extra}"
        )
    for name, shape in expected.items():
        if tuple(params[name].shape) != tuple(shape):
            raise CheckpointError(
                f"{source}: tensor {name} has shape {list(params[name].shape)}, expected {list(shape)}"
            )


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes(), str(path))
