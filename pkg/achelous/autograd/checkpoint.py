"""Self-describing binary tensor files.

Layout: magic ``ACHL``, version (u32), then until EOF one record per tensor:
name length (u32), UTF-8 name, rank (u32), rank dims (u32 each), and the
little-endian float32 payload in row-major order.
"""
import logging
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Mapping

import numpy as np

from core.errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"ACHL"
VERSION = 1
_U32 = struct.Struct("<I")


def encode_tensors(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, _U32.pack(VERSION)]
    for name, array in tensors.items():
        raw = name.encode("utf-8")
        array = np.ascontiguousarray(array, dtype="<f4")
        parts.append(_U32.pack(len(raw)))
        parts.append(raw)
        parts.append(_U32.pack(array.ndim))
        parts.extend(_U32.pack(d) for d in array.shape)
        parts.append(array.tobytes())
    return b"".join(parts)


def decode_tensors(blob: bytes, path="<memory>") -> "OrderedDict[str, np.ndarray]":
    if blob[:4] != MAGIC:
        raise CheckpointError(path, f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < 8:
        raise CheckpointError(path, "truncated header")
    (version,) = _U32.unpack_from(blob, 4)
    if version != VERSION:
        raise CheckpointError(path, f"unsupported version {version}")

    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    pos = 8

    def take(count: int) -> bytes:
        nonlocal pos
        if pos + count > len(blob):
            raise CheckpointError(path, f"truncated at byte {pos}, needed {count} more")
        chunk = blob[pos: pos + count]
        pos += count
        return chunk

    while pos < len(blob):
        (length,) = _U32.unpack(take(4))
        name = take(length).decode("utf-8")
        (rank,) = _U32.unpack(take(4))
        shape = tuple(_U32.unpack(take(4))[0] for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        payload = np.frombuffer(take(4 * count), dtype="<f4")
        tensors[name] = payload.reshape(shape).astype(np.float32)
    return tensors


def save_tensors(path, tensors: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_tensors(tensors))
    logger.debug(f"Wrote {len(tensors)} tensors to {path}")


def load_tensors(path) -> "OrderedDict[str, np.ndarray]":
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(path, "file not found")
    return decode_tensors(path.read_bytes(), path)


def save_checkpoint(path, state: Dict[str, np.ndarray], config_text: str = "") -> None:
    """Write a model state and, when given, the run config next to it as ``<name>.cfg``."""
    save_tensors(path, state)
    if config_text:
        Path(path).with_suffix(".cfg").write_text(config_text, encoding="utf-8")
    logger.info(f"Saved checkpoint with {len(state)} tensors to {path}")


def load_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    state = load_tensors(path)
    logger.info(f"Loaded checkpoint with {len(state)} tensors from {path}")
    return state
