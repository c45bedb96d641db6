"""Binary parameter checkpoints.

Layout, all little-endian::

    b"IMGN" | u16 version | u32 len | JSON config block | u32 n_tensors
    per tensor: u16 len | utf-8 name | u8 ndim | u32 dims... | float64 data
"""

from __future__ import annotations

from collections.abc import Mapping
import json
from pathlib import Path
import struct
from typing import Any

import numpy as np

from .errors import ArtifactMissing, FeatureFormatError
from .utils import sha256_hex

MAGIC = b"IMGN"
VERSION = 1


def encode_checkpoint(
    config: Mapping[str, Any], tensors: Mapping[str, np.ndarray]
) -> bytes:
    block = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<HI", VERSION, len(block)), block]
    parts.append(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        array = np.ascontiguousarray(tensors[name], dtype="<f8")
        encoded = name.encode()
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack(f"<B{array.ndim}I", array.ndim, *array.shape))
        parts.append(array.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FeatureFormatError("IMGN checkpoint", "truncated data")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple[Any, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    reader = _Reader(data)
    magic = reader.take(4)
    if magic != MAGIC:
        raise FeatureFormatError("IMGN checkpoint", f"magic {magic!r}")
    version, block_len = reader.unpack("<HI")
    if version != VERSION:
        raise FeatureFormatError(f"checkpoint version {VERSION}", version)
    config = json.loads(reader.take(block_len))
    (count,) = reader.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode()
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I")
        n = int(np.prod(shape, dtype=np.int64))
        flat = np.frombuffer(reader.take(8 * n), dtype="<f8")
        tensors[name] = flat.reshape(shape).copy()
    if reader.pos != len(data):
        raise FeatureFormatError("IMGN checkpoint", "trailing bytes")
    return config, tensors


def save_checkpoint(
    path: str | Path, config: Mapping[str, Any], tensors: Mapping[str, np.ndarray]
) -> str:
    """Write the checkpoint and return the SHA-256 of its bytes."""
    data = encode_checkpoint(config, tensors)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    return sha256_hex(data)


def load_checkpoint(path: str | Path) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise ArtifactMissing(path, "checkpoint")
    return decode_checkpoint(path.read_bytes())
