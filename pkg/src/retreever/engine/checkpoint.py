"""Flat binary parameter checkpoints.

Layout (all integers little-endian):
  header:  magic b"RTRV" | uint32 version | uint32 tensor count
  tensor:  uint16 name length | utf-8 name | uint8 ndim | ndim x uint32 dims
           | raw little-endian floats
Version 1 stores float32 payloads, version 2 float64; the per-tensor layout
is identical in both.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import ConfigError

MAGIC = b"RTRV"
_VERSION_DTYPE = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    sample = next(iter(tensors.values()), None)
    dtype = np.float64 if (sample is not None and sample.dtype == np.float64) else np.float32
    version = 2 if dtype == np.float64 else 1
    wire = _VERSION_DTYPE[version]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", version, len(tensors)))
        for name, arr in tensors.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype=wire).tobytes())


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise ConfigError(f"{path}: bad checkpoint magic {blob[:4]!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version not in _VERSION_DTYPE:
        raise ConfigError(f"{path}: unsupported checkpoint version {version}")
    wire = _VERSION_DTYPE[version]
    out: dict[str, np.ndarray] = {}
    offset = 12
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(blob, dtype=wire, count=size, offset=offset).reshape(shape)
        offset += size * wire.itemsize
        out[name] = arr.astype(wire.newbyteorder("="))
    if offset != len(blob):
        raise ConfigError(f"{path}: {len(blob) - offset} trailing bytes in checkpoint")
    return out
