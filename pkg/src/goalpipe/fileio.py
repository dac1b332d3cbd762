"""Binary file formats.

All integers little-endian. Three containers share the same skeleton:

  .gcfg  magic "GCFG" | u32 version=1 | u32 dim | u64 count | count*dim f32
  .gemb  magic "GEMB" | u32 version=1 | u32 dim | u64 count | count*dim f32
  GPOL   magic "GPOL" | u32 version=1 | u32 layer_count
         | layer_count * (u32 rows, u32 cols) | concatenated f32 data

Row-major float32 payloads throughout.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import BadMagic, CountMismatch, TruncatedFile, VersionUnsupported

VERSION = 1


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedFile(f"expected {n} bytes for {what}, got {len(buf)}")
    return buf


def write_matrix(path, magic: bytes, data: np.ndarray):
    data = np.ascontiguousarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise ValueError(f"expected 2-D matrix, got shape {data.shape}")
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<IIQ", VERSION, data.shape[1], data.shape[0]))
        f.write(data.tobytes())


def read_matrix(path, magic: bytes) -> np.ndarray:
    with open(path, "rb") as f:
        got = _read_exact(f, 4, "magic")
        if got != magic:
            raise BadMagic(f"{Path(path).name}: magic {got!r}, expected {magic!r}")
        version, dim, count = struct.unpack("<IIQ", _read_exact(f, 16, "header"))
        if version != VERSION:
            raise VersionUnsupported(f"version {version}")
        if count == 0 or dim == 0:
            raise CountMismatch(f"header declares {count}x{dim} payload")
        payload = f.read()
    expected = count * dim * 4
    if len(payload) < expected:
        raise TruncatedFile(
            f"payload holds {len(payload)} bytes, header promised {expected}"
        )
    if len(payload) > expected:
        raise CountMismatch(
            f"payload holds {len(payload)} bytes, header promised {expected}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(count, dim).copy()


def write_gpol(path, arrays: list[np.ndarray]):
    shapes = []
    blobs = []
    for arr in arrays:
        a = np.ascontiguousarray(arr, dtype=np.float32)
        if a.ndim == 1:
            shapes.append((1, a.shape[0]))
        elif a.ndim == 2:
            shapes.append(a.shape)
        else:
            raise ValueError(f"GPOL stores 1-D/2-D arrays, got shape {a.shape}")
        blobs.append(a.tobytes())
    with open(path, "wb") as f:
        f.write(b"GPOL")
        f.write(struct.pack("<II", VERSION, len(arrays)))
        for rows, cols in shapes:
            f.write(struct.pack("<II", rows, cols))
        for blob in blobs:
            f.write(blob)


def read_gpol(path) -> list[np.ndarray]:
    with open(path, "rb") as f:
        got = _read_exact(f, 4, "magic")
        if got != b"GPOL":
            raise BadMagic(f"{Path(path).name}: magic {got!r}, expected b'GPOL'")
        version, n_layers = struct.unpack("<II", _read_exact(f, 8, "header"))
        if version != VERSION:
            raise VersionUnsupported(f"version {version}")
        shapes = [
            struct.unpack("<II", _read_exact(f, 8, f"layer {i} shape"))
            for i in range(n_layers)
        ]
        arrays = []
        for i, (rows, cols) in enumerate(shapes):
            blob = _read_exact(f, rows * cols * 4, f"layer {i} data")
            arr = np.frombuffer(blob, dtype="<f4").reshape(rows, cols).copy()
            arrays.append(arr[0] if rows == 1 else arr)
        extra = f.read(1)
    if extra:
        raise CountMismatch("trailing bytes after declared layers")
    return arrays
