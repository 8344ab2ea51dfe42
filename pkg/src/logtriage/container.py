"""Versioned little-endian binary containers for fitted artifacts.

Codebook sidecar ("LIDC"): magic, version u16, K u32, d u32, temperature f64,
then K*d prototype values as f64, row-major.

Model checkpoint ("LIDP"): magic, version u16, array count u32, then per
array: name (u16 length + utf-8), ndim u8, dims u32 each, values f64.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

CODEBOOK_MAGIC = b"LIDC"
POLICY_MAGIC = b"LIDP"
CONTAINER_VERSION = 1


class ArtifactError(Exception):
    """Corrupted or incompatible artifact container."""


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ArtifactError("container truncated")
    return data


def _check_header(fh, magic: bytes, path: Path) -> None:
    got = _read_exact(fh, 4)
    if got != magic:
        raise ArtifactError(f"{path}: bad magic {got!r}, expected {magic!r}")
    (version,) = struct.unpack("<H", _read_exact(fh, 2))
    if version != CONTAINER_VERSION:
        raise ArtifactError(
            f"{path}: container version {version} does not match supported version {CONTAINER_VERSION}"
        )


def write_codebook(path: str | Path, prototypes: np.ndarray, temperature: float) -> None:
    prototypes = np.ascontiguousarray(prototypes, dtype="<f8")
    if prototypes.ndim != 2:
        raise ArtifactError(f"prototypes must be 2-d, got shape {prototypes.shape}")
    k, d = prototypes.shape
    with open(path, "wb") as fh:
        fh.write(CODEBOOK_MAGIC)
        fh.write(struct.pack("<H", CONTAINER_VERSION))
        fh.write(struct.pack("<IId", k, d, float(temperature)))
        fh.write(prototypes.tobytes())


def read_codebook(path: str | Path) -> tuple[np.ndarray, float]:
    path = Path(path)
    with open(path, "rb") as fh:
        _check_header(fh, CODEBOOK_MAGIC, path)
        k, d, temperature = struct.unpack("<IId", _read_exact(fh, 16))
        raw = _read_exact(fh, 8 * k * d)
    prototypes = np.frombuffer(raw, dtype="<f8").reshape(k, d).copy()
    return prototypes, temperature


def write_arrays(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(POLICY_MAGIC)
        fh.write(struct.pack("<H", CONTAINER_VERSION))
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes())


def read_arrays(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    arrays: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        _check_header(fh, POLICY_MAGIC, path)
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
            shape = tuple(
                struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(ndim)
            )
            n = int(np.prod(shape)) if shape else 1
            raw = _read_exact(fh, 8 * n)
            arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return arrays
