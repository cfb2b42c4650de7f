"""Binary field snapshots.

Layout (all little-endian)::

    magic        4 bytes   b"WWF1"
    K            uint32
    gridSize     uint32
    field count  uint32
    fields       count * (2K+1)^2 complex64, row-major, n1 outer from -K..K

Coefficients are written as complex64; a file read back and written again
is byte-identical.
"""
from __future__ import annotations

import io
import os
import struct
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .torus import LatticeSpec, SpectralField

MAGIC = b"WWF1"
_HEADER = struct.Struct("<4sIII")
_DTYPE = np.dtype("<c8")


class SnapshotFormatError(ValueError):
    pass


def encode(lattice: LatticeSpec, arrays: Iterable[np.ndarray]) -> bytes:
    arrays = [np.asarray(a) for a in arrays]
    for a in arrays:
        if a.shape != lattice.shape:
            raise ValueError(f"array shape {a.shape} does not match lattice {lattice.shape}")
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, lattice.K, lattice.gridSize, len(arrays)))
    for a in arrays:
        buf.write(np.ascontiguousarray(a, dtype=_DTYPE).tobytes())
    return buf.getvalue()


def decode(data: bytes) -> tuple[LatticeSpec, list[np.ndarray]]:
    if len(data) < _HEADER.size:
        raise SnapshotFormatError("truncated header")
    magic, K, grid, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise SnapshotFormatError(f"bad magic {magic!r}")
    lattice = LatticeSpec(K, grid)
    per = lattice.width ** 2 * _DTYPE.itemsize
    if len(data) != _HEADER.size + count * per:
        raise SnapshotFormatError("payload size does not match header")
    raw = np.frombuffer(data, dtype=_DTYPE, offset=_HEADER.size)
    arrays = [raw[i * lattice.width ** 2:(i + 1) * lattice.width ** 2].reshape(lattice.shape).copy()
              for i in range(count)]
    return lattice, arrays


def write_fields(path: str | os.PathLike | BinaryIO, fields: Sequence[SpectralField]) -> None:
    if not fields:
        raise ValueError("no fields to write")
    lattice = fields[0].lattice
    payload = encode(lattice, [f.coeffs for f in fields])
    if hasattr(path, "write"):
        path.write(payload)
    else:
        with open(path, "wb") as fh:
            fh.write(payload)


def read_fields(path: str | os.PathLike | BinaryIO) -> list[SpectralField]:
    if hasattr(path, "read"):
        data = path.read()
    else:
        with open(path, "rb") as fh:
            data = fh.read()
    lattice, arrays = decode(data)
    # complex64 rounding can break exact symmetry by one ulp; re-symmetrize
    return [SpectralField(lattice, _symmetrize(a)) for a in arrays]


def _symmetrize(a: np.ndarray) -> np.ndarray:
    a = a.astype(complex)
    return 0.5 * (a + np.conj(a[::-1, ::-1]))
