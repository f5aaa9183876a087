"""SALTVOL: a minimal little-endian voxel grid container.

Layout::

    magic    8 bytes   b"SALTV001"
    dims     3 x u32   x, y, z
    spacing  3 x f32   mm
    dtype    1 byte    0 = u16 labels, 1 = f32 values
    payload  x*y*z values, x varies fastest

Arrays in this package are indexed ``[x, y, z]``, so the payload is the
Fortran-order flattening of the array.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"SALTV001"
_HEADER = struct.Struct("<8s3I3fB")
DTYPES = {0: np.dtype("<u2"), 1: np.dtype("<f4")}

__all__ = ["VolumeFormatError", "Volume", "read_volume", "write_volume", "encode_volume", "decode_volume"]


class VolumeFormatError(ValueError):
    pass


@dataclass
class Volume:
    data: np.ndarray
    spacing: tuple[float, float, float] = (1.5, 1.5, 1.5)

    @property
    def dtype_code(self) -> int:
        return 0 if np.issubdtype(self.data.dtype, np.integer) else 1


def encode_volume(data, spacing=(1.5, 1.5, 1.5), dtype_code: int | None = None) -> bytes:
    data = np.asarray(data)
    if data.ndim != 3:
        raise VolumeFormatError(f"expected a 3-D array, got shape {data.shape}")
    if dtype_code is None:
        dtype_code = 0 if np.issubdtype(data.dtype, np.integer) or data.dtype == bool else 1
    if dtype_code not in DTYPES:
        raise VolumeFormatError(f"unknown dtype code {dtype_code}")
    if dtype_code == 0:
        if data.size and (data.min() < 0 or data.max() > 0xFFFF):
            raise VolumeFormatError("label values must fit in 16 unsigned bits")
    payload = np.asarray(data, dtype=DTYPES[dtype_code]).tobytes(order="F")
    header = _HEADER.pack(MAGIC, *data.shape, *(float(s) for s in spacing), dtype_code)
    return header + payload


def decode_volume(buf: bytes) -> Volume:
    if len(buf) < _HEADER.size:
        raise VolumeFormatError("truncated header")
    magic, x, y, z, sx, sy, sz, code = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise VolumeFormatError(f"bad magic {magic!r}")
    if code not in DTYPES:
        raise VolumeFormatError(f"unknown dtype code {code}")
    dt = DTYPES[code]
    expected = x * y * z * dt.itemsize
    payload = buf[_HEADER.size:]
    if len(payload) != expected:
        raise VolumeFormatError(f"payload is {len(payload)} bytes, expected {expected}")
    data = np.frombuffer(payload, dtype=dt).reshape((x, y, z), order="F")
    return Volume(data.copy(), (sx, sy, sz))


def write_volume(path, data, spacing=(1.5, 1.5, 1.5), dtype_code: int | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_volume(data, spacing, dtype_code))


def read_volume(path) -> Volume:
    with open(path, "rb") as fh:
        return decode_volume(fh.read())
