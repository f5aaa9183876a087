"""Binary checkpoint format for :class:`TinyNet` parameters.

All integers little-endian::

    magic       8 bytes   b"SALTCKP1"
    version     u32       1
    tree hash   32 bytes  SHA-256 of the serialized label tree
    count       u32       number of tensors
    per tensor:
      name_len  u16, name (UTF-8)
      dtype     u8        0 = f64, 1 = f32
      ndim      u8, dims  ndim x u32
      data      C-order values
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"SALTCKP1"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}

__all__ = ["CheckpointError", "encode_checkpoint", "decode_checkpoint", "save_checkpoint", "load_checkpoint"]


class CheckpointError(ValueError):
    pass


def encode_checkpoint(params: dict, tree_digest: bytes) -> bytes:
    if len(tree_digest) != 32:
        raise CheckpointError("tree digest must be 32 bytes")
    out = [MAGIC, struct.pack("<I", VERSION), tree_digest, struct.pack("<I", len(params))]
    for name in sorted(params):
        arr = np.asarray(params[name])
        code = 1 if arr.dtype == np.float32 else 0
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(out)


def decode_checkpoint(buf: bytes) -> tuple[dict, bytes]:
    """Returns ``(params, tree_digest)``."""
    if buf[:8] != MAGIC:
        raise CheckpointError(f"bad magic {buf[:8]!r}")
    try:
        (version,) = struct.unpack_from("<I", buf, 8)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        digest = buf[12:44]
        (count,) = struct.unpack_from("<I", buf, 44)
        pos = 48
        params = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            code, ndim = struct.unpack_from("<BB", buf, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            dt = _DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if pos + nbytes > len(buf):
                raise CheckpointError(f"tensor {name!r} is truncated")
            params[name] = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(shape).copy()
            pos += nbytes
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from None
    if pos != len(buf):
        raise CheckpointError(f"{len(buf) - pos} trailing bytes")
    return params, digest


def save_checkpoint(path, params: dict, tree_digest: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(params, tree_digest))


def load_checkpoint(path) -> tuple[dict, bytes]:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
