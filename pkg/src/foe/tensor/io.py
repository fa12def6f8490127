"""FOT1 binary tensor format.

Layout (all little-endian)::

    b"FOT1" | u8 dtype code | u8 rank | 6 zero bytes | rank x u64 extents | payload

dtype codes: 1=f32, 2=f64, 3=c64, 4=c128.  Complex payloads interleave
(re, im) pairs, which is numpy's native memory layout for complex arrays.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .core import Tensor

MAGIC = b"FOT1"
HEADER = struct.Struct("<4sBB6s")
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<c8"), 4: np.dtype("<c16")}
CODES = {np.dtype(v).newbyteorder("=").type: k for k, v in DTYPES.items()}


class FotError(ValueError):
    """Base class; ``code`` distinguishes failure kinds."""

    code = 1


class BadMagicError(FotError):
    code = 2


class BadDtypeError(FotError):
    code = 3


class TruncatedError(FotError):
    code = 4


def encode(arr) -> bytes:
    arr = np.asarray(arr.data if isinstance(arr, Tensor) else arr)
    code = CODES.get(arr.dtype.type)
    if code is None:
        raise BadDtypeError(f"unsupported dtype {arr.dtype}")
    if arr.ndim > 255:
        raise FotError("rank exceeds 255")
    head = HEADER.pack(MAGIC, code, arr.ndim, bytes(6))
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()
    return head + dims + payload


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < HEADER.size:
        raise TruncatedError("header truncated")
    magic, code, rank, reserved = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if code not in DTYPES:
        raise BadDtypeError(f"unknown dtype code {code}")
    off = HEADER.size
    if len(buf) < off + 8 * rank:
        raise TruncatedError("extent table truncated")
    shape = struct.unpack_from(f"<{rank}Q", buf, off)
    off += 8 * rank
    dtype = DTYPES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(buf) - off < nbytes:
        raise TruncatedError(f"payload has {len(buf) - off} bytes, expected {nbytes}")
    if len(buf) - off > nbytes:
        raise FotError("trailing bytes after payload")
    data = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=off)
    return data.reshape(shape).astype(dtype.newbyteorder("="))


def write(path: str | os.PathLike, arr) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(arr))


def read(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read())


def tensor_io(path, tensor=None, direction: str = "read"):
    """Read or write a FOT1 file; returns the array on read."""
    if direction == "write":
        if tensor is None:
            raise ValueError("write needs a tensor")
        write(path, tensor)
        return None
    if direction == "read":
        return read(path)
    raise ValueError(f"unknown direction {direction!r}")
