"""Tensor container format.

Layout (little-endian)::

    b"MMTENSR1" | u32 rank | rank x u64 extents | float32 payload (row-major)
"""
import struct

import numpy as np

from ..errors import FormatError

MAGIC = b"MMTENSR1"


def tensor_to_bytes(array) -> bytes:
    # asarray, not ascontiguousarray: the latter promotes rank 0 to rank 1
    arr = np.asarray(getattr(array, "data", array), dtype="<f4", order="C")
    head = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes(order="C")


def tensor_from_bytes(buf: bytes, offset: int = 0):
    """Decode one container starting at ``offset``; returns (array, bytes_consumed)."""
    if buf[offset:offset + 8] != MAGIC:
        raise FormatError("bad tensor magic; expected MMTENSR1")
    try:
        (rank,) = struct.unpack_from("<I", buf, offset + 8)
        shape = struct.unpack_from(f"<{rank}Q", buf, offset + 12)
    except struct.error as exc:
        raise FormatError("truncated tensor header") from exc
    start = offset + 12 + 8 * rank
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    end = start + 4 * count
    if end > len(buf):
        raise FormatError(f"truncated payload: need {end - start} bytes")
    arr = np.frombuffer(buf, dtype="<f4", count=count, offset=start).reshape(shape)
    return arr.astype(np.float32), end - offset


def write_tensor(path, array):
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(array))


def read_tensor(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    arr, used = tensor_from_bytes(buf)
    if used != len(buf):
        raise FormatError(f"{len(buf) - used} trailing bytes after tensor payload")
    return arr
