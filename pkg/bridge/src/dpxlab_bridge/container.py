"""Reader/writer for the audit toolkit's tensor container format.

This is a second, independent implementation of the wire format, kept free of
any import of the toolkit itself so that interoperability is a property of the
bytes and not of shared code:

    bytes 0..3    magic ``DPXT``
    byte  4       format version (``0x01``)
    byte  5       dtype code (``0x01`` float32, ``0x02`` float64)
    byte  6       rank
    bytes 7..13   reserved, must be zero
    then rank unsigned 64-bit little-endian dims
    then the payload, row-major, little-endian

Non-finite payloads are refused in both directions.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import CorruptError, FormatError, UnsupportedError

_MAGIC = b"DPXT"
_VERSION = 0x01
_HEADER = 14

_CODE_OF = {np.dtype("<f4"): 0x01, np.dtype("<f8"): 0x02}
_DTYPE_OF = {0x01: np.dtype("<f4"), 0x02: np.dtype("<f8")}


def tensor_bytes(arr: np.ndarray) -> bytes:
    # asarray, not ascontiguousarray: the latter silently promotes rank-0 to
    # rank-1, which would change the header.  tobytes() handles layout.
    a = np.asarray(arr)
    if a.dtype not in _CODE_OF:
        raise UnsupportedError(f"dtype {a.dtype} not supported; use float32 or float64")
    if not np.isfinite(a).all():
        raise CorruptError("refusing to write non-finite payload")
    parts = [_MAGIC, bytes([_VERSION, _CODE_OF[a.dtype], a.ndim]), b"\x00" * 7]
    for d in a.shape:
        parts.append(struct.pack("<Q", d))
    parts.append(a.tobytes(order="C"))
    return b"".join(parts)


def parse_tensor(blob: bytes) -> np.ndarray:
    if len(blob) < _HEADER:
        raise CorruptError(f"container truncated: {len(blob)} bytes is shorter than the header")
    if blob[:4] != _MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}")
    version, code, rank = blob[4], blob[5], blob[6]
    if version != _VERSION:
        raise UnsupportedError(f"container version {version} not supported")
    if code not in _DTYPE_OF:
        raise UnsupportedError(f"dtype code {code} not supported")
    if blob[7:_HEADER] != b"\x00" * 7:
        raise CorruptError("reserved header bytes are not zero")
    dims_end = _HEADER + 8 * rank
    if len(blob) < dims_end:
        raise CorruptError("container truncated inside the dims block")
    shape = struct.unpack(f"<{rank}Q", blob[_HEADER:dims_end]) if rank else ()
    dtype = _DTYPE_OF[code]
    expected = int(np.prod(shape, dtype=np.uint64)) * dtype.itemsize
    if len(blob) - dims_end != expected:
        raise CorruptError(
            f"payload is {len(blob) - dims_end} bytes, shape {shape} needs {expected}"
        )
    out = np.frombuffer(blob, dtype=dtype, offset=dims_end).reshape(shape).copy()
    if not np.isfinite(out).all():
        raise CorruptError("refusing to read non-finite payload")
    return out


def write_tensor(arr: np.ndarray, path: str | os.PathLike) -> None:
    """Atomic write: the file either has the old contents or the new ones."""
    blob = tensor_bytes(arr)
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(blob)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return parse_tensor(fh.read())
