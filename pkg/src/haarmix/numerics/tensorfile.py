"""Binary tensor files and the PGM image reader.

Tensor file layout: magic bytes ``HTNS``, then the rank as a 32-bit
little-endian unsigned integer, then each dimension as a 32-bit little-endian
unsigned integer, then the payload as 32-bit little-endian IEEE-754 floats in
row-major order. Write-then-read round-trips dims and float32 data bit
exactly. Malformed files are rejected with the byte offset of the defect.
"""

from __future__ import annotations

import math
import struct

import numpy as np

from .tensor import Tensor

MAGIC = b"HTNS"
MAX_RANK = 32
MAX_ELEMENTS = 1 << 31


class TensorFileError(ValueError):
    """Malformed tensor file; the message names the byte offset."""


def write_tensor(path, tensor: Tensor) -> None:
    """Write in the HTNS layout. Float64 payloads are stored as float32."""
    dims = tensor.dims
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(dims)))
        for d in dims:
            fh.write(struct.pack("<I", d))
        fh.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())


def read_tensor(path) -> Tensor:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise TensorFileError(f"bad magic at offset 0: {raw[:4]!r}")
    if len(raw) < 8:
        raise TensorFileError(f"truncated header at offset {len(raw)}")
    (rank,) = struct.unpack_from("<I", raw, 4)
    if rank == 0 or rank > MAX_RANK:
        raise TensorFileError(f"rank overflow at offset 4: rank={rank}")
    header_end = 8 + 4 * rank
    if len(raw) < header_end:
        raise TensorFileError(f"truncated dims at offset {len(raw)}")
    dims = struct.unpack_from(f"<{rank}I", raw, 8)
    for i, d in enumerate(dims):
        if d == 0:
            raise TensorFileError(f"zero dimension at offset {8 + 4 * i}")
    count = math.prod(dims)
    if count > MAX_ELEMENTS:
        raise TensorFileError(f"dims overflow at offset 8: {count} elements")
    expected = header_end + 4 * count
    if len(raw) < expected:
        raise TensorFileError(
            f"truncated payload at offset {len(raw)}: expected {expected} bytes"
        )
    if len(raw) > expected:
        raise TensorFileError(f"unexpected trailing bytes at offset {expected}")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=header_end)
    return Tensor(data.reshape(dims).copy())


def read_pgm(path) -> Tensor:
    """Read an 8-bit binary PGM (P5) into a (h, w, 1) tensor scaled to [0, 1]."""
    with open(path, "rb") as fh:
        raw = fh.read()

    pos = 0

    def token() -> bytes:
        nonlocal pos
        while pos < len(raw):
            ch = raw[pos : pos + 1]
            if ch == b"#":
                while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise TensorFileError(f"truncated PGM header at offset {start}")
        return raw[start:pos]

    if token() != b"P5":
        raise TensorFileError("bad magic at offset 0: not a P5 PGM")
    try:
        width, height, maxval = int(token()), int(token()), int(token())
    except ValueError as e:
        raise TensorFileError(f"malformed PGM header near offset {pos}") from e
    if maxval <= 0 or maxval > 255:
        raise TensorFileError(f"unsupported PGM maxval {maxval} (8-bit only)")
    pos += 1  # single whitespace byte after maxval
    expected = pos + width * height
    if len(raw) < expected:
        raise TensorFileError(
            f"truncated PGM payload at offset {len(raw)}: expected {expected} bytes"
        )
    pixels = np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=pos)
    data = pixels.reshape(height, width, 1).astype(np.float32) / float(maxval)
    return Tensor(data)
