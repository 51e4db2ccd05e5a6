"""Reader/writer for the modulator's latent container format.

The format is a small binary envelope around a float32 tensor:

    offset 0   magic          4 bytes  b"FMML"
    offset 4   version        u32 LE   1
    offset 8   element type   u32 LE   0 = float32
    offset 12  ndim           u32 LE   always 3
    offset 16  dims           3 x u32  channels, height, width
    offset 28  payload        C*H*W little-endian float32, row-major

This module is written against the published byte layout only; it shares
no code with the modulator's own implementation, which keeps the two
sides honest about what the bytes mean.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import LatentFileError

MAGIC = b"FMML"
FORMAT_VERSION = 1
ELEM_F32 = 0

_HEADER = struct.Struct("<4sIIIIII")
HEADER_SIZE = _HEADER.size


def encode_latent(values: np.ndarray) -> bytes:
    """Serialize a (channels, height, width) array, narrowing to float32."""
    arr = np.asarray(values)
    if arr.ndim != 3:
        raise LatentFileError(f"latent must be 3-d, got shape {arr.shape}")
    with np.errstate(over="ignore"):
        payload = np.ascontiguousarray(arr, dtype="<f4")
    if not np.isfinite(payload).all():
        raise LatentFileError("latent values do not fit in float32")
    c, h, w = arr.shape
    return _HEADER.pack(MAGIC, FORMAT_VERSION, ELEM_F32, 3, c, h, w) + payload.tobytes()


def parse_latent(buffer: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one latent starting at offset; returns (array, next offset).

    The returned array is float32 so that a decode/encode round trip
    reproduces the input bytes exactly.
    """
    if len(buffer) - offset < HEADER_SIZE:
        raise LatentFileError(
            f"truncated header at offset {offset}: need {HEADER_SIZE} bytes, "
            f"have {len(buffer) - offset}"
        )
    magic, version, elem, ndim, c, h, w = _HEADER.unpack_from(buffer, offset)
    if magic != MAGIC:
        raise LatentFileError(f"bad magic {magic!r} at offset {offset}")
    if version != FORMAT_VERSION:
        raise LatentFileError(f"unsupported version {version}")
    if elem != ELEM_F32:
        raise LatentFileError(f"unsupported element type {elem}")
    if ndim != 3:
        raise LatentFileError(f"unsupported ndim {ndim}")
    count = c * h * w
    start = offset + HEADER_SIZE
    end = start + count * 4
    if len(buffer) < end:
        raise LatentFileError(
            f"truncated payload at offset {start}: need {count * 4} bytes, "
            f"have {len(buffer) - start}"
        )
    values = np.frombuffer(buffer, dtype="<f4", count=count, offset=start)
    return values.reshape(c, h, w).copy(), end


def decode_latent(buffer: bytes) -> np.ndarray:
    """Decode a buffer holding exactly one latent."""
    values, end = parse_latent(buffer, 0)
    if end != len(buffer):
        raise LatentFileError(f"{len(buffer) - end} trailing bytes after payload")
    return values


def read_latent(path) -> np.ndarray:
    return decode_latent(Path(path).read_bytes())


def write_latent(values: np.ndarray, path) -> bytes:
    data = encode_latent(values)
    Path(path).write_bytes(data)
    return data
