"""Binary latent container: magic "FMML", version, f32 payload.

Layout (header fields little-endian):

    offset 0   magic          4 bytes  b"FMML"
    offset 4   version        u32      currently 1
    offset 8   element type   u32      0 = float32
    offset 12  ndim           u32      always 3
    offset 16  dims           3 x u32  channels, height, width
    offset 28  payload        C*H*W little-endian float32, row-major within
                              a channel, channels consecutive

The payload is bit-exact: write followed by read reproduces the same f32
bytes, which is what the stream protocol relies on.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from .errors import InvalidInputError, LatentFormatError
from .spectral import RealField

MAGIC = b"FMML"
FORMAT_VERSION = 1
ELEM_F32 = 0

_HEADER = struct.Struct("<4sIII")
_DIMS = struct.Struct("<III")
HEADER_SIZE = _HEADER.size + _DIMS.size

Source = Union[str, Path, BinaryIO]


def encode_latent(field: RealField) -> bytes:
    """Serialize a RealField, narrowing values to float32."""
    with np.errstate(over="ignore"):
        payload = np.ascontiguousarray(field.values, dtype="<f4")
    if not np.isfinite(payload).all():
        raise LatentFormatError(
            "field values overflow the 32-bit float range of the format"
        )
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, ELEM_F32, 3)
    dims = _DIMS.pack(field.channels, field.height, field.width)
    return header + dims + payload.tobytes()


def parse_latent(buffer: bytes, offset: int = 0) -> tuple[RealField, int]:
    """Decode one latent starting at offset; returns (field, next offset)."""
    if len(buffer) - offset < HEADER_SIZE:
        raise LatentFormatError(
            f"buffer truncated inside header at offset {offset}: need "
            f"{HEADER_SIZE} bytes, have {len(buffer) - offset}"
        )
    magic, version, elem, ndim = _HEADER.unpack_from(buffer, offset)
    if magic != MAGIC:
        raise LatentFormatError(
            f"bad magic {magic!r} at offset {offset} (expected {MAGIC!r})"
        )
    if version != FORMAT_VERSION:
        raise LatentFormatError(
            f"unsupported format version {version} at offset {offset + 4} "
            f"(reader supports {FORMAT_VERSION})"
        )
    if elem != ELEM_F32:
        raise LatentFormatError(
            f"unsupported element type {elem} at offset {offset + 8} "
            f"(only f32 = {ELEM_F32})"
        )
    if ndim != 3:
        raise LatentFormatError(
            f"unsupported ndim {ndim} at offset {offset + 12} (expected 3)"
        )
    channels, height, width = _DIMS.unpack_from(buffer, offset + _HEADER.size)
    count = channels * height * width
    start = offset + HEADER_SIZE
    end = start + count * 4
    if len(buffer) < end:
        raise LatentFormatError(
            f"payload truncated at offset {start}: need {count * 4} bytes, "
            f"have {len(buffer) - start}"
        )
    values = np.frombuffer(buffer, dtype="<f4", count=count, offset=start)
    try:
        field = RealField(
            values.reshape(channels, height, width).astype(np.float64)
        )
    except InvalidInputError as exc:
        raise LatentFormatError(f"invalid latent content: {exc}") from exc
    return field, end


def decode_latent(buffer: bytes) -> RealField:
    """Decode a buffer holding exactly one latent."""
    field, end = parse_latent(buffer, 0)
    if end != len(buffer):
        raise LatentFormatError(
            f"{len(buffer) - end} trailing bytes after payload at offset {end}"
        )
    return field


def read_latent(source: Source) -> RealField:
    if hasattr(source, "read"):
        return decode_latent(source.read())
    return decode_latent(Path(source).read_bytes())


def write_latent(field: RealField, destination: Source | None = None) -> bytes:
    """Encode a field; optionally write it to a path or binary stream."""
    data = encode_latent(field)
    if destination is not None:
        if hasattr(destination, "write"):
            destination.write(data)
        else:
            Path(destination).write_bytes(data)
    return data
