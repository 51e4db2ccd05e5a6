"""Client side of the frame stream the modulator process speaks.

Every message is one frame: a 4-byte big-endian payload length followed
by the payload. A request payload is

    cmd u8 (0x01) | t u32 | horizon u32 | alpha f32 | sigma f32 | kind u8

packed big-endian, followed by two latent containers (the reference
trajectory state, then the state being modulated). A response payload is
a status byte: 0x00 followed by one latent on success, 0x01 followed by
a UTF-8 message on failure.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .errors import WireError
from .latentfile import encode_latent, parse_latent

CMD_MODULATE = 0x01
STATUS_OK = 0x00
STATUS_ERROR = 0x01
KIND_CODES = {"gaussian": 0, "linear": 1}

_LENGTH = struct.Struct(">I")
_REQUEST_HEADER = struct.Struct(">BIIffB")

MAX_FRAME_BYTES = 1 << 28


def write_frame(stream: BinaryIO, payload: bytes) -> None:
    stream.write(_LENGTH.pack(len(payload)))
    stream.write(payload)


def read_frame(stream: BinaryIO) -> bytes:
    """Read one length-prefixed frame; raises WireError on truncation."""
    prefix = stream.read(_LENGTH.size)
    if len(prefix) == 0:
        raise WireError("stream closed before a frame arrived")
    if len(prefix) < _LENGTH.size:
        raise WireError("stream truncated inside a frame length prefix")
    (length,) = _LENGTH.unpack(prefix)
    if length > MAX_FRAME_BYTES:
        raise WireError(f"frame of {length} bytes exceeds limit {MAX_FRAME_BYTES}")
    payload = stream.read(length)
    if len(payload) < length:
        raise WireError(
            f"stream truncated inside a frame: need {length} bytes, "
            f"have {len(payload)}"
        )
    return payload


def build_request(
    z_ori: np.ndarray,
    z_ref: np.ndarray,
    t: int,
    horizon: int,
    alpha: float,
    sigma: float,
    kind: str,
) -> bytes:
    if kind not in KIND_CODES:
        raise WireError(f"unknown weighting kind {kind!r}")
    header = _REQUEST_HEADER.pack(
        CMD_MODULATE, t, horizon, alpha, sigma, KIND_CODES[kind]
    )
    return header + encode_latent(z_ori) + encode_latent(z_ref)


def parse_response(payload: bytes) -> np.ndarray:
    """Extract the modulated latent, or raise with the server's message."""
    if len(payload) < 1:
        raise WireError("empty response payload")
    status = payload[0]
    if status == STATUS_ERROR:
        raise WireError(
            "modulator refused request: " + payload[1:].decode("utf-8", "replace")
        )
    if status != STATUS_OK:
        raise WireError(f"unknown response status 0x{status:02x}")
    values, end = parse_latent(payload, 1)
    if end != len(payload):
        raise WireError(f"{len(payload) - end} trailing bytes in response")
    return values
