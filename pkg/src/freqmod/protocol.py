"""Length-framed modulation protocol over binary streams.

Every frame is a 4-byte big-endian payload length followed by the payload.
A MODULATE request payload is:

    offset 0   command      u8   0x01
    offset 1   timestep t   u32  big-endian
    offset 5   horizon  T   u32  big-endian
    offset 9   alpha        f32  big-endian
    offset 13  sigma        f32  big-endian
    offset 17  kind         u8   0 = gaussian, 1 = linear
    offset 18  original latent, then refined latent (container format)

A response payload is a status byte, 0x00 followed by the modulated latent
or 0x01 followed by a UTF-8 error message. The server answers malformed
requests with error responses and keeps serving; it exits cleanly on
end-of-stream at a frame boundary and with a nonzero code when the stream
dies mid-frame.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

from .errors import TruncatedFrameError
from .latentio import encode_latent, parse_latent
from .modulation import WeightParams, modulate
from .spectral import RealField

CMD_MODULATE = 0x01
STATUS_OK = 0x00
STATUS_ERROR = 0x01
KIND_CODES = {"gaussian": 0, "linear": 1}
_KIND_NAMES = {code: name for name, code in KIND_CODES.items()}

_FRAME_HEADER = struct.Struct(">I")
_REQUEST_HEADER = struct.Struct(">BIIffB")

# Refusing frames beyond this size keeps a corrupt length prefix from
# stalling the server on a gigabyte read; the payload is still drained so
# the stream stays framed.
MAX_FRAME_BYTES = 1 << 28

EXIT_OK = 0
EXIT_TRUNCATED = 3


class OversizedFrame(Exception):
    """Internal: frame exceeded MAX_FRAME_BYTES but was drained."""

    def __init__(self, length: int):
        super().__init__(f"frame of {length} bytes exceeds {MAX_FRAME_BYTES}")


def _read_exact(stream: BinaryIO, count: int, at_boundary: bool) -> bytes | None:
    """Read exactly count bytes; None on clean EOF at a frame boundary."""
    parts = []
    remaining = count
    while remaining > 0:
        chunk = stream.read(remaining)
        if not chunk:
            if at_boundary and remaining == count:
                return None
            raise TruncatedFrameError(
                f"stream ended {remaining} bytes short of a "
                f"{count}-byte read"
            )
        parts.append(chunk)
        remaining -= len(chunk)
    return b"".join(parts)


def read_frame(stream: BinaryIO) -> bytes | None:
    """Next frame payload, or None when the stream ends between frames."""
    header = _read_exact(stream, _FRAME_HEADER.size, at_boundary=True)
    if header is None:
        return None
    (length,) = _FRAME_HEADER.unpack(header)
    if length > MAX_FRAME_BYTES:
        # Drain without buffering so the next frame stays aligned.
        remaining = length
        while remaining > 0:
            chunk = stream.read(min(remaining, 1 << 20))
            if not chunk:
                raise TruncatedFrameError(
                    f"stream ended {remaining} bytes into an oversized frame"
                )
            remaining -= len(chunk)
        raise OversizedFrame(length)
    payload = _read_exact(stream, length, at_boundary=False)
    return payload if payload is not None else b""


def write_frame(stream: BinaryIO, payload: bytes):
    stream.write(_FRAME_HEADER.pack(len(payload)))
    stream.write(payload)


def encode_modulate_request(
    z_ori: RealField,
    z_ref: RealField,
    t: int,
    horizon: int,
    alpha: float,
    sigma: float,
    kind: str,
) -> bytes:
    """Client-side request builder (mirrors the server's parser)."""
    header = _REQUEST_HEADER.pack(
        CMD_MODULATE, t, horizon, alpha, sigma, KIND_CODES[kind]
    )
    return header + encode_latent(z_ori) + encode_latent(z_ref)


def parse_modulate_request(
    payload: bytes,
) -> tuple[RealField, RealField, int, WeightParams]:
    """Split a request payload into latents, timestep, and weight params."""
    if len(payload) < _REQUEST_HEADER.size:
        raise ValueError(
            f"request payload of {len(payload)} bytes is shorter than the "
            f"{_REQUEST_HEADER.size}-byte header"
        )
    cmd, t, horizon, alpha, sigma, kind_code = _REQUEST_HEADER.unpack_from(
        payload, 0
    )
    if cmd != CMD_MODULATE:
        raise ValueError(f"unknown command 0x{cmd:02x}")
    if kind_code not in _KIND_NAMES:
        raise ValueError(f"unknown weighting kind code {kind_code}")
    z_ori, offset = parse_latent(payload, _REQUEST_HEADER.size)
    z_ref, end = parse_latent(payload, offset)
    if end != len(payload):
        raise ValueError(f"{len(payload) - end} trailing bytes after latents")
    params = WeightParams(
        alpha=float(alpha),
        sigma=float(sigma),
        kind=_KIND_NAMES[kind_code],
        T=horizon,
    )
    return z_ori, z_ref, t, params


def encode_ok_response(field: RealField) -> bytes:
    return bytes([STATUS_OK]) + encode_latent(field)


def encode_error_response(message: str) -> bytes:
    return bytes([STATUS_ERROR]) + message.encode("utf-8")


def parse_response(payload: bytes) -> tuple[int, RealField | str]:
    """Returns (status, latent) on success or (status, message) on error."""
    if not payload:
        raise ValueError("empty response payload")
    status = payload[0]
    if status == STATUS_OK:
        field, end = parse_latent(payload, 1)
        if end != len(payload):
            raise ValueError(
                f"{len(payload) - end} trailing bytes after response latent"
            )
        return status, field
    if status == STATUS_ERROR:
        return status, payload[1:].decode("utf-8", errors="replace")
    raise ValueError(f"unknown response status 0x{status:02x}")


def serve(stream_in: BinaryIO, stream_out: BinaryIO) -> int:
    """Answer MODULATE requests until end-of-stream.

    Returns 0 on a clean shutdown and EXIT_TRUNCATED when the input stream
    dies in the middle of a frame. Request-level failures (bad command,
    malformed latents, invalid parameters) produce error responses and the
    loop keeps going.
    """
    while True:
        try:
            payload = read_frame(stream_in)
        except TruncatedFrameError:
            return EXIT_TRUNCATED
        except OversizedFrame as exc:
            write_frame(stream_out, encode_error_response(str(exc)))
            stream_out.flush()
            continue
        if payload is None:
            return EXIT_OK
        try:
            z_ori, z_ref, t, params = parse_modulate_request(payload)
            result = modulate(z_ori, z_ref, t, params)
            response = encode_ok_response(result)
        except Exception as exc:  # noqa: BLE001 - the loop must survive
            response = encode_error_response(f"{type(exc).__name__}: {exc}")
        write_frame(stream_out, response)
        stream_out.flush()
