import io
import struct

import numpy as np
import pytest

import freqmod as fm
from freqmod import protocol
from freqmod.errors import TruncatedFrameError
from freqmod.latentio import encode_latent
from freqmod.modulation import WeightParams, modulate
from freqmod.protocol import (
    EXIT_OK,
    EXIT_TRUNCATED,
    STATUS_ERROR,
    STATUS_OK,
    encode_error_response,
    encode_modulate_request,
    encode_ok_response,
    parse_modulate_request,
    parse_response,
    read_frame,
    serve,
    write_frame,
)


def f32_field(rng, shape=(1, 16, 16)):
    return fm.RealField(
        rng.standard_normal(shape).astype(np.float32).astype(np.float64)
    )


def quantize_f32(x):
    return struct.unpack(">f", struct.pack(">f", x))[0]


def run_server(requests):
    """Feed framed request payloads to serve(); return (exit, responses)."""
    stream_in = io.BytesIO()
    for payload in requests:
        write_frame(stream_in, payload)
    stream_in.seek(0)
    stream_out = io.BytesIO()
    code = serve(stream_in, stream_out)
    stream_out.seek(0)
    responses = []
    while True:
        frame = read_frame(stream_out)
        if frame is None:
            break
        responses.append(frame)
    return code, responses


def test_frame_round_trip():
    buf = io.BytesIO()
    write_frame(buf, b"abc")
    write_frame(buf, b"")
    buf.seek(0)
    assert read_frame(buf) == b"abc"
    assert read_frame(buf) == b""
    assert read_frame(buf) is None


def test_request_round_trip_preserves_fields():
    rng = np.random.default_rng(0)
    z_ori, z_ref = f32_field(rng), f32_field(rng)
    payload = encode_modulate_request(z_ori, z_ref, 512, 1000, 0.2, 0.4, "linear")
    got_ori, got_ref, t, params = parse_modulate_request(payload)
    np.testing.assert_array_equal(got_ori.values, z_ori.values)
    np.testing.assert_array_equal(got_ref.values, z_ref.values)
    assert t == 512
    assert params.T == 1000
    assert params.kind == "linear"
    assert params.alpha == pytest.approx(0.2, abs=1e-7)
    assert params.sigma == pytest.approx(0.4, abs=1e-7)


def test_request_rejects_trailing_bytes():
    rng = np.random.default_rng(1)
    payload = encode_modulate_request(
        f32_field(rng), f32_field(rng), 10, 100, 0.1, 0.5, "gaussian"
    )
    with pytest.raises(ValueError, match="trailing"):
        parse_modulate_request(payload + b"\x00")


def test_serve_identity_when_inputs_match():
    rng = np.random.default_rng(2)
    field = f32_field(rng)
    request = encode_modulate_request(field, field, 500, 1000, 0.2, 0.4, "gaussian")
    code, responses = run_server([request])
    assert code == EXIT_OK
    status, result = parse_response(responses[0])
    assert status == STATUS_OK
    np.testing.assert_allclose(result.values, field.values, atol=1e-6)


def test_serve_matches_in_process_modulation():
    rng = np.random.default_rng(3)
    requests = []
    expected = []
    for i in range(100):
        z_ori, z_ref = f32_field(rng), f32_field(rng)
        t = int(rng.integers(0, 1001))
        alpha = float(rng.uniform(0.0, 1.0))
        sigma = float(rng.uniform(0.05, 1.0))
        kind = "gaussian" if i % 2 == 0 else "linear"
        requests.append(
            encode_modulate_request(z_ori, z_ref, t, 1000, alpha, sigma, kind)
        )
        params = WeightParams(
            alpha=quantize_f32(alpha), sigma=quantize_f32(sigma), kind=kind, T=1000
        )
        expected.append(modulate(z_ori, z_ref, t, params))
    code, responses = run_server(requests)
    assert code == EXIT_OK
    assert len(responses) == 100
    for frame, want in zip(responses, expected):
        status, result = parse_response(frame)
        assert status == STATUS_OK
        np.testing.assert_allclose(result.values, want.values, atol=1e-6)


def test_serve_answers_unknown_command_and_keeps_going():
    rng = np.random.default_rng(4)
    field = f32_field(rng)
    good = encode_modulate_request(field, field, 100, 1000, 0.2, 0.4, "gaussian")
    bad = struct.pack(">BIIffB", 0xFF, 0, 0, 0.0, 0.0, 0)
    code, responses = run_server([bad, good])
    assert code == EXIT_OK
    assert len(responses) == 2
    status, message = parse_response(responses[0])
    assert status == STATUS_ERROR
    assert "0xff" in message
    status, _ = parse_response(responses[1])
    assert status == STATUS_OK


def test_serve_answers_malformed_latents_and_keeps_going():
    rng = np.random.default_rng(5)
    field = f32_field(rng)
    header = struct.pack(">BIIffB", 0x01, 10, 100, 0.1, 0.5, 0)
    broken = header + b"not a latent container"
    good = encode_modulate_request(field, field, 10, 100, 0.1, 0.5, "gaussian")
    code, responses = run_server([broken, good])
    assert code == EXIT_OK
    assert len(responses) == 2
    assert parse_response(responses[0])[0] == STATUS_ERROR
    assert parse_response(responses[1])[0] == STATUS_OK


def test_serve_clean_eof_returns_zero():
    code, responses = run_server([])
    assert code == EXIT_OK
    assert responses == []


def test_serve_mid_frame_eof_returns_truncated_code():
    stream_in = io.BytesIO(struct.pack(">I", 100) + b"only ten b")
    code = serve(stream_in, io.BytesIO())
    assert code == EXIT_TRUNCATED


def test_serve_partial_header_returns_truncated_code():
    stream_in = io.BytesIO(b"\x00\x00")
    code = serve(stream_in, io.BytesIO())
    assert code == EXIT_TRUNCATED


def test_oversized_frame_is_refused_but_drained(monkeypatch):
    monkeypatch.setattr(protocol, "MAX_FRAME_BYTES", 1024)
    rng = np.random.default_rng(6)
    field = f32_field(rng, (1, 8, 8))
    good = encode_modulate_request(field, field, 10, 100, 0.1, 0.5, "gaussian")
    assert len(good) < 1024
    code, responses = run_server([b"\x00" * 2000, good])
    assert code == EXIT_OK
    assert len(responses) == 2
    status, message = parse_response(responses[0])
    assert status == STATUS_ERROR
    assert "exceeds" in message
    assert parse_response(responses[1])[0] == STATUS_OK


def test_read_frame_raises_when_oversized_frame_truncates(monkeypatch):
    monkeypatch.setattr(protocol, "MAX_FRAME_BYTES", 64)
    stream = io.BytesIO(struct.pack(">I", 200) + b"\x00" * 50)
    with pytest.raises(TruncatedFrameError):
        read_frame(stream)


def test_parse_response_rejects_garbage():
    with pytest.raises(ValueError, match="empty"):
        parse_response(b"")
    with pytest.raises(ValueError, match="status"):
        parse_response(b"\x02")
    rng = np.random.default_rng(7)
    ok = encode_ok_response(f32_field(rng, (1, 4, 4)))
    with pytest.raises(ValueError, match="trailing"):
        parse_response(ok + b"\x00")


def test_error_response_round_trip():
    status, message = parse_response(encode_error_response("went sideways"))
    assert status == STATUS_ERROR
    assert message == "went sideways"
