"""Modulator clients: the subprocess bridge and a pass-through stub.

The real modulator runs as a child process speaking length-prefixed
frames on stdin/stdout. The stub returns the state unchanged and exists
so the rest of the pipeline can be exercised without the child; wiring
it in must leave generation bit-identical to running with no modulator
at all.
"""

from __future__ import annotations

import subprocess
import sys
from typing import Sequence

import numpy as np

from .errors import ModulatorError, WireError
from .wire import build_request, parse_response, read_frame, write_frame

DEFAULT_COMMAND = (sys.executable, "-m", "freqmod", "serve-modulator")


class IdentityModulator:
    """Stub that returns the refined-branch state untouched."""

    def modulate(self, z_ori, z_ref, t, horizon, alpha, sigma, kind):
        return np.asarray(z_ref)

    def handshake(self, channels: int, height: int, width: int, horizon: int) -> None:
        pass

    def close(self) -> int:
        return 0

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


class SubprocessModulator:
    """Talks to a modulator child process over pipes.

    handshake() must be called (and succeed) before the modulator is used
    inside a sampling loop; it proves the child actually speaks the
    protocol before any expensive work starts.
    """

    def __init__(self, command: Sequence[str] = DEFAULT_COMMAND):
        self.command = tuple(command)
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
            )
        except OSError as exc:
            raise ModulatorError(
                f"could not start modulator {self.command!r}: {exc}"
            ) from exc

    def modulate(
        self,
        z_ori: np.ndarray,
        z_ref: np.ndarray,
        t: int,
        horizon: int,
        alpha: float,
        sigma: float,
        kind: str,
    ) -> np.ndarray:
        """One request/response exchange; returns the modulated state."""
        if self._proc.poll() is not None:
            raise ModulatorError(
                f"modulator exited with code {self._proc.returncode} "
                "before the request"
            )
        request = build_request(z_ori, z_ref, t, horizon, alpha, sigma, kind)
        try:
            write_frame(self._proc.stdin, request)
            self._proc.stdin.flush()
            payload = read_frame(self._proc.stdout)
        except (OSError, WireError) as exc:
            code = self._proc.poll()
            raise ModulatorError(
                f"modulator stream failed (exit code {code}): {exc}"
            ) from exc
        try:
            return parse_response(payload)
        except WireError as exc:
            raise ModulatorError(str(exc)) from exc

    def handshake(self, channels: int, height: int, width: int, horizon: int) -> None:
        """Round-trip a zero latent to verify the child is responsive."""
        zeros = np.zeros((channels, height, width), dtype=np.float32)
        try:
            out = self.modulate(zeros, zeros, horizon, horizon, 0.2, 0.4, "gaussian")
        except ModulatorError as exc:
            raise ModulatorError(f"modulator handshake failed: {exc}") from exc
        if out.shape != zeros.shape:
            raise ModulatorError(
                f"modulator handshake returned shape {out.shape}, "
                f"expected {zeros.shape}"
            )

    def close(self) -> int:
        """Close the request stream and reap the child; returns its exit code."""
        if self._proc.stdin and not self._proc.stdin.closed:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
        code = self._proc.wait(timeout=30)
        if self._proc.stdout:
            self._proc.stdout.close()
        return code

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
