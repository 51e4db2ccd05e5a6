"""Image output and similarity metrics for decoded latents.

PNG writing is done directly with zlib so the bridge carries no imaging
dependency; metrics are plain structural similarity and peak SNR over
float images.
"""

from __future__ import annotations

import math
import struct
import zlib
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_WINDOW_SIDE = 11
_WINDOW_SIGMA = 1.5
_K1 = 0.01
_K2 = 0.03


def _gaussian_window() -> np.ndarray:
    offsets = np.arange(_WINDOW_SIDE) - (_WINDOW_SIDE - 1) / 2.0
    g = np.exp(-(offsets**2) / (2.0 * _WINDOW_SIGMA**2))
    g /= g.sum()
    return np.outer(g, g)


_WIN = _gaussian_window()


def _local_mean(plane: np.ndarray) -> np.ndarray:
    tiles = sliding_window_view(plane, (_WINDOW_SIDE, _WINDOW_SIDE))
    return np.einsum("ijkl,kl->ij", tiles, _WIN)


def _ssim_plane(a: np.ndarray, b: np.ndarray, dynamic_range: float) -> float:
    c1 = (_K1 * dynamic_range) ** 2
    c2 = (_K2 * dynamic_range) ** 2
    mu_a = _local_mean(a)
    mu_b = _local_mean(b)
    var_a = _local_mean(a * a) - mu_a**2
    var_b = _local_mean(b * b) - mu_b**2
    cov = _local_mean(a * b) - mu_a * mu_b
    score = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )
    return float(score.mean())


def ssim(a: np.ndarray, b: np.ndarray, dynamic_range: float = 1.0) -> float:
    """Mean structural similarity; accepts (H, W) or (H, W, C) floats."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        return _ssim_plane(a, b, dynamic_range)
    if a.ndim != 3:
        raise ValueError(f"expected 2-d or 3-d images, got shape {a.shape}")
    planes = [
        _ssim_plane(a[..., c], b[..., c], dynamic_range) for c in range(a.shape[-1])
    ]
    return float(np.mean(planes))


def psnr(a: np.ndarray, b: np.ndarray, dynamic_range: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(dynamic_range**2 / mse)


def _chunk(tag: bytes, data: bytes) -> bytes:
    body = tag + data
    return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body))


def write_png(path, image: np.ndarray) -> None:
    """Write a float (H, W, 3) image, clipped to [0, 1], as 8-bit RGB."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[-1] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {arr.shape}")
    u8 = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    height, width = u8.shape[:2]
    raw = b"".join(b"\x00" + row.tobytes() for row in u8)
    ihdr = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    blob = (
        b"\x89PNG\r\n\x1a\n"
        + _chunk(b"IHDR", ihdr)
        + _chunk(b"IDAT", zlib.compress(raw, 9))
        + _chunk(b"IEND", b"")
    )
    Path(path).write_bytes(blob)
