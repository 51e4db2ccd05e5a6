"""Field similarity metrics: PSNR, SSIM, MS-SSIM, spectral band distances.

SSIM uses the canonical parameters (11x11 Gaussian window, sigma 1.5,
K1=0.01, K2=0.03), averaged over valid window positions and channels.
MS-SSIM uses the standard 5 scale weights renormalized to sum exactly 1,
with 2x average pooling between scales; it is defined only when both sides
allow 11-pixel windows at the coarsest scale (sides >= 176).

Band distances compare two fields inside and outside a radial frequency
cutoff: the low band tracks global composition agreement, the high band
tracks fine detail, which is the split the rest of the package reasons in.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import FieldTooSmallError, InvalidInputError
from .spectral import RealField, forward_transform, radial_distance_map

PSNR_CAP_DB = 100.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# Raw weights sum to 1.0001; renormalized below so the exponents sum to 1.
_MS_SSIM_RAW_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MS_SSIM_WEIGHTS = tuple(
    w / sum(_MS_SSIM_RAW_WEIGHTS) for w in _MS_SSIM_RAW_WEIGHTS
)
MS_SSIM_SCALES = 5
MS_SSIM_MIN_SIDE = SSIM_WINDOW * 2 ** (MS_SSIM_SCALES - 1)

DEFAULT_BAND_CUTOFF = 0.15


@dataclass(frozen=True)
class MetricReport:
    """One comparison of two fields; ms_ssim is None when sides < 176."""

    psnr_db: float
    ssim: float
    ms_ssim: float | None
    band_low: float
    band_high: float


def _check_shapes(a: RealField, b: RealField):
    if a.shape != b.shape:
        raise InvalidInputError(f"field shapes differ: {a.shape} vs {b.shape}")


def psnr(a: RealField, b: RealField, dynamic_range: float) -> float:
    """10 log10(range^2 / MSE); identical inputs report the 100 dB cap."""
    _check_shapes(a, b)
    if dynamic_range <= 0.0:
        raise InvalidInputError(
            f"dynamic_range must be positive, got {dynamic_range}"
        )
    mse = float(np.mean((a.values - b.values) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(dynamic_range**2 / mse))


@lru_cache(maxsize=1)
def _ssim_kernel() -> np.ndarray:
    offsets = np.arange(SSIM_WINDOW, dtype=np.float64) - (SSIM_WINDOW - 1) / 2
    g = np.exp(-(offsets**2) / (2.0 * SSIM_SIGMA**2))
    g /= g.sum()
    g.setflags(write=False)
    return g


def _window_mean(x: np.ndarray) -> np.ndarray:
    """Separable Gaussian-weighted mean over valid 11x11 windows."""
    g = _ssim_kernel()
    x = sliding_window_view(x, SSIM_WINDOW, axis=-1) @ g
    x = np.moveaxis(sliding_window_view(x, SSIM_WINDOW, axis=-2) @ g, -1, -2)
    return x


def _ssim_components(
    a: np.ndarray, b: np.ndarray, dynamic_range: float
) -> tuple[np.ndarray, np.ndarray]:
    """Per-window (ssim, contrast-structure) maps."""
    c1 = (SSIM_K1 * dynamic_range) ** 2
    c2 = (SSIM_K2 * dynamic_range) ** 2
    mu_a = _window_mean(a)
    mu_b = _window_mean(b)
    var_a = _window_mean(a * a) - mu_a * mu_a
    var_b = _window_mean(b * b) - mu_b * mu_b
    cov = _window_mean(a * b) - mu_a * mu_b
    luminance = (2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    cs = (2.0 * cov + c2) / (var_a + var_b + c2)
    return luminance * cs, cs


def ssim(a: RealField, b: RealField, dynamic_range: float) -> float:
    _check_shapes(a, b)
    if dynamic_range <= 0.0:
        raise InvalidInputError(
            f"dynamic_range must be positive, got {dynamic_range}"
        )
    if a.height < SSIM_WINDOW or a.width < SSIM_WINDOW:
        raise FieldTooSmallError(
            f"ssim needs sides >= {SSIM_WINDOW}, got {a.height}x{a.width}"
        )
    ssim_map, _ = _ssim_components(a.values, b.values, dynamic_range)
    return float(ssim_map.mean())


def _pool2(x: np.ndarray) -> np.ndarray:
    """2x2 average pooling, truncating an odd trailing row/column."""
    c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    return x[:, : h2 * 2, : w2 * 2].reshape(c, h2, 2, w2, 2).mean(axis=(2, 4))


def ms_ssim(a: RealField, b: RealField, dynamic_range: float) -> float:
    """Five-scale SSIM product; negative scale terms are clamped to zero."""
    _check_shapes(a, b)
    if dynamic_range <= 0.0:
        raise InvalidInputError(
            f"dynamic_range must be positive, got {dynamic_range}"
        )
    if a.height < MS_SSIM_MIN_SIDE or a.width < MS_SSIM_MIN_SIDE:
        raise FieldTooSmallError(
            f"ms_ssim needs sides >= {MS_SSIM_MIN_SIDE}, "
            f"got {a.height}x{a.width}"
        )
    xa, xb = a.values, b.values
    result = 1.0
    for scale, weight in enumerate(MS_SSIM_WEIGHTS):
        ssim_map, cs_map = _ssim_components(xa, xb, dynamic_range)
        if scale < MS_SSIM_SCALES - 1:
            term = float(cs_map.mean())
            xa, xb = _pool2(xa), _pool2(xb)
        else:
            term = float(ssim_map.mean())
        result *= max(term, 0.0) ** weight
    return result


def band_distance(
    a: RealField, b: RealField, cutoff_fraction: float = DEFAULT_BAND_CUTOFF
) -> tuple[float, float]:
    """RMS spectral difference below and above the cutoff radius.

    Returns (low, high): root-mean-square of |F(a) - F(b)| over bins with
    d < cutoff * d_max and d >= cutoff * d_max, pooled across channels.
    """
    _check_shapes(a, b)
    if not 0.0 < cutoff_fraction < 1.0:
        raise InvalidInputError(
            f"cutoff_fraction must lie in (0, 1), got {cutoff_fraction}"
        )
    diff = np.abs(
        forward_transform(a).coefficients - forward_transform(b).coefficients
    )
    radial = radial_distance_map(a.height, a.width)
    low_mask = radial.distances < cutoff_fraction * radial.d_max
    low = float(np.sqrt(np.mean(diff[:, low_mask] ** 2)))
    high = float(np.sqrt(np.mean(diff[:, ~low_mask] ** 2)))
    return low, high


def compute_report(
    a: RealField,
    b: RealField,
    dynamic_range: float | None = None,
    cutoff_fraction: float = DEFAULT_BAND_CUTOFF,
) -> MetricReport:
    """Bundle every metric; range defaults to the wider observed span."""
    _check_shapes(a, b)
    if dynamic_range is None:
        span = max(float(np.ptp(a.values)), float(np.ptp(b.values)))
        dynamic_range = span if span > 0.0 else 1.0
    if a.height >= MS_SSIM_MIN_SIDE and a.width >= MS_SSIM_MIN_SIDE:
        ms = ms_ssim(a, b, dynamic_range)
    else:
        ms = None
    low, high = band_distance(a, b, cutoff_fraction)
    return MetricReport(
        psnr_db=psnr(a, b, dynamic_range),
        ssim=ssim(a, b, dynamic_range),
        ms_ssim=ms,
        band_low=low,
        band_high=high,
    )
