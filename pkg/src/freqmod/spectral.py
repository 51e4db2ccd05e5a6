"""2D spectral transforms, radial frequency geometry, and PSD estimation.

Transform convention, fixed for the whole package and its wire formats:

* forward: unnormalized 2D DFT per channel, stored center-shifted so the
  zero-frequency bin sits at index ``(H // 2, W // 2)``;
* inverse: scales by ``1 / (H * W)``, the exact inverse of the forward;
* Parseval under this convention, per channel:
  ``sum_spatial |z|^2 == (1 / (H * W)) * sum_bins |F(z)|^2``;
* a unit-variance white-noise field has expected per-coefficient power
  ``E|F(k)|^2 == H * W``.

Radial geometry: ``d(u, v) = hypot(u - H // 2, v - W // 2)`` with the maximum
``d_max`` attained at the (0, 0) corner of the stored grid.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import (
    InsufficientDataError,
    InvalidDimensionError,
    InvalidInputError,
    OracleSizeError,
    SymmetryViolationError,
)

# Inverse-transform outputs whose imaginary residual exceeds this fraction of
# the real peak indicate a non-conjugate-symmetric spectrum.
SYMMETRY_TOLERANCE = 1e-6

# Grids larger than this are refused by the direct-summation reference
# transform; it exists as an independent cross-check, not a production path.
ORACLE_BIN_CAP = 4096


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RealField:
    """Spatial-domain latent: float64 array shaped (channels, height, width).

    Values are finite by construction and the backing array is marked
    read-only, so instances are safe to share across worker threads.
    """

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 3:
            raise InvalidInputError(
                f"field must be (channels, height, width), got shape {arr.shape}"
            )
        c, h, w = arr.shape
        if c < 1 or h < 2 or w < 2:
            raise InvalidDimensionError(
                f"need channels >= 1 and height, width >= 2, got {arr.shape}"
            )
        if not np.isfinite(arr).all():
            raise InvalidInputError("field contains non-finite values")
        object.__setattr__(self, "values", _freeze(arr))

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass(frozen=True)
class ComplexSpectrum:
    """Center-shifted DFT coefficients, complex128, (channels, height, width).

    Spectra produced from a RealField are conjugate-symmetric about the
    center bin; the inverse transform enforces this by checking the
    imaginary residual of its output.
    """

    coefficients: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.coefficients, dtype=np.complex128)
        if arr.ndim != 3:
            raise InvalidInputError(
                f"spectrum must be (channels, height, width), got shape {arr.shape}"
            )
        c, h, w = arr.shape
        if c < 1 or h < 2 or w < 2:
            raise InvalidDimensionError(
                f"need channels >= 1 and height, width >= 2, got {arr.shape}"
            )
        if not np.isfinite(arr).all():
            raise InvalidInputError("spectrum contains non-finite values")
        object.__setattr__(self, "coefficients", _freeze(arr))

    @property
    def channels(self) -> int:
        return self.coefficients.shape[0]

    @property
    def height(self) -> int:
        return self.coefficients.shape[1]

    @property
    def width(self) -> int:
        return self.coefficients.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.coefficients.shape


@dataclass(frozen=True)
class RadialMap:
    """Per-bin distance to the zero-frequency center, plus the grid maximum."""

    distances: np.ndarray
    d_max: float

    @property
    def height(self) -> int:
        return self.distances.shape[0]

    @property
    def width(self) -> int:
        return self.distances.shape[1]


@dataclass(frozen=True)
class PsdProfile:
    """Radially averaged power profile over equal-width annuli of [0, d_max].

    ``sample_count[i] == 0`` flags an empty annulus; its mean_power is stored
    as 0.0 but must not be interpreted as measured power.
    """

    bin_centers: np.ndarray
    mean_power: np.ndarray
    sample_count: np.ndarray
    d_max: float

    @property
    def num_bins(self) -> int:
        return self.bin_centers.shape[0]

    @property
    def empty_bins(self) -> np.ndarray:
        return self.sample_count == 0


def forward_transform(field: RealField) -> ComplexSpectrum:
    """Unnormalized per-channel 2D DFT, center-shifted."""
    coeffs = np.fft.fftshift(np.fft.fft2(field.values, axes=(-2, -1)), axes=(-2, -1))
    return ComplexSpectrum(coeffs)


def inverse_transform(spectrum: ComplexSpectrum) -> RealField:
    """Exact inverse of forward_transform, returning a real field.

    Raises SymmetryViolationError when the imaginary residual exceeds
    SYMMETRY_TOLERANCE times the real peak, i.e. when the input could not
    have come from a real field under this convention.
    """
    back = np.fft.ifft2(
        np.fft.ifftshift(spectrum.coefficients, axes=(-2, -1)), axes=(-2, -1)
    )
    real_peak = float(np.abs(back.real).max())
    imag_peak = float(np.abs(back.imag).max())
    if imag_peak > SYMMETRY_TOLERANCE * real_peak:
        raise SymmetryViolationError(
            "spectrum is not conjugate-symmetric: imaginary residual "
            f"{imag_peak:.3e} exceeds {SYMMETRY_TOLERANCE:g} * real peak {real_peak:.3e}"
        )
    return RealField(back.real.copy())


@functools.lru_cache(maxsize=64)
def radial_distance_map(height: int, width: int) -> RadialMap:
    """Distance of every stored bin to the zero-frequency center bin.

    Center is (height // 2, width // 2); the maximum distance lands on the
    (0, 0) corner of the stored grid. Results are cached per shape.
    """
    if height < 2 or width < 2:
        raise InvalidDimensionError(
            f"need height, width >= 2, got ({height}, {width})"
        )
    cy, cx = height // 2, width // 2
    rows = np.arange(height, dtype=np.float64)[:, None] - cy
    cols = np.arange(width, dtype=np.float64)[None, :] - cx
    d = np.hypot(rows, cols)
    return RadialMap(_freeze(d), float(d[0, 0]))


def annulus_average(
    power: np.ndarray, radial: RadialMap, num_bins: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Average a (height, width) power grid over equal-width annuli.

    Returns (bin_centers, mean_power, sample_count); empty annuli get
    mean_power 0.0 and sample_count 0.
    """
    if num_bins < 2:
        raise InvalidInputError(f"need num_bins >= 2, got {num_bins}")
    if power.shape != radial.distances.shape:
        raise InvalidInputError(
            f"power grid {power.shape} does not match radial map "
            f"{radial.distances.shape}"
        )
    width = radial.d_max / num_bins
    idx = np.minimum((radial.distances / width).astype(np.intp), num_bins - 1)
    sums = np.bincount(idx.ravel(), weights=power.ravel(), minlength=num_bins)
    counts = np.bincount(idx.ravel(), minlength=num_bins)
    mean = np.divide(sums, counts, out=np.zeros(num_bins), where=counts > 0)
    centers = (np.arange(num_bins, dtype=np.float64) + 0.5) * width
    return centers, mean, counts


def radially_averaged_psd(spectrum: ComplexSpectrum, num_bins: int) -> PsdProfile:
    """Channel-averaged |F|^2 profile over equal-width radial annuli."""
    radial = radial_distance_map(spectrum.height, spectrum.width)
    power = np.mean(np.abs(spectrum.coefficients) ** 2, axis=0)
    centers, mean, counts = annulus_average(power, radial, num_bins)
    return PsdProfile(
        _freeze(centers), _freeze(mean), _freeze(counts), radial.d_max
    )


def psd_slope(
    profile: PsdProfile, fit_min_fraction: float, fit_max_fraction: float
) -> float:
    """Least-squares slope of log mean_power against log bin radius.

    Fits only bins whose center radius falls inside
    [fit_min_fraction, fit_max_fraction] of d_max; the DC-containing bin and
    empty or non-positive bins are always excluded. Needs at least 3 usable
    bins, otherwise raises InsufficientDataError.
    """
    if not (0.0 < fit_min_fraction < fit_max_fraction <= 1.0):
        raise InvalidInputError(
            "fit range must satisfy 0 < min < max <= 1, got "
            f"[{fit_min_fraction}, {fit_max_fraction}]"
        )
    frac = profile.bin_centers / profile.d_max
    usable = (
        (frac >= fit_min_fraction)
        & (frac <= fit_max_fraction)
        & (profile.sample_count > 0)
        & (profile.mean_power > 0.0)
    )
    usable[0] = False
    if int(usable.sum()) < 3:
        raise InsufficientDataError(
            f"only {int(usable.sum())} usable bins in fit range "
            f"[{fit_min_fraction}, {fit_max_fraction}]; need at least 3"
        )
    x = np.log(profile.bin_centers[usable])
    y = np.log(profile.mean_power[usable])
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def brute_force_dft(field: RealField) -> ComplexSpectrum:
    """Direct-summation DFT used as an independent reference.

    Evaluates the defining double sum through explicit exponent matrices
    (no FFT factorization) and center-shifts the result. Refuses grids with
    more than ORACLE_BIN_CAP bins.
    """
    c, h, w = field.shape
    if h * w > ORACLE_BIN_CAP:
        raise OracleSizeError(
            f"direct summation capped at {ORACLE_BIN_CAP} bins, got {h * w}"
        )
    ky = np.arange(h)
    kx = np.arange(w)
    eh = np.exp(-2j * np.pi * np.outer(ky, ky) / h)
    ew = np.exp(-2j * np.pi * np.outer(kx, kx) / w)
    coeffs = np.einsum("ky,cyx,lx->ckl", eh, field.values, ew)
    return ComplexSpectrum(np.fft.fftshift(coeffs, axes=(-2, -1)))


def mirror_index_grid(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Index arrays mapping each stored bin to its conjugate partner."""
    cy, cx = height // 2, width // 2
    rows = (2 * cy - np.arange(height)) % height
    cols = (2 * cx - np.arange(width)) % width
    return rows[:, None], cols[None, :]
