"""Frequency-domain modulation of paired diffusion trajectories.

A weight field omega(d, t) in [0, 1] blends the spectrum of an original
trajectory into a refined one, bin by bin:

    F_fused = omega * F(z_ori) + (1 - omega) * F(z_ref)

omega decays radially (gaussian or linear kernel scaled by alpha, and sigma
for the gaussian kind) and shrinks over the run through the factor
exp((t - T) / T), so low frequencies are constrained hard early and
everything is progressively released. The staged high-pass intervention used
for probing when structure is decided lives here too.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .diffusion import (
    ConditionSpec,
    NoiseSchedule,
    PowerLawPrior,
    TrajectoryRecord,
    sample,
)
from .errors import (
    ConfigError,
    InvalidInputError,
    InvalidTimestepError,
)
from .spectral import (
    ComplexSpectrum,
    RadialMap,
    RealField,
    forward_transform,
    inverse_transform,
    radial_distance_map,
)

WEIGHT_KINDS = ("gaussian", "linear")
FILTER_SHAPES = ("hard", "gaussian-edge")


@dataclass(frozen=True)
class WeightParams:
    """Kernel parameters: radial scale alpha, width sigma, kind, horizon T."""

    alpha: float
    sigma: float
    kind: str
    T: int

    def __post_init__(self):
        if self.alpha <= 0.0:
            raise InvalidInputError(f"alpha must be positive, got {self.alpha}")
        if self.sigma <= 0.0:
            raise InvalidInputError(f"sigma must be positive, got {self.sigma}")
        if self.kind not in WEIGHT_KINDS:
            raise InvalidInputError(
                f"kind must be one of {WEIGHT_KINDS}, got {self.kind!r}"
            )
        if self.T < 1:
            raise InvalidTimestepError(f"horizon T must be >= 1, got {self.T}")


@dataclass(frozen=True)
class WeightField:
    """Realized per-bin weights at one timestep; every value in [0, 1]."""

    weights: np.ndarray
    timestep: int

    def __post_init__(self):
        arr = np.asarray(self.weights, dtype=np.float64)
        if arr.ndim != 2:
            raise InvalidInputError(
                f"weights must be a 2D per-bin grid, got ndim={arr.ndim}"
            )
        if not np.isfinite(arr).all():
            raise InvalidInputError("weights contain non-finite values")
        if (arr < 0.0).any() or (arr > 1.0).any():
            raise InvalidInputError("weights must lie in [0, 1]")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "weights", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape


def decay_factor(t: int, T: int) -> float:
    """Time decay exp((t - T) / T): 1 at t = T, e^-1 at t = 0."""
    if T < 1:
        raise InvalidTimestepError(f"horizon T must be >= 1, got {T}")
    if not 0 <= t <= T:
        raise InvalidTimestepError(f"timestep {t} outside [0, {T}]")
    return float(np.exp((t - T) / T))


def weight_field(radial: RadialMap, t: int, params: WeightParams) -> WeightField:
    """Evaluate omega(d, t) on a radial grid.

    gaussian: omega = f_decay(t) * exp(-(d / (d_max alpha))^2 / (2 sigma^2))
    linear:   omega = f_decay(t) * max(0, 1 - d / (d_max alpha))
    """
    decay = decay_factor(t, params.T)
    scaled = radial.distances / (radial.d_max * params.alpha)
    if params.kind == "gaussian":
        kernel = np.exp(-(scaled**2) / (2.0 * params.sigma**2))
    else:
        kernel = np.maximum(0.0, 1.0 - scaled)
    return WeightField(decay * kernel, t)


def fuse_spectra(
    spec_ori: ComplexSpectrum, spec_ref: ComplexSpectrum, weights: WeightField
) -> ComplexSpectrum:
    """Per-bin convex combination omega * F_ori + (1 - omega) * F_ref.

    Real, radially symmetric weights preserve the Hermitian symmetry of the
    inputs, so the fused spectrum stays invertible to a real field. The
    degenerate all-ones / all-zeros weights return the corresponding input
    unchanged, bit for bit.
    """
    if spec_ori.shape != spec_ref.shape:
        raise InvalidInputError(
            f"spectrum shapes differ: {spec_ori.shape} vs {spec_ref.shape}"
        )
    if weights.shape != (spec_ori.height, spec_ori.width):
        raise InvalidInputError(
            f"weight grid {weights.shape} does not match spectra "
            f"{(spec_ori.height, spec_ori.width)}"
        )
    w = weights.weights
    if np.all(w == 1.0):
        return spec_ori
    if np.all(w == 0.0):
        return spec_ref
    fused = w * spec_ori.coefficients + (1.0 - w) * spec_ref.coefficients
    return ComplexSpectrum(fused)


def modulate(
    z_ori_t: RealField, z_ref_t: RealField, t: int, params: WeightParams
) -> RealField:
    """Blend the original latent's spectrum into the refined latent.

    Full pipeline: transform both latents, evaluate the weight field at t,
    fuse, and invert back to a spatial field.
    """
    if z_ori_t.shape != z_ref_t.shape:
        raise InvalidInputError(
            f"latent shapes differ: {z_ori_t.shape} vs {z_ref_t.shape}"
        )
    radial = radial_distance_map(z_ori_t.height, z_ori_t.width)
    weights = weight_field(radial, t, params)
    fused = fuse_spectra(
        forward_transform(z_ori_t), forward_transform(z_ref_t), weights
    )
    return inverse_transform(fused)


def _refined_seed(seed: int) -> int:
    digest = hashlib.sha256(f"refined-noise|{seed}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def modulated_trajectory(
    traj_ori: TrajectoryRecord,
    cond_ref: ConditionSpec,
    prior: PowerLawPrior,
    schedule: NoiseSchedule,
    num_steps: int,
    seed: int,
    params: WeightParams,
) -> TrajectoryRecord:
    """Refined-side run fused against an already-recorded original run.

    Lets a parameter sweep reuse one original trajectory for many weight
    settings instead of regenerating it per point.
    """
    if params.T != schedule.T:
        raise ConfigError(
            f"weight horizon T={params.T} does not match schedule T={schedule.T}"
        )
    if len(traj_ori.steps) != num_steps:
        raise ConfigError(
            f"original trajectory has {len(traj_ori.steps)} steps, "
            f"expected {num_steps}"
        )

    def fuse_hook(z: RealField, step_index: int, t: int) -> RealField:
        return modulate(traj_ori.steps[step_index - 1].latent, z, t, params)

    return sample(cond_ref, prior, schedule, num_steps, seed, hooks=(fuse_hook,))


def paired_sample(
    cond_ori: ConditionSpec,
    cond_ref: ConditionSpec,
    prior: PowerLawPrior,
    schedule: NoiseSchedule,
    num_steps: int,
    seed: int,
    params: WeightParams,
    share_initial_noise: bool = True,
) -> tuple[TrajectoryRecord, TrajectoryRecord]:
    """Run an unmodified original trajectory and a modulated refined one.

    The refined run installs a pre-denoise hook that fuses the original
    latent at the same step into the refined latent, so its denoiser always
    sees the blended spectrum. Both trajectories start from the same terminal
    noise when share_initial_noise is set (the default), which is the
    regenerate-from-the-same-seed workflow.
    """
    if cond_ori.shape != cond_ref.shape:
        raise ConfigError(
            f"condition shapes differ: {cond_ori.shape} vs {cond_ref.shape}"
        )
    traj_ori = sample(cond_ori, prior, schedule, num_steps, seed)
    ref_seed = seed if share_initial_noise else _refined_seed(seed)
    traj_ref = modulated_trajectory(
        traj_ori, cond_ref, prior, schedule, num_steps, ref_seed, params
    )
    if len(traj_ori.steps) != len(traj_ref.steps):
        raise ConfigError(
            f"trajectory step counts diverged: {len(traj_ori.steps)} vs "
            f"{len(traj_ref.steps)}"
        )
    return traj_ori, traj_ref


@dataclass(frozen=True)
class FilterSpec:
    """Staged high-pass filter: cutoff radius rho * d_max, step range."""

    cutoff_fraction: float
    shape: str = "hard"
    active_steps: tuple[int, int] = (1, 1)

    def __post_init__(self):
        if not 0.0 < self.cutoff_fraction < 1.0:
            raise InvalidInputError(
                f"cutoff_fraction must lie in (0, 1), got {self.cutoff_fraction}"
            )
        if self.shape not in FILTER_SHAPES:
            raise InvalidInputError(
                f"shape must be one of {FILTER_SHAPES}, got {self.shape!r}"
            )
        first, last = self.active_steps
        if first < 1 or last < first:
            raise InvalidInputError(
                f"active_steps must satisfy 1 <= first <= last, "
                f"got {self.active_steps}"
            )


def high_pass_intervention(z_t: RealField, spec: FilterSpec) -> RealField:
    """Strip low-frequency content below the cutoff radius.

    hard: zero every bin with d < rho * d_max; gaussian-edge: multiply by
    1 - exp(-d^2 / (2 (rho d_max)^2)), a smooth notch around the center.
    """
    radial = radial_distance_map(z_t.height, z_t.width)
    cutoff = spec.cutoff_fraction * radial.d_max
    if spec.shape == "hard":
        factor = (radial.distances >= cutoff).astype(np.float64)
    else:
        factor = 1.0 - np.exp(-(radial.distances**2) / (2.0 * cutoff**2))
    spec_z = np.fft.fft2(z_t.values, axes=(-2, -1))
    spec_z *= np.fft.ifftshift(factor, axes=(-2, -1))
    return RealField(np.fft.ifft2(spec_z, axes=(-2, -1)).real)


def filter_hook(spec: FilterSpec) -> Callable[[RealField, int, int], RealField]:
    """Sampling hook applying the filter inside its active step range."""
    first, last = spec.active_steps

    def hook(z: RealField, step_index: int, t: int) -> RealField:
        if first <= step_index <= last:
            return high_pass_intervention(z, spec)
        return z

    return hook
