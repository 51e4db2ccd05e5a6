"""Analytic diffusion testbed on power-law latent fields.

The generative model is fully Gaussian and diagonal in frequency space:

* prior draw: ``z_0 = mu_c + s`` where ``mu_c`` is a condition's mean field
  and ``s`` has independent spectral coefficients with per-bin variance
  ``v(d)`` following a radial power law;
* forward noising: ``z_t = sqrt(abar_t) z_0 + sqrt(1 - abar_t) eps`` with
  unit Gaussian ``eps``, equivalently per coefficient
  ``F(z_t) = sqrt(abar_t) F(z_0) + sqrt(1 - abar_t) F(eps)``;
* per-coefficient SNR: ``abar_t v(d) / ((1 - abar_t) n)`` with the
  white-noise spectral power ``n = H * W`` under the package transform
  convention.

Because the model is Gaussian, the Bayes-optimal denoiser is the closed-form
per-bin shrinkage implemented by :func:`wiener_denoise`; deterministic
sampling composes it with the eta=0 update rule of :func:`ddim_step`.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    HookContractError,
    InvalidInputError,
    InvalidScheduleError,
    InvalidStepOrderError,
    InvalidTimestepError,
    UndefinedSnrError,
)
from .spectral import (
    PsdProfile,
    RadialMap,
    RealField,
    annulus_average,
    forward_transform,
    radial_distance_map,
)

SCHEDULE_KINDS = ("linear-beta", "cosine")

# Radii below this are clamped before the power law is applied, keeping the
# spectral variance finite toward the center.
D_FLOOR = 1.0

# Band used throughout for layout content, as a fraction of d_max.
LAYOUT_BAND_MAX = 0.15
# Band where texture content must concentrate, as a fraction of d_max.
TEXTURE_BAND_MIN = 0.25
# Minimum energy fraction each condition component must keep in its band.
BAND_ENERGY_FRACTION = 0.95

# Construction bands for condition components. Texture deliberately spills a
# small fraction of its energy below TEXTURE_BAND_MIN: swapping texture ids
# then perturbs the low band slightly, the way a semantic edit nudges global
# composition, which is what modulation is supposed to stabilize.
_LAYOUT_BUILD_MAX = 0.12
_TEXTURE_MAIN_BAND = (0.28, 0.55)
_TEXTURE_SPILL_BAND = (0.10, 0.18)
_TEXTURE_SPILL_FRACTION = 0.045


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal-retention curve ``alpha_bar[0..T]``.

    Invariants: ``alpha_bar[0] == 1`` exactly, strictly decreasing, all values
    in (0, 1], and ``alpha_bar[T] < 0.05`` so the terminal state is
    noise-dominated.
    """

    kind: str
    timesteps: int
    alpha_bar: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.alpha_bar, dtype=np.float64)
        if arr.shape != (self.timesteps + 1,):
            raise InvalidScheduleError(
                f"alpha_bar must have length T+1={self.timesteps + 1}, "
                f"got {arr.shape}"
            )
        if arr[0] != 1.0:
            raise InvalidScheduleError("alpha_bar[0] must equal 1 exactly")
        if not ((arr > 0.0).all() and (arr <= 1.0).all()):
            raise InvalidScheduleError("alpha_bar values must lie in (0, 1]")
        if not (np.diff(arr) < 0.0).all():
            raise InvalidScheduleError("alpha_bar must be strictly decreasing")
        if not arr[-1] < 0.05:
            raise InvalidScheduleError(
                f"alpha_bar[T]={arr[-1]:.4f} must be below 0.05"
            )
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "alpha_bar", arr)

    @property
    def T(self) -> int:
        return self.timesteps

    def at(self, t: int) -> float:
        if not 0 <= t <= self.timesteps:
            raise InvalidTimestepError(
                f"timestep {t} outside [0, {self.timesteps}]"
            )
        return float(self.alpha_bar[t])


def build_schedule(kind: str, timesteps: int) -> NoiseSchedule:
    """Construct a noise schedule.

    ``linear-beta`` uses per-step noise rates spaced linearly from
    1e-4 * (1000 / T) to 0.02 * (1000 / T), which reproduces the classic
    1000-step curve at any T coarse enough to keep every rate below 1
    (T >= 21). ``cosine`` uses the squared-cosine profile with offset 0.008
    and per-step rates clipped to 0.999 so the invariants hold at any T >= 2.
    """
    if timesteps < 2:
        raise InvalidScheduleError(f"need timesteps >= 2, got {timesteps}")
    if kind == "linear-beta":
        scale = 1000.0 / timesteps
        betas = np.linspace(1e-4 * scale, 0.02 * scale, timesteps)
        if (betas <= 0.0).any() or (betas >= 1.0).any():
            raise InvalidScheduleError(
                f"linear-beta rates leave (0, 1) at T={timesteps}; "
                "use T >= 21 or the cosine kind"
            )
    elif kind == "cosine":
        s = 0.008
        grid = np.arange(timesteps + 1, dtype=np.float64) / timesteps
        f = np.cos((grid + s) / (1.0 + s) * np.pi / 2.0) ** 2
        betas = np.clip(1.0 - f[1:] / f[:-1], 1e-8, 0.999)
    else:
        raise InvalidScheduleError(
            f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}"
        )
    alpha_bar = np.concatenate(([1.0], np.cumprod(1.0 - betas)))
    return NoiseSchedule(kind, timesteps, alpha_bar)


@dataclass(frozen=True)
class PowerLawPrior:
    """Radial power-law spectral variance ``v(d) = A * (max(d, 1) / r0)^-beta``.

    ``dc_variance`` is the variance assigned to the d=0 bin; it defaults to
    the floor value A * (1 / r0)^-beta. ``amplitude == 0`` degenerates to a
    deterministic prior concentrated on the condition mean.
    """

    beta: float
    amplitude: float
    reference_radius: float = 1.0
    dc_variance: float | None = None

    def __post_init__(self):
        if self.beta <= 0.0:
            raise InvalidInputError(f"beta must be positive, got {self.beta}")
        if self.amplitude < 0.0:
            raise InvalidInputError(
                f"amplitude must be non-negative, got {self.amplitude}"
            )
        if self.reference_radius <= 0.0:
            raise InvalidInputError(
                f"reference_radius must be positive, got {self.reference_radius}"
            )
        if self.dc_variance is None:
            object.__setattr__(
                self,
                "dc_variance",
                self.amplitude * (D_FLOOR / self.reference_radius) ** (-self.beta),
            )
        elif self.dc_variance < 0.0:
            raise InvalidInputError(
                f"dc_variance must be non-negative, got {self.dc_variance}"
            )

    def variance_at(self, d) -> np.ndarray | float:
        """Spectral variance at radius d (scalar or array)."""
        d_arr = np.asarray(d, dtype=np.float64)
        v = self.amplitude * (
            np.maximum(d_arr, D_FLOOR) / self.reference_radius
        ) ** (-self.beta)
        v = np.where(d_arr == 0.0, self.dc_variance, v)
        return float(v) if np.isscalar(d) or d_arr.ndim == 0 else v

    def variance_map(self, radial: RadialMap) -> np.ndarray:
        return np.asarray(self.variance_at(radial.distances))


def _stable_rng(*tokens) -> np.random.Generator:
    digest = hashlib.sha256("|".join(str(t) for t in tokens).encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _shaped_noise_field(
    rng: np.random.Generator,
    channels: int,
    height: int,
    width: int,
    weights: np.ndarray,
) -> np.ndarray:
    """Random real field whose spectrum is shaped by centered weights.

    Shaping a white-noise spectrum with a real, radially symmetric weight
    keeps conjugate symmetry exact, so the inverse is real to machine
    precision.
    """
    white = rng.standard_normal((channels, height, width))
    spec = np.fft.fft2(white, axes=(-2, -1))
    spec *= np.fft.ifftshift(np.asarray(weights, dtype=np.float64), axes=(-2, -1))
    return np.fft.ifft2(spec, axes=(-2, -1)).real


def _normalized(component: np.ndarray, rms: float) -> np.ndarray:
    scale = float(np.sqrt(np.mean(component**2)))
    if scale == 0.0:
        raise InvalidInputError("degenerate condition component (all zero)")
    return component * (rms / scale)


@dataclass(frozen=True)
class ConditionSpec:
    """Prompt stand-in: a deterministic mean field split into two bands.

    The layout component keeps at least 95% of its spectral energy at
    d/d_max <= 0.15 and the texture component at least 95% at
    d/d_max >= 0.25; both fractions are verified at construction.
    """

    layout_id: str
    texture_id: str
    mean_field: RealField
    layout_field: RealField = field(repr=False, default=None)
    texture_field: RealField = field(repr=False, default=None)

    def __post_init__(self):
        if self.layout_field is None or self.texture_field is None:
            raise InvalidInputError(
                "use make_condition() to build a ConditionSpec"
            )
        radial = radial_distance_map(self.mean_field.height, self.mean_field.width)
        frac = radial.distances / radial.d_max
        lo = _band_energy_fraction(self.layout_field, frac <= LAYOUT_BAND_MAX)
        hi = _band_energy_fraction(self.texture_field, frac >= TEXTURE_BAND_MIN)
        if lo < BAND_ENERGY_FRACTION:
            raise InvalidInputError(
                f"layout component keeps only {lo:.3f} of its energy at "
                f"d/d_max <= {LAYOUT_BAND_MAX}"
            )
        if hi < BAND_ENERGY_FRACTION:
            raise InvalidInputError(
                f"texture component keeps only {hi:.3f} of its energy at "
                f"d/d_max >= {TEXTURE_BAND_MIN}"
            )

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.mean_field.shape


def _band_energy_fraction(component: RealField, mask: np.ndarray) -> float:
    spec = forward_transform(component)
    power = np.abs(spec.coefficients) ** 2
    total = float(power.sum())
    if total == 0.0:
        raise InvalidInputError("degenerate condition component (all zero)")
    return float(power[:, mask].sum()) / total


def make_condition(
    layout_id: str,
    texture_id: str,
    channels: int = 1,
    height: int = 64,
    width: int = 64,
    layout_rms: float = 1.0,
    texture_rms: float = 1.0,
) -> ConditionSpec:
    """Deterministically derive a condition mean field from two ids.

    The layout component is band-limited to d/d_max <= 0.12 with a mild
    1/(1+d) amplitude decay. The texture component carries exactly 95.5% of
    its spectral energy at d/d_max within [0.28, 0.55] and spills the
    remaining 4.5% into [0.10, 0.18], so texture edits also perturb coarse
    composition slightly; the split is rescaled to be exact per draw, not
    merely in expectation.
    """
    radial = radial_distance_map(height, width)
    frac = radial.distances / radial.d_max

    layout_weights = (frac <= _LAYOUT_BUILD_MAX) / (1.0 + radial.distances)
    rng_layout = _stable_rng("layout", layout_id, channels, height, width)
    layout = _normalized(
        _shaped_noise_field(rng_layout, channels, height, width, layout_weights),
        layout_rms,
    )

    main_mask = (frac >= _TEXTURE_MAIN_BAND[0]) & (frac <= _TEXTURE_MAIN_BAND[1])
    spill_mask = (frac >= _TEXTURE_SPILL_BAND[0]) & (frac < _TEXTURE_SPILL_BAND[1])
    if not main_mask.any():
        raise InvalidInputError(
            f"grid {height}x{width} too small to carry a texture band"
        )
    rng_texture = _stable_rng("texture", texture_id, channels, height, width)
    main = _shaped_noise_field(rng_texture, channels, height, width, main_mask)
    texture = _normalized(main, np.sqrt(1.0 - _TEXTURE_SPILL_FRACTION))
    if spill_mask.any():
        spill = _shaped_noise_field(
            rng_texture, channels, height, width, spill_mask
        )
        texture = texture + _normalized(spill, np.sqrt(_TEXTURE_SPILL_FRACTION))
    texture = _normalized(texture, texture_rms)

    return ConditionSpec(
        layout_id=layout_id,
        texture_id=texture_id,
        mean_field=RealField(layout + texture),
        layout_field=RealField(layout),
        texture_field=RealField(texture),
    )


@dataclass(frozen=True)
class StepSnapshot:
    """Latent entering one sampler step (after hooks, before denoising)."""

    index: int
    timestep: int
    latent: RealField


@dataclass(frozen=True)
class TrajectoryRecord:
    """Full record of one deterministic sampling run."""

    seed: int
    condition: ConditionSpec
    steps: tuple[StepSnapshot, ...]
    final: RealField

    def __post_init__(self):
        times = [s.timestep for s in self.steps]
        if not times:
            raise InvalidInputError("trajectory must contain at least one step")
        if any(b >= a for a, b in zip(times, times[1:])):
            raise InvalidInputError("step timesteps must be strictly decreasing")


Hook = Callable[[RealField, int, int], RealField]


def forward_diffuse(
    z0: RealField, t: int, noise: RealField, schedule: NoiseSchedule
) -> RealField:
    """Noising step: ``sqrt(abar_t) z0 + sqrt(1 - abar_t) noise``."""
    if z0.shape != noise.shape:
        raise InvalidInputError(
            f"z0 shape {z0.shape} does not match noise shape {noise.shape}"
        )
    abar = schedule.at(t)
    return RealField(
        np.sqrt(abar) * z0.values + np.sqrt(1.0 - abar) * noise.values
    )


def synthesize_prior_sample(
    prior: PowerLawPrior, condition: ConditionSpec, seed: int
) -> RealField:
    """Draw ``mu_c + s`` with exact per-bin spectral variance v(d).

    The fluctuation is built by shaping the DFT of a white-noise field with
    sqrt(v / (H * W)), which preserves conjugate symmetry and gives every
    coefficient expected power v(d) exactly.
    """
    c, h, w = condition.shape
    rng = np.random.default_rng(seed)
    fluct = _prior_fluctuation(prior, (c, h, w), rng)
    return RealField(condition.mean_field.values + fluct)


def _prior_fluctuation(
    prior: PowerLawPrior, shape: tuple[int, int, int], rng: np.random.Generator
) -> np.ndarray:
    c, h, w = shape
    radial = radial_distance_map(h, w)
    v = prior.variance_map(radial)
    shaping = np.sqrt(v / (h * w))
    white = rng.standard_normal((c, h, w))
    spec = np.fft.fft2(white, axes=(-2, -1))
    spec *= np.fft.ifftshift(shaping, axes=(-2, -1))
    return np.fft.ifft2(spec, axes=(-2, -1)).real


def theoretical_snr(
    d: float,
    t: int,
    prior: PowerLawPrior,
    schedule: NoiseSchedule,
    noise_power: float,
) -> float:
    """Per-coefficient SNR ``abar_t v(d) / ((1 - abar_t) noise_power)``.

    ``noise_power`` is the white-noise spectral power per coefficient, which
    equals H * W under the package transform convention. Undefined at t=0
    where the noise term vanishes.
    """
    if t == 0:
        raise UndefinedSnrError("SNR is undefined at t=0 (no noise term)")
    if noise_power <= 0.0:
        raise InvalidInputError(f"noise_power must be positive, got {noise_power}")
    abar = schedule.at(t)
    v = prior.variance_at(d)
    return abar * v / ((1.0 - abar) * noise_power)


@dataclass(frozen=True)
class SnrEstimate:
    """Monte Carlo SNR decomposition per radial annulus."""

    signal: PsdProfile
    noise: PsdProfile
    ratio: np.ndarray


def empirical_snr(
    prior: PowerLawPrior,
    condition: ConditionSpec,
    schedule: NoiseSchedule,
    t: int,
    num_samples: int,
    num_bins: int,
    seed: int,
) -> SnrEstimate:
    """Estimate the per-annulus SNR decomposition by Monte Carlo.

    Averages ``abar_t |F(z0 - mu_c)|^2`` over prior draws and
    ``(1 - abar_t) |F(eps)|^2`` over unit-noise draws, then reduces both
    power grids over equal-width annuli.
    """
    if t == 0:
        raise UndefinedSnrError("SNR is undefined at t=0 (no noise term)")
    if num_samples < 2:
        raise InvalidInputError(f"need num_samples >= 2, got {num_samples}")
    c, h, w = condition.shape
    abar = schedule.at(t)
    radial = radial_distance_map(h, w)
    ss = np.random.SeedSequence(seed)
    rng_signal, rng_noise = (np.random.default_rng(s) for s in ss.spawn(2))

    signal_power = np.zeros((h, w))
    noise_power = np.zeros((h, w))
    chunk = max(1, min(num_samples, 512 // c))
    done = 0
    while done < num_samples:
        n = min(chunk, num_samples - done)
        fluct = np.stack(
            [_prior_fluctuation(prior, (c, h, w), rng_signal) for _ in range(n)]
        )
        eps = rng_noise.standard_normal((n, c, h, w))
        f_sig = np.fft.fftshift(np.fft.fft2(fluct, axes=(-2, -1)), axes=(-2, -1))
        f_eps = np.fft.fftshift(np.fft.fft2(eps, axes=(-2, -1)), axes=(-2, -1))
        signal_power += (np.abs(f_sig) ** 2).sum(axis=(0, 1))
        noise_power += (np.abs(f_eps) ** 2).sum(axis=(0, 1))
        done += n
    signal_power *= abar / (num_samples * c)
    noise_power *= (1.0 - abar) / (num_samples * c)

    centers, sig_mean, counts = annulus_average(signal_power, radial, num_bins)
    _, noi_mean, _ = annulus_average(noise_power, radial, num_bins)
    ratio = np.divide(
        sig_mean, noi_mean, out=np.full(num_bins, np.nan), where=noi_mean > 0
    )
    signal = PsdProfile(centers, sig_mean, counts, radial.d_max)
    noise = PsdProfile(centers.copy(), noi_mean, counts.copy(), radial.d_max)
    return SnrEstimate(signal, noise, ratio)


def wiener_gain(v, alpha_bar: float, noise_power: float):
    """Per-coefficient posterior-mean gain ``sqrt(a) v / (a v + (1 - a) n)``."""
    return np.sqrt(alpha_bar) * v / (alpha_bar * v + (1.0 - alpha_bar) * noise_power)


def wiener_denoise(
    z_t: RealField,
    t: int,
    condition: ConditionSpec,
    prior: PowerLawPrior,
    schedule: NoiseSchedule,
) -> tuple[RealField, RealField]:
    """Closed-form posterior mean of z0 given z_t, plus the implied noise.

    Per coefficient: ``mu + g (F(z_t) - sqrt(abar) mu)`` with the gain from
    :func:`wiener_gain`; the noise estimate follows from inverting the
    forward noising identity. Exact Bayes under the package's Gaussian model,
    which is what the dense-covariance oracle in the test suite checks.
    """
    if not 1 <= t <= schedule.T:
        raise InvalidTimestepError(
            f"denoising needs t in [1, {schedule.T}], got {t}"
        )
    if z_t.shape != condition.shape:
        raise InvalidInputError(
            f"latent shape {z_t.shape} does not match condition {condition.shape}"
        )
    radial = radial_distance_map(z_t.height, z_t.width)
    v = prior.variance_map(radial)
    mu_hat = forward_transform(condition.mean_field).coefficients
    z_hat = forward_transform(z_t).coefficients
    z0 = _wiener_posterior(z_hat, mu_hat, v, schedule.at(t), z_t.height * z_t.width)
    eps = (z_t.values - np.sqrt(schedule.at(t)) * z0) / np.sqrt(
        1.0 - schedule.at(t)
    )
    return RealField(z0), RealField(eps)


def _wiener_posterior(
    z_hat: np.ndarray,
    mu_hat: np.ndarray,
    v: np.ndarray,
    abar: float,
    noise_power: float,
) -> np.ndarray:
    gain = wiener_gain(v, abar, noise_power)
    post = mu_hat + gain * (z_hat - np.sqrt(abar) * mu_hat)
    return np.fft.ifft2(np.fft.ifftshift(post, axes=(-2, -1)), axes=(-2, -1)).real


def ddim_step(
    z_t: RealField,
    t: int,
    t_prev: int,
    eps_hat: RealField,
    schedule: NoiseSchedule,
) -> RealField:
    """Deterministic (eta=0) update from timestep t to t_prev < t."""
    if t_prev >= t:
        raise InvalidStepOrderError(
            f"t_prev must be strictly below t, got t={t}, t_prev={t_prev}"
        )
    if z_t.shape != eps_hat.shape:
        raise InvalidInputError(
            f"latent shape {z_t.shape} does not match eps_hat {eps_hat.shape}"
        )
    abar = schedule.at(t)
    abar_prev = schedule.at(t_prev)
    z0 = (z_t.values - np.sqrt(1.0 - abar) * eps_hat.values) / np.sqrt(abar)
    return RealField(
        np.sqrt(abar_prev) * z0 + np.sqrt(1.0 - abar_prev) * eps_hat.values
    )


def generation_timesteps(timesteps: int, num_steps: int) -> np.ndarray:
    """Evenly spaced integer grid from T down to 0, num_steps + 1 points."""
    if num_steps < 1:
        raise InvalidInputError(f"need num_steps >= 1, got {num_steps}")
    grid = np.round(np.linspace(timesteps, 0, num_steps + 1)).astype(int)
    if (np.diff(grid) >= 0).any():
        raise InvalidInputError(
            f"num_steps={num_steps} too fine for a {timesteps}-step schedule"
        )
    return grid


def sample(
    condition: ConditionSpec,
    prior: PowerLawPrior,
    schedule: NoiseSchedule,
    num_steps: int,
    seed: int,
    hooks: Sequence[Hook] = (),
) -> TrajectoryRecord:
    """Deterministic generation from a seeded unit-Gaussian terminal latent.

    Each step applies the hooks in order to the current latent (1-based step
    index and the schedule timestep are passed alongside), snapshots the
    result, denoises, and takes the deterministic update to the next grid
    point. Bitwise reproducible for a fixed seed and hook list.
    """
    grid = generation_timesteps(schedule.T, num_steps)
    c, h, w = condition.shape
    rng = np.random.default_rng(seed)
    z = RealField(rng.standard_normal((c, h, w)))

    radial = radial_distance_map(h, w)
    v = prior.variance_map(radial)
    mu_hat = forward_transform(condition.mean_field).coefficients
    noise_power = float(h * w)

    snapshots: list[StepSnapshot] = []
    for i in range(num_steps):
        t = int(grid[i])
        t_next = int(grid[i + 1])
        for hook in hooks:
            out = hook(z, i + 1, t)
            if not isinstance(out, RealField):
                raise HookContractError(
                    f"hook {hook!r} returned {type(out).__name__}, "
                    "expected a RealField"
                )
            if out.shape != z.shape:
                raise HookContractError(
                    f"hook {hook!r} changed the latent shape "
                    f"{z.shape} -> {out.shape}"
                )
            z = out
        snapshots.append(StepSnapshot(i + 1, t, z))
        abar = schedule.at(t)
        z_hat = forward_transform(z).coefficients
        z0 = _wiener_posterior(z_hat, mu_hat, v, abar, noise_power)
        eps = (z.values - np.sqrt(abar) * z0) / np.sqrt(1.0 - abar)
        z = ddim_step(z, t, t_next, RealField(eps), schedule)
    return TrajectoryRecord(seed, condition, tuple(snapshots), z)
