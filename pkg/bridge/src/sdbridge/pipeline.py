"""Deterministic toy latent-diffusion host.

This stands in for a full text-to-image model so the bridge can be
exercised end to end without model weights. It keeps the pieces the
bridge actually touches:

  * a latent space of shape (4, 64, 64) sampled over a 1000-step horizon,
  * a DDIM-style deterministic sampler with a per-step hook that may
    replace the state before the denoiser sees it,
  * a prompt conditioning path with classifier-free-style guidance,
  * a latent decoder to a (64, 64, 3) float image and its exact inverse.

The "denoiser" is an affine anchor toward a prompt-derived target field:
x0_hat(z, t) = (1 - gamma(t)) * target + gamma(t) * z / sqrt(abar_t) with
gamma(t) = 1 - t / horizon. Early steps trust the prompt, late steps
trust the observed state, and every update stays linear in z, which
makes the sampler exactly invertible and lets upstream state edits
survive into the final latent instead of being denoised away.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

from .errors import ConfigError

LATENT_CHANNELS = 4
LATENT_SIZE = 64
HORIZON = 1000

_COS_OFFSET = 0.008

IMG_OFFSET = 0.5
IMG_SCALE = 0.2


def _mixing_matrix() -> np.ndarray:
    # Orthonormal rows, so the transpose is an exact right inverse and
    # decode(encode(image)) reproduces any decoded image bit for bit
    # up to rounding.
    rng = np.random.default_rng(2024)
    q, _ = np.linalg.qr(rng.standard_normal((LATENT_CHANNELS, LATENT_CHANNELS)))
    return q[:3]


_MIX = _mixing_matrix()


def alpha_bar(t: float) -> float:
    """Cosine signal-retention schedule; exactly 1 at t = 0."""
    s = _COS_OFFSET
    num = math.cos(((t / HORIZON) + s) / (1.0 + s) * math.pi / 2.0) ** 2
    den = math.cos(s / (1.0 + s) * math.pi / 2.0) ** 2
    return num / den


def gamma(t: float) -> float:
    """How much the denoiser trusts the observed state at step t."""
    return 1.0 - t / HORIZON


def prompt_field(prompt: str) -> np.ndarray:
    """Deterministic unit-variance conditioning field for a prompt.

    Spectrally shaped noise seeded from the prompt digest: mostly
    low-frequency structure, zero mean and unit variance per channel.
    """
    digest = hashlib.sha256(prompt.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
    white = rng.standard_normal((LATENT_CHANNELS, LATENT_SIZE, LATENT_SIZE))
    fy = np.fft.fftfreq(LATENT_SIZE)[:, None]
    fx = np.fft.fftfreq(LATENT_SIZE)[None, :]
    gain = (1.0 + np.hypot(fy, fx) / 0.05) ** -1.7
    field = np.fft.ifft2(np.fft.fft2(white) * gain).real
    field -= field.mean(axis=(1, 2), keepdims=True)
    field /= field.std(axis=(1, 2), keepdims=True)
    return field


def guided_target(prompt: str, guidance: float) -> np.ndarray:
    """Conditioning target after guidance against the empty prompt."""
    cond = prompt_field(prompt)
    uncond = prompt_field("")
    mixed = uncond + guidance * (cond - uncond)
    mixed -= mixed.mean(axis=(1, 2), keepdims=True)
    mixed /= mixed.std(axis=(1, 2), keepdims=True)
    return mixed


def plan_timesteps(steps: int) -> list[tuple[int, int]]:
    """Descending (t, t_prev) pairs from the horizon down to zero."""
    if not isinstance(steps, int) or isinstance(steps, bool):
        raise ConfigError(f"steps must be an integer, got {steps!r}")
    if steps < 1 or steps > HORIZON:
        raise ConfigError(f"steps must be in [1, {HORIZON}], got {steps}")
    grid = np.linspace(HORIZON, 0.0, steps + 1)
    ts = [int(round(v)) for v in grid]
    if any(ts[i] <= ts[i + 1] for i in range(len(ts) - 1)):
        raise ConfigError(f"{steps} steps do not give distinct timesteps")
    return list(zip(ts[:-1], ts[1:]))


def _step_coefficients(t: int, t_prev: int) -> tuple[float, float]:
    """Scalars (a, b) with z_prev = a * z_t + b * target.

    Folding x0_hat into the deterministic DDIM update
    z_prev = sqrt(abar_prev) * x0_hat + sqrt(1 - abar_prev) * eps_hat,
    eps_hat = (z_t - sqrt(abar_t) * x0_hat) / sqrt(1 - abar_t), gives an
    affine map in z_t because x0_hat is affine in z_t.
    """
    ab_t = alpha_bar(t)
    ab_p = alpha_bar(t_prev)
    g = gamma(t)
    carry = math.sqrt((1.0 - ab_p) / (1.0 - ab_t))
    a = math.sqrt(ab_p) * g / math.sqrt(ab_t) + (1.0 - g) * carry
    b = (1.0 - g) * (math.sqrt(ab_p) - math.sqrt(ab_t) * carry)
    return a, b


def initial_noise(seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((LATENT_CHANNELS, LATENT_SIZE, LATENT_SIZE))


def generate(
    prompt: str,
    seed: int,
    steps: int = 50,
    guidance: float = 7.5,
    z_start: np.ndarray | None = None,
    hook=None,
    record: dict | None = None,
) -> np.ndarray:
    """Run the sampler; returns the final latent z_0.

    hook(z_t, t), when given, may return a replacement state that the
    denoiser sees instead of z_t; record, when given, is filled with a
    copy of the pre-hook state at every timestep.
    """
    target = guided_target(prompt, guidance)
    z = initial_noise(seed) if z_start is None else np.array(z_start, dtype=np.float64)
    if z.shape != (LATENT_CHANNELS, LATENT_SIZE, LATENT_SIZE):
        raise ConfigError(f"start latent has shape {z.shape}")
    for t, t_prev in plan_timesteps(steps):
        if record is not None:
            record[t] = z.copy()
        if hook is not None:
            z = np.asarray(hook(z, t), dtype=np.float64)
            if z.shape != (LATENT_CHANNELS, LATENT_SIZE, LATENT_SIZE):
                raise ConfigError(f"hook returned shape {z.shape} at t={t}")
        a, b = _step_coefficients(t, t_prev)
        z = a * z + b * target
    return z


def invert(
    z_final: np.ndarray,
    prompt: str,
    steps: int = 50,
    guidance: float = 7.5,
) -> np.ndarray:
    """Recover the starting noise that generate() would turn into z_final.

    Every sampler update is affine in the state with a nonzero slope, so
    running the recurrence backwards is exact up to rounding.
    """
    target = guided_target(prompt, guidance)
    z = np.array(z_final, dtype=np.float64)
    if z.shape != (LATENT_CHANNELS, LATENT_SIZE, LATENT_SIZE):
        raise ConfigError(f"final latent has shape {z.shape}")
    for t, t_prev in reversed(plan_timesteps(steps)):
        a, b = _step_coefficients(t, t_prev)
        z = (z - b * target) / a
    return z


def decode_image(z: np.ndarray) -> np.ndarray:
    """Latent (4, H, W) to float image (H, W, 3); not clipped."""
    channels = np.einsum("ck,khw->chw", _MIX, np.asarray(z, dtype=np.float64))
    return IMG_OFFSET + IMG_SCALE * np.moveaxis(channels, 0, -1)


def encode_image(image: np.ndarray) -> np.ndarray:
    """Exact inverse of decode_image on its range."""
    channels = np.moveaxis((np.asarray(image, dtype=np.float64) - IMG_OFFSET), -1, 0)
    return np.einsum("kc,chw->khw", _MIX.T, channels / IMG_SCALE)
