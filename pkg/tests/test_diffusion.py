import numpy as np
import pytest

import freqmod as fm
from freqmod.diffusion import wiener_gain
from freqmod.errors import (
    HookContractError,
    InvalidInputError,
    InvalidScheduleError,
    InvalidStepOrderError,
    InvalidTimestepError,
    UndefinedSnrError,
)
from freqmod.spectral import annulus_average

from conftest import random_field


# ---------------------------------------------------------------- schedules


@pytest.mark.parametrize("kind", ["linear-beta", "cosine"])
def test_schedule_starts_noiseless(kind):
    sched = fm.build_schedule(kind, 100)
    assert sched.at(0) == 1.0


def test_linear_beta_first_step_value():
    sched = fm.build_schedule("linear-beta", 1000)
    assert sched.at(1) == pytest.approx(0.9999, abs=1e-12)


@pytest.mark.parametrize("kind,timesteps", [("linear-beta", 1000), ("cosine", 50)])
def test_schedule_strictly_decreasing(kind, timesteps):
    sched = fm.build_schedule(kind, timesteps)
    bars = np.array([sched.at(t) for t in range(timesteps + 1)])
    assert np.all(np.diff(bars) < 0.0)
    assert bars[-1] < 0.05
    assert np.all(bars > 0.0)


def test_schedule_rejects_unknown_kind():
    with pytest.raises(InvalidScheduleError):
        fm.build_schedule("quadratic", 100)


def test_schedule_validation_rejects_bad_arrays():
    with pytest.raises(InvalidScheduleError):
        fm.NoiseSchedule(kind="cosine", timesteps=2, alpha_bar=np.array([0.9, 0.5, 0.01]))
    with pytest.raises(InvalidScheduleError):
        fm.NoiseSchedule(
            kind="cosine", timesteps=3, alpha_bar=np.array([1.0, 0.5, 0.6, 0.01])
        )
    with pytest.raises(InvalidScheduleError):
        fm.NoiseSchedule(kind="cosine", timesteps=2, alpha_bar=np.array([1.0, 0.5, 0.2]))


def test_schedule_at_rejects_out_of_range():
    sched = fm.build_schedule("cosine", 50)
    with pytest.raises(InvalidTimestepError):
        sched.at(51)
    with pytest.raises(InvalidTimestepError):
        sched.at(-1)


# ---------------------------------------------------------------- forward


def test_forward_diffuse_at_zero_returns_input():
    z0 = random_field(0)
    eps = random_field(1)
    sched = fm.build_schedule("cosine", 50)
    out = fm.forward_diffuse(z0, 0, eps, sched)
    np.testing.assert_array_equal(out.values, z0.values)


def test_forward_diffuse_synthetic_quarter():
    sched = fm.NoiseSchedule(kind="cosine", timesteps=2, alpha_bar=np.array([1.0, 0.25, 0.04]))
    z0 = fm.RealField(np.full((1, 4, 4), 2.0))
    eps = fm.RealField(np.zeros((1, 4, 4)))
    out = fm.forward_diffuse(z0, 1, eps, sched)
    np.testing.assert_allclose(out.values, 1.0, atol=1e-12)


def test_forward_diffuse_spectrum_identity():
    sched = fm.build_schedule("cosine", 100)
    z0, eps = random_field(4, 1, 16, 16), random_field(5, 1, 16, 16)
    t = 37
    lhs = fm.forward_transform(fm.forward_diffuse(z0, t, eps, sched)).coefficients
    ab = sched.at(t)
    rhs = (
        np.sqrt(ab) * fm.forward_transform(z0).coefficients
        + np.sqrt(1.0 - ab) * fm.forward_transform(eps).coefficients
    )
    assert np.max(np.abs(lhs - rhs)) <= 1e-9


# ---------------------------------------------------------------- prior draws


def test_zero_amplitude_prior_returns_mean_field():
    prior = fm.PowerLawPrior(beta=2.0, amplitude=0.0)
    cond = fm.make_condition("zero-layout", "zero-texture")
    out = fm.synthesize_prior_sample(prior, cond, 9)
    np.testing.assert_array_equal(out.values, cond.mean_field.values)


def test_prior_sample_deterministic(default_prior):
    cond = fm.make_condition("det-layout", "det-texture")
    a = fm.synthesize_prior_sample(default_prior, cond, 123)
    b = fm.synthesize_prior_sample(default_prior, cond, 123)
    np.testing.assert_array_equal(a.values, b.values)


def test_prior_sample_spectrum_slope(default_prior):
    # slope of the fluctuation PSD recovers the synthesis exponent
    cond = fm.make_condition("psd-layout", "psd-texture")
    rmap = fm.radial_distance_map(64, 64)
    acc = np.zeros((64, 64))
    for seed in range(64):
        field = fm.synthesize_prior_sample(default_prior, cond, seed)
        fluct = fm.RealField(field.values - cond.mean_field.values)
        acc += np.mean(np.abs(fm.forward_transform(fluct).coefficients) ** 2, axis=0)
    centers, power, counts = annulus_average(acc / 64, rmap, 24)
    profile = fm.PsdProfile(
        bin_centers=centers, mean_power=power, sample_count=counts, d_max=rmap.d_max
    )
    assert -2.15 <= fm.psd_slope(profile, 0.1, 0.7) <= -1.85


# ---------------------------------------------------------------- snr


def test_theoretical_snr_power_law_ratio(cosine_1000, default_prior):
    lo = fm.theoretical_snr(3.0, 400, default_prior, cosine_1000, 4096.0)
    hi = fm.theoretical_snr(6.0, 400, default_prior, cosine_1000, 4096.0)
    assert hi / lo == pytest.approx(0.25, rel=1e-12)


def test_theoretical_snr_unit_point():
    sched = fm.NoiseSchedule(kind="cosine", timesteps=2, alpha_bar=np.array([1.0, 0.5, 0.04]))
    prior = fm.PowerLawPrior(beta=2.0, amplitude=1.0)
    assert fm.theoretical_snr(1.0, 1, prior, sched, 1.0) == pytest.approx(1.0)


def test_theoretical_snr_monotone_in_t(cosine_1000, default_prior):
    values = [
        fm.theoretical_snr(4.0, t, default_prior, cosine_1000, 4096.0)
        for t in range(1, 1001)
    ]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_theoretical_snr_undefined_at_zero(cosine_1000, default_prior):
    with pytest.raises(UndefinedSnrError):
        fm.theoretical_snr(4.0, 0, default_prior, cosine_1000, 4096.0)


def test_empirical_snr_matches_theory_mid_band(cosine_1000, default_prior):
    cond = fm.make_condition("snr-layout", "snr-texture", height=32, width=32)
    rmap = fm.radial_distance_map(32, 32)
    est = fm.empirical_snr(
        default_prior, cond, cosine_1000, 500, num_samples=4096, num_bins=12, seed=0
    )
    vmap = default_prior.variance_map(rmap)
    centers, vbar, counts = annulus_average(vmap, rmap, 12)
    ab = cosine_1000.at(500)
    theo = (ab / (1.0 - ab)) * vbar / (32 * 32)
    mid = (counts > 0) & (centers >= 0.1 * rmap.d_max) & (centers <= 0.7 * rmap.d_max)
    rel = np.abs(est.ratio[mid] - theo[mid]) / theo[mid]
    assert np.max(rel) < 0.10


def test_empirical_snr_noise_free_limit(default_prior):
    sched = fm.build_schedule("linear-beta", 1000)
    cond = fm.make_condition("snr-layout", "snr-texture", height=32, width=32)
    est = fm.empirical_snr(
        default_prior, cond, sched, 1, num_samples=256, num_bins=8, seed=3
    )
    populated = est.signal.sample_count > 0
    assert np.min(est.ratio[populated]) > 1e4


def test_empirical_snr_signal_slope(cosine_1000, default_prior):
    cond = fm.make_condition("snr-layout", "snr-texture", height=32, width=32)
    est = fm.empirical_snr(
        default_prior, cond, cosine_1000, 500, num_samples=2048, num_bins=16, seed=5
    )
    assert fm.psd_slope(est.signal, 0.1, 0.7) == pytest.approx(-2.0, abs=0.3)


# ---------------------------------------------------------------- denoiser


def test_wiener_noiseless_mean_is_fixed_point(cosine_1000, default_prior):
    cond = fm.make_condition("fix-layout", "fix-texture")
    mu = cond.mean_field
    for t in (100, 900):
        zt = fm.RealField(np.sqrt(cosine_1000.at(t)) * mu.values)
        z0_hat, _ = fm.wiener_denoise(zt, t, cond, default_prior, cosine_1000)
        scale = np.max(np.abs(mu.values))
        assert np.max(np.abs(z0_hat.values - mu.values)) <= 1e-10 * scale


def test_wiener_matches_dense_joint_gaussian_1d():
    """Dense-covariance oracle on a 4-bin circulant prior.

    Real stationary signal of length 4 with per-coefficient spectral
    variances v_k has spatial covariance C0 = F^H diag(v) F / N^2. The
    posterior mean of z0 given z_t = sqrt(ab) z0 + sqrt(1-ab) eps comes from
    one dense solve, and must match the per-bin gain formula.
    """
    N = 4
    F = np.fft.fft(np.eye(N))
    v = np.array([9.0, 4.0, 1.0, 4.0])  # symmetric: v[k] == v[-k]
    C0 = np.real(F.conj().T @ np.diag(v) @ F) / N**2
    sched = fm.build_schedule("cosine", 1000)
    rng = np.random.default_rng(0)
    for t in (100, 500, 900):
        ab = sched.at(t)
        zt = rng.standard_normal(N)
        cov_zt = ab * C0 + (1.0 - ab) * np.eye(N)
        dense = np.sqrt(ab) * C0 @ np.linalg.solve(cov_zt, zt)
        gains = wiener_gain(v, ab, float(N))
        freq = np.real(np.fft.ifft(gains * np.fft.fft(zt)))
        assert np.max(np.abs(dense - freq)) <= 1e-8


def test_wiener_reconstruction_identity(cosine_1000, default_prior):
    cond = fm.make_condition("rec-layout", "rec-texture")
    zt = random_field(31, 1, 64, 64)
    for t in (50, 500, 950):
        z0_hat, eps_hat = fm.wiener_denoise(zt, t, cond, default_prior, cosine_1000)
        ab = cosine_1000.at(t)
        recon = np.sqrt(ab) * z0_hat.values + np.sqrt(1.0 - ab) * eps_hat.values
        assert np.max(np.abs(recon - zt.values)) <= 1e-12 * np.max(np.abs(zt.values))


# ---------------------------------------------------------------- ddim


def test_ddim_final_step_returns_estimate(cosine_1000):
    zt = random_field(7)
    eps_hat = random_field(9)
    out = fm.ddim_step(zt, 100, 0, eps_hat, cosine_1000)
    ab = cosine_1000.at(100)
    z0_hat = (zt.values - np.sqrt(1.0 - ab) * eps_hat.values) / np.sqrt(ab)
    np.testing.assert_allclose(out.values, z0_hat, rtol=1e-12, atol=1e-12)


def test_ddim_zero_noise_rescales(cosine_1000):
    zt = random_field(7)
    t, t_prev = 600, 400
    eps_hat = fm.RealField(np.zeros_like(zt.values))
    out = fm.ddim_step(zt, t, t_prev, eps_hat, cosine_1000)
    expected = np.sqrt(cosine_1000.at(t_prev) / cosine_1000.at(t)) * zt.values
    np.testing.assert_allclose(out.values, expected, rtol=1e-12)


def test_ddim_rejects_backward_steps(cosine_1000):
    zt = random_field(7)
    with pytest.raises(InvalidStepOrderError):
        fm.ddim_step(zt, 100, 100, zt, cosine_1000)


def _exact_fluctuation_power(prior, sched, height, width, num_steps):
    """Closed-form per-bin output power of the deterministic sampler.

    Every spectral bin evolves independently and linearly, so the whole run
    reduces to one scalar gain per bin applied to the initial white noise.
    """
    rmap = fm.radial_distance_map(height, width)
    vmap = prior.variance_map(rmap)
    noise_power = float(height * width)
    grid = fm.generation_timesteps(sched.T, num_steps)
    z = np.ones_like(vmap)
    for i in range(num_steps):
        a, ap = sched.at(int(grid[i])), sched.at(int(grid[i + 1]))
        g = np.sqrt(a) * vmap / (a * vmap + (1.0 - a) * noise_power)
        z0 = g * z
        eps = (z - np.sqrt(a) * z0) / np.sqrt(1.0 - a)
        z = np.sqrt(ap) * z0 + np.sqrt(1.0 - ap) * eps
    return z * z * noise_power


def _measured_fluctuation_power(prior, cond, sched, num_steps, num_seeds):
    _, height, width = cond.shape
    acc = np.zeros((height, width))
    for seed in range(num_seeds):
        out = fm.sample(cond, prior, sched, num_steps, seed).final
        fluct = fm.RealField(out.values - cond.mean_field.values)
        acc += np.mean(np.abs(fm.forward_transform(fluct).coefficients) ** 2, axis=0)
    return acc / num_seeds


def test_ddim_fifteen_step_profile_matches_linear_analysis(
    cosine_1000, default_prior
):
    cond = fm.make_condition("ddim-layout", "ddim-texture", height=32, width=32)
    rmap = fm.radial_distance_map(32, 32)
    predicted = _exact_fluctuation_power(default_prior, cosine_1000, 32, 32, 15)
    measured = _measured_fluctuation_power(default_prior, cond, cosine_1000, 15, 200)
    _, pred_bar, counts = annulus_average(predicted, rmap, 12)
    _, meas_bar, _ = annulus_average(measured, rmap, 12)
    populated = counts > 0
    rel = np.abs(meas_bar[populated] - pred_bar[populated]) / pred_bar[populated]
    assert np.max(rel) < 0.10


def test_ddim_spectrum_converges_to_prior_with_more_steps(cosine_1000):
    # 100 steps bring every annulus inside the 15% band for a mild prior;
    # the deficit also shrinks monotonically from the 15-step run
    prior = fm.PowerLawPrior(beta=2.0, amplitude=1e4, dc_variance=1.0)
    cond = fm.make_condition("cv-layout", "cv-texture", height=32, width=32)
    rmap = fm.radial_distance_map(32, 32)
    _, vbar, counts = annulus_average(prior.variance_map(rmap), rmap, 12)
    populated = counts > 0

    measured = _measured_fluctuation_power(prior, cond, cosine_1000, 100, 200)
    _, mbar, _ = annulus_average(measured, rmap, 12)
    rel_100 = np.abs(mbar[populated] - vbar[populated]) / vbar[populated]
    assert np.max(rel_100) < 0.15

    coarse = _exact_fluctuation_power(prior, cosine_1000, 32, 32, 15)
    fine = _exact_fluctuation_power(prior, cosine_1000, 32, 32, 100)
    _, cbar, _ = annulus_average(coarse, rmap, 12)
    _, fbar, _ = annulus_average(fine, rmap, 12)
    assert np.all(
        np.abs(fbar[populated] / vbar[populated] - 1.0)
        < np.abs(cbar[populated] / vbar[populated] - 1.0)
    )


@pytest.mark.xfail(
    strict=True,
    reason=(
        "a deterministic 15-step sampler contracts per-bin fluctuation power "
        "by at least cos(pi/30)^30 ~ 0.848, so a 15% match to the prior "
        "profile is unreachable at this step count for any schedule"
    ),
)
def test_ddim_fifteen_step_output_power_within_15pct(cosine_1000, default_prior):
    cond = fm.make_condition("ddim-layout", "ddim-texture", height=32, width=32)
    rmap = fm.radial_distance_map(32, 32)
    _, vbar, counts = annulus_average(default_prior.variance_map(rmap), rmap, 12)
    measured = _measured_fluctuation_power(default_prior, cond, cosine_1000, 15, 200)
    _, mbar, _ = annulus_average(measured, rmap, 12)
    populated = counts > 0
    rel = np.abs(mbar[populated] - vbar[populated]) / vbar[populated]
    assert np.max(rel) <= 0.15


# ---------------------------------------------------------------- sampling


def test_sample_deterministic(cosine_1000, default_prior):
    cond = fm.make_condition("s-layout", "s-texture")
    a = fm.sample(cond, default_prior, cosine_1000, 15, 42)
    b = fm.sample(cond, default_prior, cosine_1000, 15, 42)
    np.testing.assert_array_equal(a.final.values, b.final.values)
    assert [s.timestep for s in a.steps] == [s.timestep for s in b.steps]


def test_identity_hook_is_invisible(cosine_1000, default_prior):
    cond = fm.make_condition("s-layout", "s-texture")
    plain = fm.sample(cond, default_prior, cosine_1000, 15, 7)
    hooked = fm.sample(
        cond, default_prior, cosine_1000, 15, 7, hooks=(lambda z, i, t: z,)
    )
    np.testing.assert_array_equal(plain.final.values, hooked.final.values)


def test_hook_contract_violations(cosine_1000, default_prior):
    cond = fm.make_condition("s-layout", "s-texture")
    with pytest.raises(HookContractError):
        fm.sample(
            cond, default_prior, cosine_1000, 5, 0, hooks=(lambda z, i, t: None,)
        )
    with pytest.raises(HookContractError):
        fm.sample(
            cond,
            default_prior,
            cosine_1000,
            5,
            0,
            hooks=(lambda z, i, t: fm.RealField(z.values[:, :4, :4]),),
        )


def test_trajectory_timesteps_strictly_decreasing(cosine_1000, default_prior):
    cond = fm.make_condition("s-layout", "s-texture")
    traj = fm.sample(cond, default_prior, cosine_1000, 15, 0)
    ts = [s.timestep for s in traj.steps]
    assert ts[0] == 1000 and len(ts) == 15
    assert all(a > b for a, b in zip(ts, ts[1:]))


def test_shared_layout_gives_closer_low_band(cosine_1000, default_prior):
    cond_a = fm.make_condition("shared-layout", "texture-a")
    cond_b = fm.make_condition("shared-layout", "texture-b")
    lows, highs = [], []
    for seed in range(10):
        fa = fm.sample(cond_a, default_prior, cosine_1000, 15, seed).final
        fb = fm.sample(cond_b, default_prior, cosine_1000, 15, seed).final
        lo, hi = fm.band_distance(fa, fb)
        lows.append(lo)
        highs.append(hi)
    assert np.mean(lows) < np.mean(highs)


def test_generation_grid_endpoints(cosine_1000):
    grid = fm.generation_timesteps(1000, 15)
    assert grid[0] == 1000 and grid[-1] == 0 and len(grid) == 16
    assert all(a > b for a, b in zip(grid, grid[1:]))


def test_condition_band_energy_validated():
    broadband = fm.RealField(np.random.default_rng(0).standard_normal((1, 16, 16)))
    with pytest.raises(InvalidInputError):
        fm.ConditionSpec(
            layout_id="x",
            texture_id="y",
            mean_field=broadband,
            layout_field=broadband,
            texture_field=broadband,
        )
