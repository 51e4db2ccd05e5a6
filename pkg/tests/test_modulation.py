import math

import numpy as np
import pytest

import freqmod as fm
from freqmod.errors import ConfigError, InvalidInputError
from freqmod.modulation import (
    FilterSpec,
    WeightParams,
    decay_factor,
    filter_hook,
    fuse_spectra,
    high_pass_intervention,
    modulated_trajectory,
    paired_sample,
    weight_field,
)

from conftest import random_field

T = 1000


def params(alpha=0.2, sigma=0.4, kind="gaussian"):
    return WeightParams(alpha=alpha, sigma=sigma, kind=kind, T=T)


# ---------------------------------------------------------------- decay


def test_decay_endpoints_and_midpoint():
    assert decay_factor(T, T) == 1.0
    assert decay_factor(0, T) == pytest.approx(math.exp(-1.0), abs=1e-12)
    assert decay_factor(T // 2, T) == pytest.approx(math.exp(-0.5), abs=1e-12)


# ---------------------------------------------------------------- weights


def test_gaussian_weight_is_one_at_center_full_strength():
    rmap = fm.radial_distance_map(8, 8)
    w = weight_field(rmap, T, params()).weights
    assert w[4, 4] == pytest.approx(1.0, abs=1e-15)


def test_gaussian_weight_at_corner_matches_scalar():
    rmap = fm.radial_distance_map(8, 8)
    w = weight_field(rmap, T, params()).weights
    expected = math.exp(-((1.0 / 0.2) ** 2) / (2.0 * 0.16))  # exp(-78.125)
    assert w[0, 0] == pytest.approx(expected, rel=1e-9)


def test_linear_weight_zero_at_cutoff():
    rmap = fm.radial_distance_map(8, 8)
    alpha = 0.5
    w = weight_field(rmap, T, params(alpha=alpha, kind="linear")).weights
    cutoff = alpha * rmap.d_max
    on_cutoff = np.isclose(rmap.distances, cutoff)
    if on_cutoff.any():
        np.testing.assert_allclose(w[on_cutoff], 0.0, atol=1e-15)
    assert np.all(w[rmap.distances >= cutoff] == 0.0)


def test_weight_scalar_oracle_twenty_points():
    # straight transcription of the two closed forms, checked at 1e-12
    rmap = fm.radial_distance_map(16, 16)
    d_max = rmap.d_max
    ds = [0.0, 0.07, 0.31, 0.55, 0.83]
    ts = [0, 250, 500, 1000]
    for kind in ("gaussian", "linear"):
        for t in ts:
            p = params(kind=kind)
            w = weight_field(rmap, t, p).weights
            decay = math.exp((t - T) / T)
            for frac in ds:
                d = frac * d_max
                idx = np.unravel_index(np.argmin(np.abs(rmap.distances - d)), w.shape)
                d_actual = rmap.distances[idx]
                if kind == "gaussian":
                    expected = decay * math.exp(
                        -((d_actual / (d_max * p.alpha)) ** 2) / (2.0 * p.sigma**2)
                    )
                else:
                    expected = decay * max(0.0, 1.0 - d_actual / (d_max * p.alpha))
                assert w[idx] == pytest.approx(expected, abs=1e-12), (kind, t, frac)


@pytest.mark.parametrize("kind", ["gaussian", "linear"])
def test_weights_bounded_and_radially_symmetric(kind):
    rmap = fm.radial_distance_map(12, 12)
    w = weight_field(rmap, 700, params(kind=kind)).weights
    assert np.all(w >= 0.0) and np.all(w <= 1.0)
    # equal radius -> equal weight
    flat_d = np.round(rmap.distances, 9).ravel()
    flat_w = w.ravel()
    for d in np.unique(flat_d):
        vals = flat_w[flat_d == d]
        assert np.max(vals) - np.min(vals) <= 1e-12


def test_gaussian_weight_monotone_in_alpha_sigma_t():
    rmap = fm.radial_distance_map(16, 16)
    interior = rmap.distances > 0
    for lo, hi in [(0.1, 0.2), (0.2, 0.4)]:
        w_lo = weight_field(rmap, 500, params(alpha=lo)).weights
        w_hi = weight_field(rmap, 500, params(alpha=hi)).weights
        assert np.all(w_hi[interior] > w_lo[interior])
    w_s1 = weight_field(rmap, 500, params(sigma=0.3)).weights
    w_s2 = weight_field(rmap, 500, params(sigma=0.5)).weights
    assert np.all(w_s2[interior] > w_s1[interior])
    w_t1 = weight_field(rmap, 200, params()).weights
    w_t2 = weight_field(rmap, 800, params()).weights
    assert np.all(w_t2 > w_t1)


def test_linear_weight_monotone_in_alpha_inside_cutoff():
    # outside both supports the weight is 0 == 0, so compare inside only
    rmap = fm.radial_distance_map(16, 16)
    lo, hi = 0.3, 0.6
    w_lo = weight_field(rmap, 500, params(alpha=lo, kind="linear")).weights
    w_hi = weight_field(rmap, 500, params(alpha=hi, kind="linear")).weights
    inside = (rmap.distances > 0) & (rmap.distances < lo * rmap.d_max)
    assert np.all(w_hi[inside] > w_lo[inside])
    assert np.all(w_hi >= w_lo)


def test_weight_params_validation():
    with pytest.raises(InvalidInputError):
        WeightParams(alpha=0.0, sigma=0.4, kind="gaussian", T=T)
    with pytest.raises(InvalidInputError):
        WeightParams(alpha=0.2, sigma=-1.0, kind="gaussian", T=T)
    with pytest.raises(InvalidInputError):
        WeightParams(alpha=0.2, sigma=0.4, kind="cubic", T=T)
    with pytest.raises(InvalidInputError):
        WeightParams(alpha=0.2, sigma=0.4, kind="gaussian", T=0)


# ---------------------------------------------------------------- fusion


def test_fuse_all_ones_returns_original_bitwise():
    a = fm.forward_transform(random_field(1))
    b = fm.forward_transform(random_field(2))
    ones = fm.modulation.WeightField(weights=np.ones((8, 8)), timestep=10)
    out = fuse_spectra(a, b, ones)
    assert out.coefficients.tobytes() == a.coefficients.tobytes()


def test_fuse_all_zeros_returns_reference_bitwise():
    a = fm.forward_transform(random_field(1))
    b = fm.forward_transform(random_field(2))
    zeros = fm.modulation.WeightField(weights=np.zeros((8, 8)), timestep=10)
    out = fuse_spectra(a, b, zeros)
    assert out.coefficients.tobytes() == b.coefficients.tobytes()


def test_fuse_equal_inputs_any_weights():
    a = fm.forward_transform(random_field(1))
    rmap = fm.radial_distance_map(8, 8)
    w = weight_field(rmap, 500, params())
    out = fuse_spectra(a, a, w)
    np.testing.assert_allclose(out.coefficients, a.coefficients, atol=1e-12)


# ---------------------------------------------------------------- modulate


def test_modulate_identical_inputs():
    z = random_field(3, 1, 16, 16)
    out = fm.modulate(z, z, 500, params())
    assert np.max(np.abs(out.values - z.values)) <= 1e-10


def test_modulate_huge_alpha_keeps_original():
    z1, z2 = random_field(4, 1, 16, 16), random_field(5, 1, 16, 16)
    out = fm.modulate(z1, z2, T, params(alpha=1e6))
    assert np.max(np.abs(out.values - z1.values)) <= 1e-6


def test_modulate_tiny_sigma_keeps_reference_high_band():
    z1, z2 = random_field(6, 1, 64, 64), random_field(7, 1, 64, 64)
    out = fm.modulate(z1, z2, T, params(sigma=1e-6))
    _, high = fm.band_distance(z2, out)
    assert high <= 1e-9


# ---------------------------------------------------------------- paired run


def test_paired_huge_alpha_tracks_original(cosine_1000, default_prior):
    cond_a = fm.make_condition("pl-layout", "pl-texture-a")
    cond_b = fm.make_condition("pl-layout", "pl-texture-b")
    p_big = params(alpha=1e6)
    for seed in (0, 1):
        ori, mod = paired_sample(
            cond_a, cond_b, default_prior, cosine_1000, 15, seed, p_big
        )
        base = fm.sample(cond_b, default_prior, cosine_1000, 15, seed)
        lo_m, hi_m = fm.band_distance(ori.final, mod.final)
        lo_b, hi_b = fm.band_distance(ori.final, base.final)
        assert lo_b / lo_m >= 10.0
        assert hi_b / hi_m >= 10.0


def test_paired_identical_conditions_reduces_to_plain_run(
    cosine_1000, default_prior
):
    cond = fm.make_condition("pl-layout", "pl-texture-a")
    for seed in (0, 3):
        ori, mod = paired_sample(
            cond, cond, default_prior, cosine_1000, 15, seed, params()
        )
        lo, _ = fm.band_distance(ori.final, mod.final)
        zero = fm.RealField(np.zeros_like(ori.final.values))
        lo_scale, _ = fm.band_distance(ori.final, zero)
        assert lo / lo_scale <= 1e-3


def test_paired_share_noise_flag_changes_reference_start(
    cosine_1000, default_prior
):
    cond_a = fm.make_condition("pl-layout", "pl-texture-a")
    cond_b = fm.make_condition("pl-layout", "pl-texture-b")
    _, shared = paired_sample(
        cond_a, cond_b, default_prior, cosine_1000, 15, 4, params(), True
    )
    _, fresh = paired_sample(
        cond_a, cond_b, default_prior, cosine_1000, 15, 4, params(), False
    )
    assert not np.array_equal(shared.final.values, fresh.final.values)


def test_modulated_trajectory_rejects_step_count_mismatch(
    cosine_1000, default_prior
):
    cond_a = fm.make_condition("pl-layout", "pl-texture-a")
    cond_b = fm.make_condition("pl-layout", "pl-texture-b")
    traj = fm.sample(cond_a, default_prior, cosine_1000, 15, 0)
    with pytest.raises(ConfigError):
        modulated_trajectory(
            traj, cond_b, default_prior, cosine_1000, 10, 0, params()
        )


def test_modulated_trajectory_rejects_horizon_mismatch(
    cosine_1000, default_prior
):
    cond_a = fm.make_condition("pl-layout", "pl-texture-a")
    cond_b = fm.make_condition("pl-layout", "pl-texture-b")
    traj = fm.sample(cond_a, default_prior, cosine_1000, 15, 0)
    bad = WeightParams(alpha=0.2, sigma=0.4, kind="gaussian", T=500)
    with pytest.raises(ConfigError):
        modulated_trajectory(traj, cond_b, default_prior, cosine_1000, 15, 0, bad)


# ---------------------------------------------------------------- high-pass


def test_hard_filter_smallest_cutoff_removes_channel_mean():
    z = random_field(8, 2, 16, 16)
    out = high_pass_intervention(z, FilterSpec(cutoff_fraction=0.01, shape="hard"))
    expected = z.values - z.values.mean(axis=(1, 2), keepdims=True)
    assert np.max(np.abs(out.values - expected)) <= 1e-12


def test_hard_filter_zeroes_constant_field():
    z = fm.RealField(np.full((1, 8, 8), 2.5))
    out = high_pass_intervention(z, FilterSpec(cutoff_fraction=0.3, shape="hard"))
    np.testing.assert_allclose(out.values, 0.0, atol=1e-12)


def test_hard_filter_energy_matches_bin_count():
    rmap = fm.radial_distance_map(64, 64)
    kept = float(np.mean(rmap.distances >= 0.15 * rmap.d_max))
    fracs = []
    for seed in range(10):
        z = random_field(seed, 1, 64, 64)
        out = high_pass_intervention(
            z, FilterSpec(cutoff_fraction=0.15, shape="hard")
        )
        fracs.append(float(np.sum(out.values**2) / np.sum(z.values**2)))
    assert abs(np.mean(fracs) - kept) <= 0.01


def test_gaussian_edge_filter_shape():
    z = random_field(9, 1, 32, 32)
    spec_in = fm.forward_transform(z).coefficients[0]
    out = high_pass_intervention(
        z, FilterSpec(cutoff_fraction=0.25, shape="gaussian-edge")
    )
    spec_out = fm.forward_transform(out).coefficients[0]
    rmap = fm.radial_distance_map(32, 32)
    scale = 0.25 * rmap.d_max
    expected = 1.0 - np.exp(-(rmap.distances**2) / (2.0 * scale**2))
    np.testing.assert_allclose(spec_out, expected * spec_in, atol=1e-9)


def test_filter_spec_validation():
    with pytest.raises(InvalidInputError):
        FilterSpec(cutoff_fraction=0.0)
    with pytest.raises(InvalidInputError):
        FilterSpec(cutoff_fraction=1.5)
    with pytest.raises(InvalidInputError):
        FilterSpec(cutoff_fraction=0.2, shape="box")
    with pytest.raises(InvalidInputError):
        FilterSpec(cutoff_fraction=0.2, active_steps=(3, 2))
    with pytest.raises(InvalidInputError):
        FilterSpec(cutoff_fraction=0.2, active_steps=(0, 2))


def test_filter_hook_respects_active_window():
    hook = filter_hook(FilterSpec(cutoff_fraction=0.2, active_steps=(2, 3)))
    z = random_field(10, 1, 16, 16)
    np.testing.assert_array_equal(hook(z, 1, 900).values, z.values)
    np.testing.assert_array_equal(hook(z, 4, 100).values, z.values)
    assert not np.array_equal(hook(z, 2, 600).values, z.values)
