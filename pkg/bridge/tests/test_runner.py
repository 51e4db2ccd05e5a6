import csv
import json

import numpy as np
import pytest

from sdbridge import (
    BridgeConfig,
    IdentityModulator,
    ModulatorError,
    run_inversion_edit,
    run_paired_generation,
)
from sdbridge.errors import ConfigError
from sdbridge.latentfile import read_latent
from sdbridge.runner import METRIC_FIELDS

ORIGINAL = "a harbor town at dusk"
REFINED = "a misty pine forest at dawn"


def config(**overrides):
    base = dict(prompt_original=ORIGINAL, prompt_refined=REFINED, steps=50)
    base.update(overrides)
    return BridgeConfig(**base)


class SpyModulator(IdentityModulator):
    def __init__(self):
        self.calls = []

    def modulate(self, z_ori, z_ref, t, horizon, alpha, sigma, kind):
        self.calls.append((t, horizon, alpha, sigma, kind))
        return super().modulate(z_ori, z_ref, t, horizon, alpha, sigma, kind)


class WrongShapeModulator(IdentityModulator):
    def modulate(self, z_ori, z_ref, t, horizon, alpha, sigma, kind):
        return np.zeros((1, 8, 8))


class DyingModulator(IdentityModulator):
    def __init__(self, fail_at):
        self.fail_at = fail_at

    def modulate(self, z_ori, z_ref, t, horizon, alpha, sigma, kind):
        if t <= self.fail_at:
            raise ModulatorError("child went away")
        return z_ref


@pytest.mark.parametrize(
    "overrides,pattern",
    [
        (dict(prompt_original=""), "prompt_original"),
        (dict(prompt_refined=""), "prompt_refined"),
        (dict(model_id="sd-unknown"), "unknown model"),
        (dict(steps=0), "steps"),
        (dict(steps=True), "steps"),
        (dict(guidance=float("nan")), "guidance"),
        (dict(alpha=-0.1), "alpha"),
        (dict(sigma=0.0), "sigma"),
        (dict(kind="boxcar"), "kind"),
        (dict(seed=-1), "seed"),
        (dict(share_initial_noise=1), "share_initial_noise"),
        (dict(modulator_command=()), "modulator_command"),
    ],
)
def test_config_validation(overrides, pattern):
    with pytest.raises(ConfigError, match=pattern):
        config(**overrides)


def test_config_mapping_round_trip():
    cfg = config(alpha=0.25, kind="linear", seed=9)
    assert BridgeConfig.from_mapping(cfg.to_mapping()) == cfg


def test_config_rejects_unknown_keys():
    data = config().to_mapping()
    data["strength"] = 1.0
    with pytest.raises(ConfigError, match="strength"):
        BridgeConfig.from_mapping(data)


def test_identity_stub_leaves_generation_untouched(tmp_path):
    """Wiring the pass-through stub into the loop must be a no-op."""
    result = run_paired_generation(config(), tmp_path, modulator=IdentityModulator())
    assert np.array_equal(
        result["latents"]["refined_fmm"], result["latents"]["refined_plain"]
    )
    fmm_png = (tmp_path / "refined_fmm.png").read_bytes()
    plain_png = (tmp_path / "refined_plain.png").read_bytes()
    assert fmm_png == plain_png


def test_alpha_zero_skips_the_modulator_entirely(tmp_path):
    """No constraint means plain regeneration; nothing is launched."""
    cfg = config(alpha=0.0, modulator_command=("/nonexistent/modulator-binary",))
    result = run_paired_generation(cfg, tmp_path)
    assert np.array_equal(
        result["latents"]["refined_fmm"], result["latents"]["refined_plain"]
    )


def test_modulator_sees_every_timestep_in_order(tmp_path):
    spy = SpyModulator()
    cfg = config(steps=10, alpha=0.3, sigma=0.5, kind="linear")
    run_paired_generation(cfg, tmp_path, modulator=spy)
    ts = [call[0] for call in spy.calls]
    assert ts == sorted(ts, reverse=True)
    assert len(ts) == 10
    assert ts[0] == 1000 and ts[-1] == 100
    assert all(call[1:] == (1000, 0.3, 0.5, "linear") for call in spy.calls)


def test_artifacts_are_complete_and_consistent(tmp_path):
    result = run_paired_generation(config(steps=10), tmp_path, modulator=IdentityModulator())
    for arm in ("original", "refined_plain", "refined_fmm"):
        assert (tmp_path / f"{arm}.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
        stored = read_latent(tmp_path / f"{arm}.fmml")
        assert np.array_equal(stored, result["latents"][arm].astype(np.float32))
    with open(tmp_path / "metrics.csv", newline="") as handle:
        rows = list(csv.DictReader(handle))
    assert sorted(rows[0]) == sorted(METRIC_FIELDS)
    assert len(rows) == 6
    for row in rows:
        key = (row["arm"], row["versus"], row["metric"])
        assert result["metrics"][key] == pytest.approx(float(row["value"]))
    stored_cfg = json.loads((tmp_path / "config.json").read_text())
    assert stored_cfg == config(steps=10).to_mapping()


def test_wrong_shape_from_modulator_aborts(tmp_path):
    with pytest.raises(ModulatorError, match="shape"):
        run_paired_generation(config(steps=5), tmp_path, modulator=WrongShapeModulator())


def test_mid_run_modulator_failure_names_the_timestep(tmp_path):
    with pytest.raises(ModulatorError, match="timestep 600"):
        run_paired_generation(
            config(steps=10), tmp_path, modulator=DyingModulator(fail_at=600)
        )


def test_identical_prompts_with_shared_noise_stay_close(tmp_path):
    cfg = config(prompt_refined=ORIGINAL)
    result = run_paired_generation(cfg, tmp_path)
    assert result["metrics"][("refined_fmm", "refined_plain", "ssim")] >= 0.95


def test_huge_alpha_pulls_output_onto_the_original(tmp_path):
    result = run_paired_generation(config(alpha=1e6), tmp_path)
    assert result["metrics"][("refined_fmm", "original", "ssim")] >= 0.9
    assert result["metrics"][("refined_fmm", "original", "ssim")] > (
        result["metrics"][("refined_plain", "original", "ssim")]
    )


def test_working_point_moves_output_toward_the_original(tmp_path):
    result = run_paired_generation(config(), tmp_path)
    fmm = result["metrics"][("refined_fmm", "original", "ssim")]
    plain = result["metrics"][("refined_plain", "original", "ssim")]
    assert fmm > plain


def test_injected_modulator_survives_multiple_runs(tmp_path):
    spy = SpyModulator()
    run_paired_generation(config(steps=5), tmp_path / "a", modulator=spy)
    run_paired_generation(config(steps=5), tmp_path / "b", modulator=spy)
    assert len(spy.calls) == 10


def test_inversion_edit_reconstructs_the_input(tmp_path):
    result = run_inversion_edit(config(), tmp_path)
    assert result["metrics"]["ssim_reconstruction_vs_input"] >= 0.8
    for name in ("input.png", "reconstruction.png", "edited.png"):
        assert (tmp_path / name).exists()
    with open(tmp_path / "metrics.csv", newline="") as handle:
        assert len(list(csv.DictReader(handle))) == 2


def test_inversion_edit_without_modulation(tmp_path):
    result = run_inversion_edit(config(alpha=0.0), tmp_path)
    assert result["metrics"]["ssim_reconstruction_vs_input"] >= 0.8
