"""Paired-generation runs that weave the modulator into the sampler.

run_paired_generation produces three arms from one configuration:

  original       the reference prompt, sampled normally
  refined_plain  the refined prompt, sampled normally
  refined_fmm    the refined prompt with every pre-denoiser state sent to
                 the modulator together with the original trajectory's
                 state at the same timestep, and the returned state
                 substituted before the denoiser runs

alpha == 0 means "no constraint": the modulated arm is the plain arm by
definition and no modulator process is involved.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import imaging, latentfile, pipeline
from .errors import ConfigError, ModulatorError
from .modulator import DEFAULT_COMMAND, SubprocessModulator

MODEL_ID = "toy-affine-v1"

METRIC_FIELDS = ["arm", "versus", "metric", "value"]

_LATENT_SHAPE = (pipeline.LATENT_CHANNELS, pipeline.LATENT_SIZE, pipeline.LATENT_SIZE)


@dataclass(frozen=True)
class BridgeConfig:
    prompt_original: str
    prompt_refined: str
    model_id: str = MODEL_ID
    steps: int = 50
    guidance: float = 7.5
    alpha: float = 0.2
    sigma: float = 0.4
    kind: str = "gaussian"
    seed: int = 0
    share_initial_noise: bool = True
    modulator_command: tuple[str, ...] = DEFAULT_COMMAND

    def __post_init__(self):
        if not isinstance(self.prompt_original, str) or not self.prompt_original:
            raise ConfigError("prompt_original must be a non-empty string")
        if not isinstance(self.prompt_refined, str) or not self.prompt_refined:
            raise ConfigError("prompt_refined must be a non-empty string")
        if self.model_id != MODEL_ID:
            raise ConfigError(
                f"unknown model {self.model_id!r} (only {MODEL_ID!r} is built in)"
            )
        if not isinstance(self.steps, int) or isinstance(self.steps, bool):
            raise ConfigError("steps must be an integer")
        if self.steps < 1:
            raise ConfigError(f"steps must be positive, got {self.steps}")
        if not np.isfinite(self.guidance):
            raise ConfigError("guidance must be finite")
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if not np.isfinite(self.sigma) or self.sigma <= 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if self.kind not in ("gaussian", "linear"):
            raise ConfigError(f"kind must be gaussian or linear, got {self.kind!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if not isinstance(self.share_initial_noise, bool):
            raise ConfigError("share_initial_noise must be a boolean")
        if not self.modulator_command or not all(
            isinstance(part, str) for part in self.modulator_command
        ):
            raise ConfigError("modulator_command must be a sequence of strings")
        object.__setattr__(self, "modulator_command", tuple(self.modulator_command))

    @classmethod
    def from_mapping(cls, data) -> "BridgeConfig":
        if not isinstance(data, dict):
            raise ConfigError(f"config must be an object, got {type(data).__name__}")
        known = {field.name for field in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = dict(data)
        if "modulator_command" in kwargs:
            command = kwargs["modulator_command"]
            if not isinstance(command, list):
                raise ConfigError("modulator_command must be an array of strings")
            kwargs["modulator_command"] = tuple(command)
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    def to_mapping(self) -> dict:
        data = dataclasses.asdict(self)
        data["modulator_command"] = list(self.modulator_command)
        return data


def _refined_seed(config: BridgeConfig) -> int:
    return config.seed if config.share_initial_noise else config.seed + 1


def _modulation_hook(config: BridgeConfig, modulator, reference_states: dict):
    def hook(z_ref: np.ndarray, t: int) -> np.ndarray:
        if t not in reference_states:
            raise ModulatorError(f"no reference state recorded for timestep {t}")
        try:
            out = modulator.modulate(
                reference_states[t],
                z_ref,
                t,
                pipeline.HORIZON,
                config.alpha,
                config.sigma,
                config.kind,
            )
        except ModulatorError as exc:
            raise ModulatorError(
                f"paired generation aborted at timestep {t}: {exc}"
            ) from exc
        out = np.asarray(out, dtype=np.float64)
        if out.shape != _LATENT_SHAPE:
            raise ModulatorError(
                f"modulator returned shape {out.shape} at timestep {t}, "
                f"expected {_LATENT_SHAPE}"
            )
        return out

    return hook


def _write_metrics(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=METRIC_FIELDS)
        writer.writeheader()
        writer.writerows(rows)


def _pair_rows(images: dict) -> list[dict]:
    rows = []
    for arm, versus in [
        ("refined_fmm", "original"),
        ("refined_plain", "original"),
        ("refined_fmm", "refined_plain"),
    ]:
        for metric, fn in [("ssim", imaging.ssim), ("psnr", imaging.psnr)]:
            value = fn(images[arm], images[versus])
            rows.append(
                {
                    "arm": arm,
                    "versus": versus,
                    "metric": metric,
                    "value": f"{value:.10g}",
                }
            )
    return rows


def run_paired_generation(
    config: BridgeConfig, out_dir, modulator=None
) -> dict:
    """Run all three arms and write PNGs, latents, and a metrics table.

    A modulator instance may be injected for testing; otherwise one is
    launched from config.modulator_command and shut down afterwards. The
    handshake runs before any sampling so a broken modulator aborts the
    run without wasted work.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    owns_modulator = False
    if config.alpha > 0 and modulator is None:
        modulator = SubprocessModulator(config.modulator_command)
        owns_modulator = True
    try:
        if config.alpha > 0:
            modulator.handshake(*_LATENT_SHAPE, pipeline.HORIZON)

        reference_states: dict = {}
        z_original = pipeline.generate(
            config.prompt_original,
            config.seed,
            config.steps,
            config.guidance,
            record=reference_states,
        )
        z_plain = pipeline.generate(
            config.prompt_refined,
            _refined_seed(config),
            config.steps,
            config.guidance,
        )
        if config.alpha > 0:
            z_fmm = pipeline.generate(
                config.prompt_refined,
                _refined_seed(config),
                config.steps,
                config.guidance,
                hook=_modulation_hook(config, modulator, reference_states),
            )
        else:
            z_fmm = z_plain.copy()
    finally:
        if owns_modulator:
            modulator.close()

    latents = {"original": z_original, "refined_plain": z_plain, "refined_fmm": z_fmm}
    images = {arm: pipeline.decode_image(z) for arm, z in latents.items()}
    for arm, z in latents.items():
        latentfile.write_latent(z, out_dir / f"{arm}.fmml")
        imaging.write_png(out_dir / f"{arm}.png", images[arm])
    rows = _pair_rows(images)
    _write_metrics(out_dir / "metrics.csv", rows)
    (out_dir / "config.json").write_text(
        json.dumps(config.to_mapping(), indent=2, sort_keys=True) + "\n"
    )

    metrics = {
        (row["arm"], row["versus"], row["metric"]): float(row["value"]) for row in rows
    }
    return {"out_dir": out_dir, "latents": latents, "images": images, "metrics": metrics}


def run_inversion_edit(
    config: BridgeConfig, out_dir, image: np.ndarray | None = None, modulator=None
) -> dict:
    """Invert an image to starting noise, then reconstruct and re-prompt.

    The input image defaults to a fresh render of the original prompt.
    Reconstruction reruns the sampler from the recovered noise with the
    original prompt; the edited arm reruns it with the refined prompt,
    modulated against the reconstruction trajectory when alpha > 0.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if image is None:
        z_input = pipeline.generate(
            config.prompt_original, config.seed, config.steps, config.guidance
        )
        image = pipeline.decode_image(z_input)
    image = np.asarray(image, dtype=np.float64)

    z_final = pipeline.encode_image(image)
    z_start = pipeline.invert(
        z_final, config.prompt_original, config.steps, config.guidance
    )

    owns_modulator = False
    if config.alpha > 0 and modulator is None:
        modulator = SubprocessModulator(config.modulator_command)
        owns_modulator = True
    try:
        if config.alpha > 0:
            modulator.handshake(*_LATENT_SHAPE, pipeline.HORIZON)
        reference_states: dict = {}
        z_recon = pipeline.generate(
            config.prompt_original,
            config.seed,
            config.steps,
            config.guidance,
            z_start=z_start,
            record=reference_states,
        )
        if config.alpha > 0:
            hook = _modulation_hook(config, modulator, reference_states)
        else:
            hook = None
        z_edit = pipeline.generate(
            config.prompt_refined,
            config.seed,
            config.steps,
            config.guidance,
            z_start=z_start,
            hook=hook,
        )
    finally:
        if owns_modulator:
            modulator.close()

    recon = pipeline.decode_image(z_recon)
    edited = pipeline.decode_image(z_edit)
    imaging.write_png(out_dir / "input.png", image)
    imaging.write_png(out_dir / "reconstruction.png", recon)
    imaging.write_png(out_dir / "edited.png", edited)
    latentfile.write_latent(z_recon, out_dir / "reconstruction.fmml")
    latentfile.write_latent(z_edit, out_dir / "edited.fmml")

    metrics = {
        "ssim_reconstruction_vs_input": imaging.ssim(recon, image),
        "ssim_edited_vs_input": imaging.ssim(edited, image),
    }
    rows = [
        {"arm": "reconstruction", "versus": "input", "metric": "ssim",
         "value": f"{metrics['ssim_reconstruction_vs_input']:.10g}"},
        {"arm": "edited", "versus": "input", "metric": "ssim",
         "value": f"{metrics['ssim_edited_vs_input']:.10g}"},
    ]
    _write_metrics(out_dir / "metrics.csv", rows)
    return {"out_dir": out_dir, "metrics": metrics}


DEMO_PAIRS = [
    ("a misty pine forest at dawn", "a misty pine forest at dawn, detailed bark"),
    ("a harbor town at dusk", "a harbor town at dusk, crisp rigging lines"),
    ("a desert canyon under stars", "a desert canyon under stars, sharp strata"),
    ("a snowy mountain cabin", "a snowy mountain cabin, textured shingles"),
    ("a rainy city street at night", "a rainy city street at night, neon grain"),
    ("a meadow with wildflowers", "a meadow with wildflowers, fine petal detail"),
    ("an old library interior", "an old library interior, engraved spines"),
    ("a lighthouse on a cliff", "a lighthouse on a cliff, weathered brick"),
    ("a koi pond in autumn", "a koi pond in autumn, rippled reflections"),
    ("a windmill on rolling hills", "a windmill on rolling hills, woven sails"),
]

REPORT_FIELDS = [
    "pair",
    "prompt_original",
    "prompt_refined",
    "ssim_fmm_vs_original",
    "ssim_plain_vs_original",
    "fmm_closer",
]


def directional_report(
    out_dir,
    pairs=DEMO_PAIRS,
    alpha: float = 0.2,
    sigma: float = 0.4,
    kind: str = "gaussian",
    steps: int = 50,
    guidance: float = 7.5,
    seed: int = 0,
    modulator_command=DEFAULT_COMMAND,
) -> dict:
    """Check, pair by pair, whether modulation pulls outputs toward the
    original. Written as a report, not a gate: the summary counts how
    many pairs moved the right way and leaves judgement to the reader.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    closer = 0
    with SubprocessModulator(modulator_command) as modulator:
        modulator.handshake(*_LATENT_SHAPE, pipeline.HORIZON)
        for index, (prompt_original, prompt_refined) in enumerate(pairs):
            config = BridgeConfig(
                prompt_original=prompt_original,
                prompt_refined=prompt_refined,
                steps=steps,
                guidance=guidance,
                alpha=alpha,
                sigma=sigma,
                kind=kind,
                seed=seed + index,
                modulator_command=tuple(modulator_command),
            )
            result = run_paired_generation(
                config, out_dir / f"pair_{index:02d}", modulator=modulator
            )
            fmm = result["metrics"][("refined_fmm", "original", "ssim")]
            plain = result["metrics"][("refined_plain", "original", "ssim")]
            closer += int(fmm > plain)
            rows.append(
                {
                    "pair": str(index),
                    "prompt_original": prompt_original,
                    "prompt_refined": prompt_refined,
                    "ssim_fmm_vs_original": f"{fmm:.10g}",
                    "ssim_plain_vs_original": f"{plain:.10g}",
                    "fmm_closer": str(int(fmm > plain)),
                }
            )
    with open(out_dir / "report.csv", "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=REPORT_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    return {"pairs": len(rows), "fmm_closer": closer, "rows": rows}
