"""Strict JSON run configuration.

A config file is a single JSON object. Unknown keys anywhere in the tree are
hard errors, so typos fail loudly instead of silently falling back to
defaults. Loading resolves every default, and the resolved form has a
canonical serialization (sorted keys, compact separators) whose SHA-256
prefix stamps every report row; rerunning a command from the same resolved
config therefore reproduces identical output bytes.

Schema (defaults in parentheses; sections marked [exp] are only required by
the experiments that use them):

    experiment      one of analyze-snr | hipass-ablation | fmm-run |
                    sweep | compare-weighting
    output_dir      directory for CSV/SVG/latent artifacts
    schedule        {"kind": "linear-beta" | "cosine", "timesteps": int}
    grid            {"channels" (1), "height" (64), "width" (64)}
    prior           {"beta": float, "amplitude": float,
                     "dc_variance": float (omitted -> power-law floor)}
    seeds           {"count": int, "start": int (0)}, {"list": [int, ...]},
                    or a bare array of ints (the resolved form)
    num_steps       sampling steps (15)
    conditions      [fmm] {"original": {"layout": str, "texture": str},
                           "refined": {...}}
    weights         [fmm] {"alpha" (0.2), "sigma" (0.4),
                           "kind" ("gaussian")}
    filter          [hipass] {"cutoff_fraction" (0.15),
                              "shape" ("hard")}
    sweep           [sweep] {"parameter": "alpha" | "sigma",
                             "values": [float x >= 3]}
    snr             [analyze-snr] {"timesteps": [int x >= 3],
                                   "num_samples" (4096), "num_bins" (24)}
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .diffusion import (
    ConditionSpec,
    NoiseSchedule,
    PowerLawPrior,
    build_schedule,
    make_condition,
)
from .errors import ConfigError
from .modulation import FilterSpec, WeightParams

EXPERIMENTS = (
    "analyze-snr",
    "hipass-ablation",
    "fmm-run",
    "sweep",
    "compare-weighting",
)

CONFIG_HASH_CHARS = 16

_TOP_KEYS = {
    "experiment",
    "output_dir",
    "schedule",
    "grid",
    "prior",
    "seeds",
    "num_steps",
    "conditions",
    "weights",
    "filter",
    "sweep",
    "snr",
}

_REQUIRED_SECTIONS = {
    "analyze-snr": ("snr",),
    "hipass-ablation": ("conditions", "filter"),
    "fmm-run": ("conditions", "weights"),
    "sweep": ("conditions", "weights", "sweep"),
    "compare-weighting": ("conditions", "weights"),
}


def _require_mapping(value, context: str) -> dict:
    if value is None:
        raise ConfigError(f"missing required section {context!r}")
    if not isinstance(value, dict):
        raise ConfigError(f"{context} must be an object, got {type(value).__name__}")
    return value


def _check_keys(mapping: dict, allowed: set, context: str):
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ConfigError(
            f"unknown key(s) {unknown} in {context}; allowed: {sorted(allowed)}"
        )


def _get_int(mapping: dict, key: str, context: str, minimum=None, default=None):
    if key not in mapping:
        if default is None:
            raise ConfigError(f"missing required key {key!r} in {context}")
        return default
    value = mapping[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{context}.{key} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{context}.{key} must be >= {minimum}, got {value}")
    return value


def _get_real(mapping: dict, key: str, context: str, positive=False, default=None):
    if key not in mapping:
        if default is None:
            raise ConfigError(f"missing required key {key!r} in {context}")
        return default
    value = mapping[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{context}.{key} must be a number, got {value!r}")
    value = float(value)
    if positive and value <= 0.0:
        raise ConfigError(f"{context}.{key} must be positive, got {value}")
    return value


def _get_str(mapping: dict, key: str, context: str, choices=None, default=None):
    if key not in mapping:
        if default is None:
            raise ConfigError(f"missing required key {key!r} in {context}")
        return default
    value = mapping[key]
    if not isinstance(value, str) or not value:
        raise ConfigError(f"{context}.{key} must be a non-empty string, got {value!r}")
    if choices is not None and value not in choices:
        raise ConfigError(
            f"{context}.{key} must be one of {list(choices)}, got {value!r}"
        )
    return value


def _resolve_schedule(data: dict) -> dict:
    section = _require_mapping(data.get("schedule"), "schedule")
    _check_keys(section, {"kind", "timesteps"}, "schedule")
    kind = _get_str(section, "kind", "schedule", choices=("linear-beta", "cosine"))
    timesteps = _get_int(section, "timesteps", "schedule", minimum=2)
    return {"kind": kind, "timesteps": timesteps}


def _resolve_grid(data: dict) -> dict:
    section = _require_mapping(data.get("grid", {}), "grid")
    _check_keys(section, {"channels", "height", "width"}, "grid")
    return {
        "channels": _get_int(section, "channels", "grid", minimum=1, default=1),
        "height": _get_int(section, "height", "grid", minimum=2, default=64),
        "width": _get_int(section, "width", "grid", minimum=2, default=64),
    }


def _resolve_prior(data: dict) -> dict:
    if "prior" not in data:
        raise ConfigError("missing required section 'prior'")
    section = _require_mapping(data["prior"], "prior")
    _check_keys(section, {"beta", "amplitude", "dc_variance"}, "prior")
    resolved = {
        "beta": _get_real(section, "beta", "prior", positive=True),
        "amplitude": _get_real(section, "amplitude", "prior"),
    }
    if resolved["amplitude"] < 0.0:
        raise ConfigError(f"prior.amplitude must be >= 0, got {resolved['amplitude']}")
    if "dc_variance" in section:
        dc = _get_real(section, "dc_variance", "prior")
        if dc < 0.0:
            raise ConfigError(f"prior.dc_variance must be >= 0, got {dc}")
        resolved["dc_variance"] = dc
    return resolved


def _resolve_seeds(data: dict) -> list:
    if "seeds" not in data:
        raise ConfigError("missing required section 'seeds'")
    # A bare array is the resolved form, so a resolved config reloads as-is.
    if isinstance(data["seeds"], list):
        section = {"list": data["seeds"]}
    else:
        section = _require_mapping(data["seeds"], "seeds")
    if "list" in section:
        _check_keys(section, {"list"}, "seeds")
        raw = section["list"]
        if not isinstance(raw, list):
            raise ConfigError(f"seeds.list must be an array, got {raw!r}")
        seeds = []
        for i, value in enumerate(raw):
            if isinstance(value, bool) or not isinstance(value, int) or value < 0:
                raise ConfigError(
                    f"seeds.list[{i}] must be a non-negative integer, got {value!r}"
                )
            seeds.append(value)
    else:
        _check_keys(section, {"count", "start"}, "seeds")
        count = _get_int(section, "count", "seeds", minimum=0)
        start = _get_int(section, "start", "seeds", minimum=0, default=0)
        seeds = list(range(start, start + count))
    if not seeds:
        raise ConfigError("seed list is empty; provide at least one seed")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seed list contains duplicates")
    return seeds


def _resolve_conditions(data: dict) -> dict:
    section = _require_mapping(data.get("conditions"), "conditions")
    _check_keys(section, {"original", "refined"}, "conditions")
    resolved = {}
    for role in ("original", "refined"):
        if role not in section:
            raise ConfigError(f"missing required key {role!r} in conditions")
        entry = _require_mapping(section[role], f"conditions.{role}")
        _check_keys(entry, {"layout", "texture"}, f"conditions.{role}")
        resolved[role] = {
            "layout": _get_str(entry, "layout", f"conditions.{role}"),
            "texture": _get_str(entry, "texture", f"conditions.{role}"),
        }
    return resolved


def _resolve_weights(data: dict) -> dict:
    section = _require_mapping(data.get("weights", {}), "weights")
    _check_keys(section, {"alpha", "sigma", "kind"}, "weights")
    return {
        "alpha": _get_real(section, "alpha", "weights", positive=True, default=0.2),
        "sigma": _get_real(section, "sigma", "weights", positive=True, default=0.4),
        "kind": _get_str(
            section, "kind", "weights", choices=("gaussian", "linear"),
            default="gaussian",
        ),
    }


def _resolve_filter(data: dict) -> dict:
    section = _require_mapping(data.get("filter", {}), "filter")
    _check_keys(section, {"cutoff_fraction", "shape"}, "filter")
    cutoff = _get_real(section, "cutoff_fraction", "filter", default=0.15)
    if not 0.0 < cutoff < 1.0:
        raise ConfigError(f"filter.cutoff_fraction must lie in (0, 1), got {cutoff}")
    return {
        "cutoff_fraction": cutoff,
        "shape": _get_str(
            section, "shape", "filter", choices=("hard", "gaussian-edge"),
            default="hard",
        ),
    }


def _resolve_sweep(data: dict) -> dict:
    section = _require_mapping(data.get("sweep"), "sweep")
    _check_keys(section, {"parameter", "values"}, "sweep")
    parameter = _get_str(section, "parameter", "sweep", choices=("alpha", "sigma"))
    raw = section.get("values")
    if not isinstance(raw, list) or len(raw) < 3:
        raise ConfigError("sweep.values must be an array of at least 3 numbers")
    values = []
    for i, value in enumerate(raw):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"sweep.values[{i}] must be a number, got {value!r}")
        value = float(value)
        if value <= 0.0:
            raise ConfigError(f"sweep.values[{i}] must be positive, got {value}")
        values.append(value)
    return {"parameter": parameter, "values": values}


def _resolve_snr(data: dict, timesteps: int) -> dict:
    section = _require_mapping(data.get("snr"), "snr")
    _check_keys(section, {"timesteps", "num_samples", "num_bins"}, "snr")
    raw = section.get("timesteps")
    if not isinstance(raw, list) or len(raw) < 3:
        raise ConfigError("snr.timesteps must be an array of at least 3 timesteps")
    ts = []
    for i, value in enumerate(raw):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"snr.timesteps[{i}] must be an integer, got {value!r}")
        if not 1 <= value <= timesteps:
            raise ConfigError(
                f"snr.timesteps[{i}] must lie in [1, {timesteps}], got {value}"
            )
        ts.append(value)
    if len(set(ts)) != len(ts):
        raise ConfigError("snr.timesteps contains duplicates")
    return {
        "timesteps": ts,
        "num_samples": _get_int(section, "num_samples", "snr", minimum=2, default=4096),
        "num_bins": _get_int(section, "num_bins", "snr", minimum=2, default=24),
    }


@dataclass(frozen=True)
class RunConfig:
    """Validated, fully resolved configuration plus its canonical hash."""

    resolved: dict

    @classmethod
    def from_mapping(cls, data) -> "RunConfig":
        data = _require_mapping(data, "config root")
        _check_keys(data, _TOP_KEYS, "config root")
        experiment = _get_str(data, "experiment", "config root", choices=EXPERIMENTS)
        resolved = {
            "experiment": experiment,
            "output_dir": _get_str(data, "output_dir", "config root"),
            "schedule": _resolve_schedule(data),
            "grid": _resolve_grid(data),
            "prior": _resolve_prior(data),
            "seeds": _resolve_seeds(data),
            "num_steps": _get_int(data, "num_steps", "config root", minimum=1,
                                  default=15),
        }
        for name in ("conditions", "weights", "filter", "sweep", "snr"):
            required = name in _REQUIRED_SECTIONS[experiment]
            if name in data or required:
                if name == "conditions":
                    resolved[name] = _resolve_conditions(data)
                elif name == "weights":
                    resolved[name] = _resolve_weights(data)
                elif name == "filter":
                    resolved[name] = _resolve_filter(data)
                elif name == "sweep":
                    resolved[name] = _resolve_sweep(data)
                else:
                    resolved[name] = _resolve_snr(
                        data, resolved["schedule"]["timesteps"]
                    )
        if experiment == "hipass-ablation" and resolved["num_steps"] % 3 != 0:
            raise ConfigError(
                f"hipass-ablation needs num_steps divisible by 3 for the "
                f"stage partition, got {resolved['num_steps']}"
            )
        if resolved["num_steps"] > resolved["schedule"]["timesteps"]:
            raise ConfigError(
                f"num_steps={resolved['num_steps']} exceeds schedule "
                f"timesteps={resolved['schedule']['timesteps']}"
            )
        return cls(resolved)

    def canonical_json(self) -> str:
        return json.dumps(self.resolved, sort_keys=True, separators=(",", ":"))

    @property
    def config_hash(self) -> str:
        digest = hashlib.sha256(self.canonical_json().encode("utf-8"))
        return digest.hexdigest()[:CONFIG_HASH_CHARS]

    @property
    def experiment(self) -> str:
        return self.resolved["experiment"]

    @property
    def output_dir(self) -> Path:
        return Path(self.resolved["output_dir"])

    @property
    def seeds(self) -> list:
        return list(self.resolved["seeds"])

    @property
    def num_steps(self) -> int:
        return self.resolved["num_steps"]

    @property
    def timesteps(self) -> int:
        return self.resolved["schedule"]["timesteps"]

    @property
    def grid(self) -> tuple:
        g = self.resolved["grid"]
        return (g["channels"], g["height"], g["width"])

    def make_schedule(self) -> NoiseSchedule:
        s = self.resolved["schedule"]
        return build_schedule(s["kind"], s["timesteps"])

    def make_prior(self) -> PowerLawPrior:
        p = self.resolved["prior"]
        return PowerLawPrior(
            beta=p["beta"],
            amplitude=p["amplitude"],
            dc_variance=p.get("dc_variance"),
        )

    def make_condition(self, role: str) -> ConditionSpec:
        entry = self.resolved["conditions"][role]
        channels, height, width = self.grid
        return make_condition(
            entry["layout"], entry["texture"], channels, height, width
        )

    def make_weight_params(self, kind=None, alpha=None, sigma=None) -> WeightParams:
        w = self.resolved["weights"]
        return WeightParams(
            alpha=w["alpha"] if alpha is None else alpha,
            sigma=w["sigma"] if sigma is None else sigma,
            kind=w["kind"] if kind is None else kind,
            T=self.timesteps,
        )

    def make_filter_spec(self, active_steps) -> FilterSpec:
        f = self.resolved["filter"]
        return FilterSpec(
            cutoff_fraction=f["cutoff_fraction"],
            shape=f["shape"],
            active_steps=active_steps,
        )


def load_config(path) -> RunConfig:
    """Read and validate a JSON config file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return RunConfig.from_mapping(data)
