"""Experiment runners behind the CLI.

Each runner takes a validated RunConfig, executes its experiment across the
seed list (parallelized over a bounded thread pool), and writes three kinds
of artifacts into the config's output directory:

* a tidy CSV (one metric per row, fixed column set, deterministic order,
  every row stamped with the resolved config hash),
* an SVG rendered FROM the CSV by the plot stage, which refuses rows whose
  config hash does not match the active config,
* the resolved config itself (canonical JSON) for provenance.

Reports are aggregated in seed order regardless of thread count, so a fixed
config always reproduces identical CSV bytes.
"""

from __future__ import annotations

import csv
import hashlib
import math
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import RunConfig
from .diffusion import empirical_snr, make_condition, sample, theoretical_snr
from .errors import ConfigError
from .latentio import write_latent
from .metrics import band_distance, compute_report
from .modulation import filter_hook, modulated_trajectory, paired_sample
from .svgplot import line_plot

FIELDNAMES = (
    "experiment",
    "config_hash",
    "seed",
    "arm",
    "versus",
    "timestep",
    "parameter",
    "param_value",
    "kind",
    "rho",
    "metric",
    "value",
)

HIPASS_STAGES = ("early", "mid", "late")


def _cell(value) -> str:
    if value is None or value == "":
        return ""
    if isinstance(value, (bool, np.bool_)):
        raise ConfigError(f"boolean {value!r} has no CSV cell encoding")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, rows: list):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FIELDNAMES)
        for row in rows:
            writer.writerow([_cell(row.get(name, "")) for name in FIELDNAMES])


def read_rows(path: Path) -> list:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def _derive_seed(*tokens) -> int:
    digest = hashlib.sha256("|".join(str(t) for t in tokens).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _resolve_threads(threads) -> int:
    env = os.environ.get("FMM_THREADS")
    if env is not None:
        try:
            threads = int(env)
        except ValueError as exc:
            raise ConfigError(f"FMM_THREADS must be an integer, got {env!r}") from exc
    if threads is None:
        threads = min(8, os.cpu_count() or 1)
    if threads < 1:
        raise ConfigError(f"thread count must be >= 1, got {threads}")
    return threads


def _map_seeds(worker, seeds, threads):
    """Apply worker to each seed; output order always follows seed order."""
    if threads == 1:
        return [worker(seed) for seed in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, seeds))


def _prepare_output(cfg: RunConfig) -> Path:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.json").write_text(
        cfg.canonical_json() + "\n", encoding="utf-8"
    )
    return out


def _report_rows(base, rep, **labels):
    rows = []
    metrics = [
        ("psnr_db", rep.psnr_db),
        ("ssim", rep.ssim),
        ("band_low", rep.band_low),
        ("band_high", rep.band_high),
    ]
    if rep.ms_ssim is not None:
        metrics.insert(2, ("ms_ssim", rep.ms_ssim))
    for metric, value in metrics:
        rows.append({**base, **labels, "metric": metric, "value": value})
    return rows


def _mean_rows(rows):
    """Mean over seeds per (arm, versus, parameter, param_value, kind, rho,
    metric) group, in first-appearance order; summary rows use seed='all'."""
    if not rows:
        return []
    groups: dict = {}
    for row in rows:
        key = tuple(
            row.get(k, "")
            for k in ("arm", "versus", "parameter", "param_value", "kind",
                      "rho", "metric")
        )
        groups.setdefault(key, []).append(float(row["value"]))
    out = []
    for key, values in groups.items():
        arm, versus, parameter, param_value, kind, rho, metric = key
        out.append({
            "experiment": rows[0]["experiment"],
            "config_hash": rows[0]["config_hash"],
            "seed": "all",
            "arm": arm,
            "versus": versus,
            "parameter": parameter,
            "param_value": param_value,
            "kind": kind,
            "rho": rho,
            "metric": metric,
            "value": sum(values) / len(values),
        })
    return out


def _sign_test_p(successes: int, trials: int) -> float:
    """One-sided binomial tail P(X >= successes) under p = 1/2."""
    if trials == 0:
        return 1.0
    tail = sum(math.comb(trials, i) for i in range(successes, trials + 1))
    return tail / 2.0**trials


def _trend_direction(values) -> float:
    """+1 strictly increasing, -1 strictly decreasing, 0 otherwise."""
    diffs = [b - a for a, b in zip(values, values[1:])]
    if diffs and all(d > 0 for d in diffs):
        return 1.0
    if diffs and all(d < 0 for d in diffs):
        return -1.0
    return 0.0


# --- analyze-snr -----------------------------------------------------------


def run_analyze_snr(cfg: RunConfig, threads=None) -> list:
    threads = _resolve_threads(threads)
    out = _prepare_output(cfg)
    schedule = cfg.make_schedule()
    prior = cfg.make_prior()
    if "conditions" in cfg.resolved:
        condition = cfg.make_condition("original")
    else:
        channels, height, width = cfg.grid
        condition = make_condition("snr-probe", "snr-probe",
                                   channels, height, width)
    snr_cfg = cfg.resolved["snr"]
    base_seed = cfg.seeds[0]
    base = {"experiment": cfg.experiment, "config_hash": cfg.config_hash}
    noise_power = float(condition.shape[1] * condition.shape[2])

    def worker(t):
        est = empirical_snr(
            prior,
            condition,
            schedule,
            t,
            snr_cfg["num_samples"],
            snr_cfg["num_bins"],
            _derive_seed("snr", base_seed, t),
        )
        rows = []
        for i in range(len(est.signal.bin_centers)):
            if est.signal.sample_count[i] == 0:
                continue
            center = float(est.signal.bin_centers[i])
            theo = theoretical_snr(center, t, prior, schedule, noise_power)
            emp = float(est.ratio[i])
            for metric, value in (
                ("snr_theoretical", theo),
                ("snr_empirical", emp),
                ("snr_ratio_emp_over_theo", emp / theo),
            ):
                rows.append({
                    **base,
                    "seed": base_seed,
                    "timestep": t,
                    "parameter": "d",
                    "param_value": center,
                    "metric": metric,
                    "value": value,
                })
        return rows

    per_t = _map_seeds(worker, snr_cfg["timesteps"], threads)
    rows = [row for chunk in per_t for row in chunk]
    csv_path = out / "snr.csv"
    write_csv(csv_path, rows)
    plot_stage(cfg, csv_path, out / "snr.svg")
    return [csv_path, out / "snr.svg"]


# --- hipass-ablation -------------------------------------------------------


def hipass_stage_ranges(num_steps: int) -> list:
    if num_steps % 3 != 0:
        raise ConfigError(
            f"stage partition needs num_steps divisible by 3, got {num_steps}"
        )
    k = num_steps // 3
    return [(1, k), (k + 1, 2 * k), (2 * k + 1, 3 * k)]


def run_hipass_ablation(cfg: RunConfig, threads=None) -> list:
    threads = _resolve_threads(threads)
    out = _prepare_output(cfg)
    schedule = cfg.make_schedule()
    prior = cfg.make_prior()
    condition = cfg.make_condition("original")
    stages = hipass_stage_ranges(cfg.num_steps)
    rho = cfg.resolved["filter"]["cutoff_fraction"]
    base = {"experiment": cfg.experiment, "config_hash": cfg.config_hash}

    def worker(seed):
        reference = sample(condition, prior, schedule, cfg.num_steps, seed)
        rows = []
        for stage_name, active in zip(HIPASS_STAGES, stages):
            spec = cfg.make_filter_spec(active)
            traj = sample(
                condition, prior, schedule, cfg.num_steps, seed,
                hooks=(filter_hook(spec),),
            )
            rep = compute_report(traj.final, reference.final)
            rows.extend(_report_rows(
                base, rep, seed=seed, arm=stage_name, versus="reference",
                rho=rho,
            ))
        return rows

    per_seed = _map_seeds(worker, cfg.seeds, threads)
    rows = [row for chunk in per_seed for row in chunk]
    rows.extend(_mean_rows(rows))
    csv_path = out / "hipass.csv"
    write_csv(csv_path, rows)
    plot_stage(cfg, csv_path, out / "hipass.svg")
    return [csv_path, out / "hipass.svg"]


# --- fmm-run ---------------------------------------------------------------


def run_fmm_run(cfg: RunConfig, threads=None) -> list:
    threads = _resolve_threads(threads)
    out = _prepare_output(cfg)
    latents_dir = out / "latents"
    latents_dir.mkdir(exist_ok=True)
    schedule = cfg.make_schedule()
    prior = cfg.make_prior()
    cond_ori = cfg.make_condition("original")
    cond_ref = cfg.make_condition("refined")
    params = cfg.make_weight_params()
    target = cond_ref.mean_field
    base = {"experiment": cfg.experiment, "config_hash": cfg.config_hash}

    def worker(seed):
        traj_ori, traj_fmm = paired_sample(
            cond_ori, cond_ref, prior, schedule, cfg.num_steps, seed, params
        )
        baseline = sample(cond_ref, prior, schedule, cfg.num_steps, seed)
        write_latent(traj_ori.final, latents_dir / f"seed{seed:05d}-original.fmml")
        write_latent(traj_fmm.final, latents_dir / f"seed{seed:05d}-fmm.fmml")
        write_latent(baseline.final, latents_dir / f"seed{seed:05d}-baseline.fmml")
        rows = []
        for arm, final in (("fmm", traj_fmm.final), ("baseline", baseline.final)):
            for versus, other in (("original", traj_ori.final), ("target", target)):
                rep = compute_report(final, other)
                rows.extend(_report_rows(
                    base, rep, seed=seed, arm=arm, versus=versus,
                    kind=params.kind,
                ))
        return rows

    per_seed = _map_seeds(worker, cfg.seeds, threads)
    rows = [row for chunk in per_seed for row in chunk]
    rows.extend(_mean_rows(rows))
    csv_path = out / "fmm.csv"
    write_csv(csv_path, rows)
    plot_stage(cfg, csv_path, out / "fmm.svg")
    return [csv_path, out / "fmm.svg"]


# --- sweep -----------------------------------------------------------------


def run_sweep(cfg: RunConfig, threads=None) -> list:
    threads = _resolve_threads(threads)
    out = _prepare_output(cfg)
    schedule = cfg.make_schedule()
    prior = cfg.make_prior()
    cond_ori = cfg.make_condition("original")
    cond_ref = cfg.make_condition("refined")
    parameter = cfg.resolved["sweep"]["parameter"]
    values = cfg.resolved["sweep"]["values"]
    target = cond_ref.mean_field
    base = {"experiment": cfg.experiment, "config_hash": cfg.config_hash}

    def worker(seed):
        traj_ori = sample(cond_ori, prior, schedule, cfg.num_steps, seed)
        baseline = sample(cond_ref, prior, schedule, cfg.num_steps, seed)
        rows = []
        low0, _ = band_distance(baseline.final, traj_ori.final)
        _, high0 = band_distance(baseline.final, target)
        rows.append({**base, "seed": seed, "arm": "baseline",
                     "versus": "original", "parameter": parameter,
                     "metric": "band_low", "value": low0})
        rows.append({**base, "seed": seed, "arm": "baseline",
                     "versus": "target", "parameter": parameter,
                     "metric": "band_high", "value": high0})
        for value in values:
            override = {parameter: value}
            params = cfg.make_weight_params(**override)
            traj = modulated_trajectory(
                traj_ori, cond_ref, prior, schedule, cfg.num_steps, seed, params
            )
            low, _ = band_distance(traj.final, traj_ori.final)
            _, high = band_distance(traj.final, target)
            labels = {"seed": seed, "arm": "fmm", "parameter": parameter,
                      "param_value": value, "kind": params.kind}
            rows.append({**base, **labels, "versus": "original",
                         "metric": "band_low", "value": low})
            rows.append({**base, **labels, "versus": "target",
                         "metric": "band_high", "value": high})
        return rows

    per_seed = _map_seeds(worker, cfg.seeds, threads)
    rows = [row for chunk in per_seed for row in chunk]
    means = _mean_rows(rows)
    rows.extend(means)

    # Trend rows over the sorted distinct sweep values; duplicates collapse,
    # so a constant list yields the "no trend" value 0.
    distinct = sorted(set(values))
    for versus, metric in (("original", "band_low"), ("target", "band_high")):
        by_value = {}
        for row in means:
            if (row["arm"] == "fmm" and row["versus"] == versus
                    and row["metric"] == metric and row["param_value"] != ""):
                by_value[float(row["param_value"])] = row["value"]
        ordered = [by_value[v] for v in distinct if v in by_value]
        rows.append({**base, "seed": "all", "arm": "fmm", "versus": versus,
                     "parameter": parameter,
                     "metric": f"trend_{metric}_vs_{versus}",
                     "value": _trend_direction(ordered)})

    csv_path = out / "sweep.csv"
    write_csv(csv_path, rows)
    plot_stage(cfg, csv_path, out / "sweep.svg")
    return [csv_path, out / "sweep.svg"]


# --- compare-weighting -----------------------------------------------------


def run_compare_weighting(cfg: RunConfig, threads=None) -> list:
    threads = _resolve_threads(threads)
    out = _prepare_output(cfg)
    schedule = cfg.make_schedule()
    prior = cfg.make_prior()
    cond_ori = cfg.make_condition("original")
    cond_ref = cfg.make_condition("refined")
    target = cond_ref.mean_field
    base = {"experiment": cfg.experiment, "config_hash": cfg.config_hash}

    def worker(seed):
        traj_ori = sample(cond_ori, prior, schedule, cfg.num_steps, seed)
        rows = []
        highs = {}
        for kind in ("gaussian", "linear"):
            params = cfg.make_weight_params(kind=kind)
            traj = modulated_trajectory(
                traj_ori, cond_ref, prior, schedule, cfg.num_steps, seed, params
            )
            rep_ori = compute_report(traj.final, traj_ori.final)
            rows.extend(_report_rows(
                base, rep_ori, seed=seed, arm="fmm", versus="original",
                kind=kind,
            ))
            _, high = band_distance(traj.final, target)
            highs[kind] = high
            rows.append({**base, "seed": seed, "arm": "fmm",
                         "versus": "target", "kind": kind,
                         "metric": "band_high", "value": high})
        rows.append({**base, "seed": seed, "arm": "delta", "versus": "target",
                     "kind": "linear-minus-gaussian", "metric": "band_high",
                     "value": highs["linear"] - highs["gaussian"]})
        return rows

    per_seed = _map_seeds(worker, cfg.seeds, threads)
    rows = [row for chunk in per_seed for row in chunk]
    means = _mean_rows(rows)
    rows.extend(means)

    deltas = [float(r["value"]) for r in rows
              if r.get("arm") == "delta" and r.get("seed") != "all"]
    nonzero = [d for d in deltas if d != 0.0]
    successes = sum(1 for d in nonzero if d > 0.0)
    rows.append({**base, "seed": "all", "arm": "delta", "versus": "target",
                 "kind": "linear-minus-gaussian", "metric": "sign_test_n",
                 "value": float(len(nonzero))})
    rows.append({**base, "seed": "all", "arm": "delta", "versus": "target",
                 "kind": "linear-minus-gaussian",
                 "metric": "sign_test_successes", "value": float(successes)})
    rows.append({**base, "seed": "all", "arm": "delta", "versus": "target",
                 "kind": "linear-minus-gaussian", "metric": "sign_test_p",
                 "value": _sign_test_p(successes, len(nonzero))})

    def mean_of(metric, kind):
        for row in means:
            if (row["metric"] == metric and row["kind"] == kind
                    and row["versus"] == "original"):
                return float(row["value"])
        raise ConfigError(f"missing mean row for {metric}/{kind}")

    for metric in ("ssim", "psnr_db", "band_low"):
        gauss = mean_of(metric, "gaussian")
        linear = mean_of(metric, "linear")
        gap = abs(linear - gauss) / abs(gauss) if gauss != 0.0 else math.inf
        rows.append({**base, "seed": "all", "arm": "fmm", "versus": "original",
                     "kind": "both", "metric": f"{metric}_relative_gap",
                     "value": gap})

    csv_path = out / "compare.csv"
    write_csv(csv_path, rows)
    plot_stage(cfg, csv_path, out / "compare.svg")
    return [csv_path, out / "compare.svg"]


# --- plot stage ------------------------------------------------------------


def plot_stage(cfg: RunConfig, csv_path: Path, svg_path: Path):
    """Render the SVG for a CSV report, refusing stale or foreign rows."""
    rows = read_rows(csv_path)
    if not rows:
        raise ConfigError(f"no rows in {csv_path}")
    for row in rows:
        if row["config_hash"] != cfg.config_hash:
            raise ConfigError(
                f"config hash mismatch in {csv_path}: row carries "
                f"{row['config_hash']}, active config is {cfg.config_hash}"
            )
    svg = _build_plot(cfg, rows)
    svg_path.write_text(svg, encoding="utf-8")


def _build_plot(cfg: RunConfig, rows: list) -> str:
    experiment = cfg.experiment
    if experiment == "analyze-snr":
        series = []
        for metric in ("snr_theoretical", "snr_empirical"):
            for t in cfg.resolved["snr"]["timesteps"]:
                pts = [(float(r["param_value"]), float(r["value"]))
                       for r in rows
                       if r["metric"] == metric and int(r["timestep"]) == t]
                label = f"{metric.split('_')[1]} t={t}"
                series.append((label, [p[0] for p in pts], [p[1] for p in pts]))
        return line_plot(series, "SNR vs radial frequency", "d",
                         "SNR", y_log=True)
    if experiment == "hipass-ablation":
        means = {r["arm"]: float(r["value"]) for r in rows
                 if r["seed"] == "all" and r["metric"] == "ssim"}
        xs = list(range(1, len(HIPASS_STAGES) + 1))
        ys = [means[s] for s in HIPASS_STAGES]
        return line_plot([("mean ssim", xs, ys)],
                         "Stage-filtered similarity to reference",
                         "stage (1=early 2=mid 3=late)", "ssim", markers=True)
    if experiment == "fmm-run":
        series = []
        for arm in ("fmm", "baseline"):
            vals = sorted(float(r["value"]) for r in rows
                          if r["seed"] not in ("all", "") and r["arm"] == arm
                          and r["versus"] == "original"
                          and r["metric"] == "band_low")
            series.append((arm, list(range(1, len(vals) + 1)), vals))
        return line_plot(series, "Low-band distance to original (per seed)",
                         "seed rank", "band_low")
    if experiment == "sweep":
        series = []
        for versus, metric in (("original", "band_low"), ("target", "band_high")):
            pts = sorted(
                (float(r["param_value"]), float(r["value"])) for r in rows
                if r["seed"] == "all" and r["arm"] == "fmm"
                and r["versus"] == versus and r["metric"] == metric
                and r["param_value"] != ""
            )
            series.append((f"{metric} vs {versus}",
                           [p[0] for p in pts], [p[1] for p in pts]))
        parameter = cfg.resolved["sweep"]["parameter"]
        return line_plot(series, f"Sweep over {parameter}", parameter,
                         "band distance", markers=True)
    if experiment == "compare-weighting":
        vals = sorted(float(r["value"]) for r in rows
                      if r["arm"] == "delta" and r["seed"] not in ("all", "")
                      and r["metric"] == "band_high")
        return line_plot(
            [("linear - gaussian", list(range(1, len(vals) + 1)), vals)],
            "High-band target distance delta (per seed)", "seed rank",
            "delta", markers=True)
    raise ConfigError(f"no plot defined for experiment {experiment!r}")


RUNNERS = {
    "analyze-snr": run_analyze_snr,
    "hipass-ablation": run_hipass_ablation,
    "fmm-run": run_fmm_run,
    "sweep": run_sweep,
    "compare-weighting": run_compare_weighting,
}
