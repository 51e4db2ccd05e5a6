"""Command-line entry point.

Subcommands mirror the experiment runners plus two utilities:

    freqmod analyze-snr --config cfg.json [--out DIR] [--seeds N] [--threads N]
    freqmod hipass-ablation ...
    freqmod fmm-run ...
    freqmod sweep ...
    freqmod compare-weighting ...
    freqmod serve-modulator
    freqmod latent-info FILE

Exit codes: 0 success, 2 configuration error, 3 runtime error. The
FMM_THREADS environment variable overrides --threads when set.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import protocol
from .config import RunConfig
from .errors import ConfigError, FreqmodError
from .experiments import RUNNERS
from .latentio import read_latent

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freqmod",
        description="Frequency-domain diffusion analysis and modulation runs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        cmd = sub.add_parser(name, help=f"run the {name} experiment")
        cmd.add_argument("--config", required=True, metavar="PATH",
                         help="JSON run configuration")
        cmd.add_argument("--out", metavar="DIR",
                         help="override the config's output_dir")
        cmd.add_argument("--seeds", type=int, metavar="N",
                         help="override seeds with N seeds starting at 0")
        cmd.add_argument("--threads", type=int, metavar="N",
                         help="worker threads (FMM_THREADS overrides)")
    sub.add_parser(
        "serve-modulator",
        help="answer framed MODULATE requests on stdin/stdout until EOF",
    )
    info = sub.add_parser("latent-info", help="describe a latent file")
    info.add_argument("file", metavar="FILE")
    return parser


def _load_config_with_overrides(args) -> RunConfig:
    path = Path(args.config)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    if args.out is not None:
        raw["output_dir"] = args.out
    if args.seeds is not None:
        raw["seeds"] = {"count": args.seeds, "start": 0}
    cfg = RunConfig.from_mapping(raw)
    if cfg.experiment != args.command:
        raise ConfigError(
            f"config is for experiment {cfg.experiment!r} but the "
            f"{args.command!r} command was invoked"
        )
    return cfg


def _latent_info(path: str) -> int:
    field = read_latent(path)
    values = field.values
    print(f"shape: {field.channels}x{field.height}x{field.width} "
          f"(channels x height x width)")
    print("payload: float32, format version 1")
    print(f"min: {values.min():.6g}")
    print(f"max: {values.max():.6g}")
    print(f"mean: {values.mean():.6g}")
    print(f"rms: {float(np.sqrt(np.mean(values ** 2))):.6g}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "serve-modulator":
            return protocol.serve(sys.stdin.buffer, sys.stdout.buffer)
        if args.command == "latent-info":
            return _latent_info(args.file)
        cfg = _load_config_with_overrides(args)
        RUNNERS[args.command](cfg, threads=args.threads)
        return EXIT_OK
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FreqmodError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
