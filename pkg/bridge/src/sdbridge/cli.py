"""Command line front end.

    sdbridge pair --config run.json --out DIR
    sdbridge invert --config run.json --out DIR
    sdbridge report --out DIR [--pairs N] [--alpha A] [--sigma S]
                    [--kind gaussian|linear] [--steps N] [--seed N]

Exit codes: 0 success, 2 configuration problems, 3 runtime failures
(modulator process, stream, or file errors).
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigError, ModulatorError, WireError, LatentFileError
from .runner import (
    DEMO_PAIRS,
    BridgeConfig,
    directional_report,
    run_inversion_edit,
    run_paired_generation,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _load_config(path: str) -> BridgeConfig:
    try:
        with open(path) as handle:
            data = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return BridgeConfig.from_mapping(data)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdbridge",
        description="paired generation with an external latent modulator",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    pair = commands.add_parser("pair", help="run the three-arm paired generation")
    pair.add_argument("--config", required=True, help="JSON run configuration")
    pair.add_argument("--out", required=True, help="artifact directory")

    invert = commands.add_parser(
        "invert", help="invert a render, then reconstruct and re-prompt"
    )
    invert.add_argument("--config", required=True, help="JSON run configuration")
    invert.add_argument("--out", required=True, help="artifact directory")

    report = commands.add_parser(
        "report", help="directional summary over the built-in prompt pairs"
    )
    report.add_argument("--out", required=True, help="artifact directory")
    report.add_argument("--pairs", type=int, default=len(DEMO_PAIRS))
    report.add_argument("--alpha", type=float, default=0.2)
    report.add_argument("--sigma", type=float, default=0.4)
    report.add_argument("--kind", choices=["gaussian", "linear"], default="gaussian")
    report.add_argument("--steps", type=int, default=50)
    report.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "pair":
            result = run_paired_generation(_load_config(args.config), args.out)
            for key in sorted(result["metrics"]):
                arm, versus, metric = key
                print(f"{metric} {arm} vs {versus}: {result['metrics'][key]:.6f}")
        elif args.command == "invert":
            result = run_inversion_edit(_load_config(args.config), args.out)
            for name, value in sorted(result["metrics"].items()):
                print(f"{name}: {value:.6f}")
        else:
            if args.pairs < 1 or args.pairs > len(DEMO_PAIRS):
                raise ConfigError(
                    f"--pairs must be in [1, {len(DEMO_PAIRS)}], got {args.pairs}"
                )
            result = directional_report(
                args.out,
                pairs=DEMO_PAIRS[: args.pairs],
                alpha=args.alpha,
                sigma=args.sigma,
                kind=args.kind,
                steps=args.steps,
                seed=args.seed,
            )
            print(
                f"modulated arm closer to original in "
                f"{result['fmm_closer']} of {result['pairs']} pairs"
            )
    except ConfigError as exc:
        print(f"sdbridge: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ModulatorError, WireError, LatentFileError, OSError) as exc:
        print(f"sdbridge: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
