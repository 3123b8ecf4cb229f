"""Command-line entry point for the clustering-and-forecasting pipeline.

Exit codes: 0 success, 2 configuration error, 3 missing upstream artifact,
4 runtime failure.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config
from .pipeline import DependencyError, run_all, run_stage

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DEPENDENCY = 3
EXIT_RUNTIME = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="apforecast",
        description=(
            "Derive per-AP load series, cluster them, train global and "
            "cluster-specific forecasters, and plan deployment under a memory budget."
        ),
    )
    parser.add_argument("--config", metavar="PATH", help="TOML config file (defaults are embedded)")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--out", metavar="DIR", help="override the output directory")
    parser.add_argument(
        "--horizon",
        type=int,
        choices=(10, 60),
        help="restrict training/evaluation/planning to one horizon (minutes)",
    )
    parser.add_argument("--jobs", type=int, default=1, help="worker hint for parallel stages")

    sub = parser.add_subparsers(dest="command", metavar="command")
    descriptions = {
        "synth": "generate the synthetic dataset configured under [synthetic]",
        "ingest": "parse the association-record CSV configured under [input]",
        "features": "extract and scale the 35-feature descriptor per AP",
        "reduce": "fit PCA and project the feature matrix",
        "cluster": "select K by silhouette and write assignments",
        "train": "train global and per-cluster forecasters",
        "evaluate": "build the per-cluster performance table",
        "plan": "select a model tier per cluster and cost it",
        "report": "emit plottable summary CSVs",
        "all": "run every stage in order",
    }
    for name, help_text in descriptions.items():
        sub.add_parser(name, help=help_text)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_CONFIG

    try:
        config = load_config(args.config)
        if args.seed is not None:
            config.seed = args.seed
        if args.out is not None:
            config.out_dir = args.out
        if args.horizon is not None:
            config.train.horizons_minutes = [args.horizon]
            config.deploy.plan_horizon_minutes = args.horizon
        if args.command in ("synth", "ingest"):
            if args.command == "synth" and not config.uses_synthetic():
                config.input.csv = ""  # force synthetic generation
            if args.command == "ingest" and config.uses_synthetic():
                raise ConfigError(["'ingest' requires input.csv to be configured (use 'synth' otherwise)"])
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "all":
            written = run_all(config)
        elif args.command in ("synth", "ingest"):
            written = run_stage("ingest", config)
        else:
            written = run_stage(args.command, config)
    except DependencyError as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
