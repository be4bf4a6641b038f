"""Command-line entry point: ``reshuffle {run,sweep,check,plot}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..data import LibsvmFormatError
from .config import ConfigError, ExperimentConfig, load_config, parse_seeds
from .csvio import SchemaError, TRAJECTORY_COLUMNS, parse_rows, read_rows, serialize_rows, write_rows
from .plots import emit_plot, render_summary_png
from .runner import (
    EXIT_INPUT,
    ExperimentResult,
    build_problem,
    resolve_threads,
    run_experiment,
    variance_sweep,
)

__all__ = [
    "ConfigError", "ExperimentConfig", "ExperimentResult", "SchemaError", "TRAJECTORY_COLUMNS",
    "build_problem", "emit_plot", "load_config", "main", "parse_rows", "parse_seeds", "read_rows",
    "render_summary_png", "run_experiment", "serialize_rows", "variance_sweep", "write_rows",
]

_FORCED_MODE = {"sweep": "variance-sweep", "check": "bound-check"}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="reshuffle", description="Shuffling-method experiments and bound checks.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "run the config's mode (trajectories by default)"),
                        ("sweep", "shuffling-variance sweep"),
                        ("check", "bound checks; nonzero exit on any failure")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", type=Path, help="output directory (overrides the config)")
        p.add_argument("--seeds", help="inclusive range a..b (overrides the config)")
        p.add_argument("--threads", type=int, help="worker processes (fallback: RESHUFFLE_THREADS)")
    p = sub.add_parser("plot", help="render summary CSVs to SVG")
    p.add_argument("csv", nargs="+", type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--metric", default="dist_sq", choices=("dist_sq", "f", "grad_norm_sq"))
    p.add_argument("--title", default="")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "plot":
            emit_plot(args.csv, args.out, metric=args.metric, title=args.title)
            return 0
        cfg = load_config(args.config)
        if args.command in _FORCED_MODE:
            cfg.mode = _FORCED_MODE[args.command]
        if args.seeds:
            cfg.seeds = parse_seeds(args.seeds)
        res = run_experiment(cfg, args.out, resolve_threads(args.threads, cfg.threads))
    except (FileNotFoundError, ConfigError, LibsvmFormatError, SchemaError) as e:
        print(f"reshuffle: error: {e}", file=sys.stderr)
        return EXIT_INPUT
    for f in res.files:
        print(f)
    return res.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
