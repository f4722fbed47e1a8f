"""Command-line entry point: ``metafors run | summarize | list-presets``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from .config import ConfigError, load_config
from .presets import PRESET_NAMES, list_presets
from .results import STATS, read_results, summarize, write_summary
from .runner import GroundTruthError, run_experiment

__all__ = ["main", "EXIT_OK", "EXIT_CONFIG", "EXIT_DIVERGENCE", "OUT_ENV"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
OUT_ENV = "METAFORS_OUT"
DEFAULT_OUT = "metafors-out"


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="metafors", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a TOML config or a run manifest")
    run.add_argument("config", type=Path)
    run.add_argument("--out", type=Path, default=None,
                     help=f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})")
    run.add_argument("--seed", type=int, default=None, help="root seed override")
    run.add_argument("--threads", type=int, default=None, help="worker threads")
    run.add_argument("--preset", choices=PRESET_NAMES, default=None, help="preset supplying defaults")

    summ = sub.add_parser("summarize", help="aggregate a results CSV over replicates")
    summ.add_argument("csv", type=Path)
    summ.add_argument("--stat", choices=STATS, default="mean")
    summ.add_argument("--by", choices=("point", "n_test"), default="point",
                      help="group per test point, or per n_test over all points")
    summ.add_argument("--out", type=Path, default=None, help="write here instead of stdout")

    sub.add_parser("list-presets", help="list built-in experiment presets")
    return p


def _run(args) -> int:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = load_config(args.config, args.preset, overrides)
    if args.threads is not None and args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    out = args.out or Path(os.environ.get(OUT_ENV, DEFAULT_OUT))
    result = run_experiment(cfg, out, threads=args.threads)
    print(f"wrote {len(result.rows)} rows to {result.files['results']}")
    return EXIT_OK


def _summarize(args) -> int:
    rows = read_results(args.csv)
    text = write_summary(summarize(rows, args.stat, args.by), args.stat, args.out)
    if args.out is None:
        sys.stdout.write(text)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return _run(args)
        if args.command == "summarize":
            return _summarize(args)
        for experiment, preset, desc in list_presets():
            print(f"{experiment:24s} {preset:6s} {desc}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GroundTruthError as exc:
        print(f"ground truth diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except ValueError as exc:
        if args.command != "summarize":
            raise
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
