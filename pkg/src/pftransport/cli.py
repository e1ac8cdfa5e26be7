"""Command-line front end: run experiment configurations end to end.

Exit codes: 0 success, 2 invalid config or missing prerequisite artifact,
3 solver non-convergence (artifacts are still written).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, load_config
from . import experiments

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_CONVERGED = 3

_STAGES = {
    "run": experiments.run_all,
    "estimate": experiments.run_estimate,
    "predict": experiments.run_predict,
    "control": experiments.run_control,
    "validate": experiments.run_validate,
    "compare-baselines": experiments.run_compare_baselines,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pftransport",
        description="Density-transport prediction and moment-steering control "
        "via Perron-Frobenius generator models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _STAGES.items():
        p = sub.add_parser(name, help=fn.__doc__.splitlines()[0] if fn.__doc__ else None)
        p.add_argument("--config", required=True, help="path to a JSON experiment config")
        p.add_argument("--out", default=None, help="override the config's output directory")
        p.add_argument("--seed", type=int, default=None, help="override the validation seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.out is not None:
        cfg.output_dir = Path(args.out)
    if args.seed is not None:
        cfg.validation.seed = args.seed

    try:
        summary = _STAGES[args.command](cfg)
    except experiments.MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    print(json.dumps(summary, indent=2, sort_keys=True))
    if not _converged(summary):
        print("warning: solver did not converge; artifacts written", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _converged(summary: dict) -> bool:
    if "converged" in summary and not summary["converged"]:
        return False
    for value in summary.values():
        if isinstance(value, dict) and not _converged(value):
            return False
    return True


if __name__ == "__main__":
    sys.exit(main())
