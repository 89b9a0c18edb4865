"""Command-line front end.

Subcommands map one-to-one onto the drivers in
:mod:`hvsmooth.experiments`; all of them are pure functions of
(config, seed) and write CSV files into the configured output directory.

Exit codes: 0 success, 2 malformed configuration, 3 numerical failure
(the diagnostic names the failing operation and time index).
"""

from __future__ import annotations

import argparse
import os
import sys

from . import experiments
from .config import ConfigError, ExperimentConfig, apply_overrides, load_config
from .sparselin import FactorizationError

COMMANDS = {
    "simulate": experiments.run_simulate,
    "filter": experiments.run_filter,
    "smooth": experiments.run_smooth,
    "sample": experiments.run_sample,
    "gibbs": experiments.run_gibbs,
    "eval-crps": experiments.run_eval_crps,
    "bench": experiments.run_bench,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hvsmooth",
        description="Scalable smoothing-distribution sampling for "
        "spatio-temporal state-space models",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        summary = (fn.__doc__ or "").strip().splitlines()[0] if fn.__doc__ else None
        p = sub.add_parser(name, help=summary)
        p.add_argument("--config", help="configuration file (defaults apply if omitted)")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--out", help="override run.out")
        p.add_argument(
            "--method",
            choices=experiments.METHODS,
            help="override method.pattern",
        )
        p.add_argument("--n-samples", type=int, help="override run.n_samples")
        p.add_argument(
            "--override",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="set any config value (repeatable)",
        )
        if name in ("filter", "smooth", "sample"):
            p.add_argument(
                "--pattern-file",
                help="use a sparsity pattern from a text file (maxmin variable order)",
            )
        if name == "filter":
            p.add_argument(
                "--dump-factors",
                action="store_true",
                help="export per-time sparse factors (debugging)",
            )
    return parser


def _configure(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.out is not None:
        overrides.append(f"run.out={args.out}")
    if args.method is not None:
        overrides.append(f"method.pattern={args.method}")
    if args.n_samples is not None:
        overrides.append(f"run.n_samples={args.n_samples}")
    return apply_overrides(cfg, overrides)


def _configure_threads() -> None:
    threads = os.environ.get("FFBS_THREADS")
    if threads:
        try:
            import numba

            numba.set_num_threads(max(1, int(threads)))
        except (ValueError, ImportError):
            pass


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _configure_threads()
    kwargs = {}
    if getattr(args, "pattern_file", None):
        kwargs["pattern_file"] = args.pattern_file
    if getattr(args, "dump_factors", False):
        kwargs["dump_factors"] = True
    try:
        cfg = _configure(args)
        files = COMMANDS[args.command](cfg, **kwargs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FactorizationError as exc:
        where = f" at time index {exc.time_index}" if exc.time_index is not None else ""
        print(f"numerical failure{where}: {exc}", file=sys.stderr)
        return 3
    for path in files:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
