"""Command-line entry point.

Exit codes: 0 a completed run, 2 an aborted run (or pre-flight failure),
3 a run completed with the unverified flag, 64 a usage error.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from .config import ConfigError, load_config
from .orchestrator import CHECKPOINT_NAME, PipelineState, run_pipeline

EXIT_COMPLETED = 0
EXIT_ABORTED = 2
EXIT_UNVERIFIED = 3
EXIT_USAGE = 64


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # keep usage failures as a distinct exit code
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="edmpipe",
        description="Run the automated research pipeline on a configured dataset.",
    )
    parser.add_argument("--dataset", help="dataset id from the config's datasets map")
    parser.add_argument("--prompt", help="optional research prompt steering formulation")
    parser.add_argument("--output-dir", help="run directory (default: a timestamped directory)")
    parser.add_argument("--resume", action="store_true",
                        help="resume from the checkpoint in --output-dir")
    parser.add_argument("--config", help="path to a config YAML file")
    parser.add_argument("--seed", type=int, help="override the run seed")
    parser.add_argument("--max-revisions", type=int, dest="max_revisions")
    parser.add_argument("--min-analytic-n", type=int, dest="min_analytic_n")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    overrides = {
        "dataset": args.dataset,
        "seed": args.seed,
        "max_revisions": args.max_revisions,
        "min_analytic_n": args.min_analytic_n,
    }
    try:
        config = load_config(args.config, overrides=overrides)
    except (ConfigError, FileNotFoundError, OSError) as exc:
        print(f"error: bad configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE

    # Pre-flight: fail before creating a run directory or touching a backend.
    for label, path in (("data", config.data_path), ("registry", config.registry_path)):
        if not path or not Path(path).exists():
            print(f"error: {label} path does not exist: {path or '<unset>'}", file=sys.stderr)
            return EXIT_ABORTED

    if args.output_dir:
        run_dir = Path(args.output_dir)
    else:
        stamp = time.strftime("%Y%m%d_%H%M%S")
        run_dir = Path(config.output_root) / f"run_{stamp}"

    resume_from = None
    if args.resume:
        resume_from = run_dir / CHECKPOINT_NAME
        if not resume_from.exists():
            print(f"error: --resume given but no checkpoint at {resume_from}", file=sys.stderr)
            return EXIT_ABORTED

    ctx = run_pipeline(config, run_dir, user_prompt=args.prompt, resume_from=resume_from)
    print(f"run directory: {run_dir}")
    print(f"final state: {ctx.state.value}" + (" (unverified)" if ctx.unverified else ""))
    if ctx.state is PipelineState.COMPLETED:
        return EXIT_UNVERIFIED if ctx.unverified else EXIT_COMPLETED
    return EXIT_ABORTED


if __name__ == "__main__":
    sys.exit(main())
