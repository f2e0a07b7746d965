# follower_agnostic/cli.py
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from .planning import parse_config
from .errors import EXIT_CONFIG, EXIT_OK, EXIT_RUN_ABORT, ConfigError, FollowerAgnosticError
from .runner import build_report, run_diagnostics, run_experiment
from .settings import RuntimeSettings, resolve_output_dir
from .utils import console, setup_logging

log = logging.getLogger(__name__)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default=None, help="Output directory (overrides env and config)")
    p.add_argument("--verbose", action="store_true", help="DEBUG logging")


def _add_config(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", nargs="?", default=None, help="Experiment config (JSON)")
    p.add_argument("--config", dest="config_flag", default=None, help="Experiment config (JSON)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="follower-agnostic",
        description="Zeroth-order leader optimization against black-box followers: runs, sweeps, diagnostics, reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("run", "Run the configured cell for every seed"),
        ("sweep", "Run the cartesian sweep for every seed"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_config(p)
        _add_common(p)
        p.add_argument("--jobs", type=int, default=None, help="Worker processes (default: env or 1)")
        p.add_argument("--seed-base", type=int, default=None, help="First seed when the config lists none")

    p = sub.add_parser("diagnose", help="Run enabled diagnostics on stored traces")
    _add_config(p)
    _add_common(p)

    p = sub.add_parser("report", help="Print the aggregate table and write long.csv")
    p.add_argument("dir", nargs="?", default=None, help="Experiment output directory")
    _add_common(p)
    return parser


def _config_path(args: argparse.Namespace) -> Path:
    if args.config and args.config_flag and args.config != args.config_flag:
        raise ConfigError(f"two different configs given: {args.config} and {args.config_flag}")
    path = args.config or args.config_flag
    if not path:
        raise ConfigError("no config given (positional or --config)")
    return Path(path)


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    try:
        settings = RuntimeSettings()
    except ValidationError as e:
        setup_logging(args.verbose)
        log.error("invalid environment settings: %s", e)
        return EXIT_CONFIG
    setup_logging(args.verbose, settings.log_level)

    try:
        if args.command == "report":
            directory = args.dir or args.out or settings.output_dir
            if directory is None:
                raise ConfigError("report needs an experiment directory")
            build_report(Path(directory))
            return EXIT_OK

        cfg, base_dir = parse_config(_config_path(args))
        out_dir = resolve_output_dir(args.out, settings, cfg.output_dir)

        if args.command == "diagnose":
            report = run_diagnostics(cfg, base_dir, out_dir)
            console.print(f"STATS: cells={len(report['cells'])} passed={report['passed']}", highlight=False)
            return EXIT_OK

        if args.command == "sweep" and cfg.sweep is None:
            raise ConfigError("sweep: the config has no sweep section")
        jobs = args.jobs if args.jobs is not None else settings.jobs
        if args.seed_base is not None and args.seed_base < 0:
            raise ConfigError(f"--seed-base must be nonnegative, got {args.seed_base}")
        if jobs < 1:
            raise ConfigError(f"--jobs must be >= 1, got {jobs}")
        outcome = run_experiment(
            cfg, base_dir, out_dir, use_sweep=args.command == "sweep", jobs=jobs, seed_base=args.seed_base
        )
        return outcome.exit_code
    except FollowerAgnosticError as e:
        log.error("%s", e)
        return getattr(e, "exit_code", EXIT_RUN_ABORT)


if __name__ == "__main__":
    sys.exit(main())
