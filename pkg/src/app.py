import argparse
import logging
import sys
from typing import Optional, Sequence

from exceptiongroup import ExceptionGroup

from .experiment import oracle_rows, run_config, sweep_schedules, write_oracle
from .loader import ConfigError, load_schedules, load_validate_options

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = "config.yaml"
LOG_FORMAT = "%(asctime)s - %(levelname)s - %(name)s - %(message)s"
LOG_DATEFMT = "%Y-%m-%d %H:%M:%S"


def setup_logging(verbose: bool = False) -> None:
    """Root logger for the CLI: DEBUG with -v, INFO otherwise."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT, datefmt=LOG_DATEFMT)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="src.app", description="Plan and act with inaccurate models")
    parser.add_argument("-v", "--verbose", action="store_true", help="log at DEBUG level")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run an experiment config")
    run.add_argument("--config", default=DEFAULT_CONFIG)
    run.add_argument("--out", required=True, help="output directory")

    sweep = commands.add_parser("sweep", help="run an acmaxpp config once per alpha schedule")
    sweep.add_argument("--config", default=DEFAULT_CONFIG)
    sweep.add_argument("--schedules", required=True, help="schedules file")
    sweep.add_argument("--out", required=True, help="output directory")

    oracle = commands.add_parser("oracle", help="dump model and true optimal values for one instance")
    oracle.add_argument("--config", default=DEFAULT_CONFIG)
    oracle.add_argument("--seed", type=int, default=None, help="instance seed, first configured seed by default")
    oracle.add_argument("--out", default=None, help="CSV path, stdout by default")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)

    try:
        opts = load_validate_options(args.config)
        if args.command == "run":
            run_config(opts, args.out)
        elif args.command == "sweep":
            sweep_schedules(opts, load_schedules(args.schedules), args.out)
        elif args.command == "oracle":
            rows = oracle_rows(opts, args.seed)
            if args.out:
                with open(args.out, "w", newline="") as f:
                    write_oracle(rows, f)
            else:
                write_oracle(rows, sys.stdout)
    except ConfigError as e:
        logger.error(f"Invalid configuration {e}")
        return 2
    except ExceptionGroup as group:
        for e in group.exceptions:
            logger.error(f"{type(e).__name__}: {e}")
        return 2 if all(isinstance(e, ConfigError) for e in group.exceptions) else 1
    except FileNotFoundError as e:
        logger.error(str(e))
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
