"""
Command-line entry point for the compositional optimal-control pipeline.
"""
import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

import logfire

from comp_oc import __version__
from comp_oc.exceptions import CompOcError
from comp_oc.parsers.config import load_config
from comp_oc.routers import commands
from comp_oc.routers.pipeline import run_pipeline, write_outputs


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="comp-oc",
        description="Neural-network controllers for discrete-time optimal control with compositional data.",
    )
    parser.add_argument("--config", help="pipeline config document (JSON)")
    parser.add_argument("--seed", type=int, help="overrides the config seed and COMP_OC_SEED")
    parser.add_argument("--jobs", type=int, help="parallel sweep points")
    parser.add_argument("--out", help="output directory for the report and tables")
    parser.add_argument("--print-config", action="store_true", help="print the fully-defaulted config and exit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log spans to the console")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands.register(parser.add_subparsers(dest="command"))
    return parser


def configure_logging(verbose: bool):
    logfire.configure(
        send_to_logfire="if-token-present",
        service_name="comp-oc",
        console=None if verbose else False,
    )
    logfire.instrument_pydantic()


def run(args: argparse.Namespace) -> int:
    if args.command:
        return args.handler(args)
    if not args.config:
        raise argparse.ArgumentTypeError("either --config or a subcommand is required")
    config_path = Path(args.config)
    config, base_dir = load_config(config_path, {"seed": args.seed, "jobs": args.jobs, "out": args.out})
    if args.print_config:
        sys.stdout.write(config.model_dump_json(indent=2) + "\n")
        return 0
    report = run_pipeline(config, base_dir)
    write_outputs(report, Path(config.out))
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)
    try:
        return run(args)
    except CompOcError as e:
        logfire.error("command failed", error=str(e), error_type=type(e).__name__, exit_code=e.exit_code)
        sys.stderr.write(f"error: {e.detail}\n")
        return e.exit_code
    except argparse.ArgumentTypeError as e:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"error: {e}\n")
        return 1
    except ValueError as e:
        logfire.error("invalid request", error=str(e), error_type=type(e).__name__)
        sys.stderr.write(f"error: {e}\n")
        return 4


if __name__ == "__main__":
    sys.exit(main())
