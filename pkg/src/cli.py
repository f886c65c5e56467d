#!/usr/bin/env python3
import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from src.errors import ConfigError
from src.run_config import LOG_LEVELS, ExperimentConfig


def parse_args(argv=None):
    """Parse command line arguments."""
    parser = argparse.ArgumentParser(
        description="Run a homogenization, wave observability or HUM control experiment from a JSON config."
    )
    parser.add_argument(
        "--config",
        type=Path,
        required=True,
        help="Experiment configuration (JSON)"
    )
    parser.add_argument(
        "--out",
        type=Path,
        help="Folder for output files (overrides output_folder)"
    )
    parser.add_argument(
        "--seed",
        type=int,
        help="Random seed (overrides seed)"
    )
    parser.add_argument(
        "--threads",
        type=int,
        help="Worker threads for the eps axis and Gramian columns (overrides threads)"
    )
    parser.add_argument(
        "--report",
        action="store_true",
        help="Also write a PDF summary with a table of contents"
    )
    parser.add_argument(
        "--log-level",
        choices=list(LOG_LEVELS),
        help="Set the logging level (default: from config, INFO)"
    )
    return parser.parse_args(argv)


def validate_args(args):
    """Validate command line arguments."""
    if not args.config.exists():
        raise ValueError(f"Config file does not exist: {args.config}")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        raise ValueError("Seed must be an unsigned 64-bit integer")
    if args.threads is not None and args.threads < 1:
        raise ValueError("Threads must be at least 1")


def create_config_from_args(args) -> ExperimentConfig:
    """Load the JSON config and apply command line overrides."""
    config = ExperimentConfig.from_json(args.config)
    overrides = {}
    if args.out is not None:
        overrides["output_folder"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.report:
        overrides["report"] = True
    if args.log_level is not None:
        overrides["log_level"] = args.log_level
    return replace(config, **overrides) if overrides else config


def main(argv=None) -> int:
    """Main entry point; returns the process exit code."""
    args = parse_args(argv)
    logging.basicConfig(
        level=args.log_level or "INFO", format="%(asctime)s - %(levelname)s - %(message)s", force=True
    )
    try:
        validate_args(args)
        config = create_config_from_args(args)
    except (ConfigError, ValueError) as e:
        logging.error(f"{args.config}: {e}")
        return 2
    logging.basicConfig(level=config.log_level, format=config.log_format, force=True)

    # Import here to avoid circular imports
    from main import main as process_main

    try:
        return process_main(config=config)
    except Exception as e:
        logging.error(f"Error during processing: {e}", exc_info=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
