"""
Main entry point for the space-time concept mapper.
Parses the command line, resolves the run config and dispatches to a handler.
"""
import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

# Add the project root directory to Python path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from cli.commands import HANDLERS, command_name, config_from_args, create_parser, record_run, run_directory
from config.errors import ConfigError, NetiError
from config.logging_config import setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _report(exc: BaseException) -> None:
    """One JSON line on stderr describing the failure."""
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")


def run(argv: Optional[List[str]] = None) -> int:
    """Run one command and return its exit code: 0 ok, 1 runtime failure, 2 usage or config error."""
    load_dotenv()
    setup_logging(os.environ.get("NETI_LOG_LEVEL", "INFO"))
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = create_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help and 2 for usage errors
        return int(exc.code or 0)

    try:
        cfg = config_from_args(args)
    except ConfigError as exc:
        _report(exc)
        return EXIT_USAGE

    name = command_name(args)
    try:
        run_dir = run_directory(args, cfg)
        if name != "info":
            record_run(run_dir, args, cfg, argv)
        logger.info("running %s (preset %s, seed %d)", name, cfg.preset, cfg.seed)
        return HANDLERS[name](args, cfg, run_dir)
    except ConfigError as exc:
        _report(exc)
        return EXIT_USAGE
    except (NetiError, OSError) as exc:
        logger.debug("command %s failed", name, exc_info=True)
        _report(exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(run())
