import logging
import sys

import logger_setup
from cli.commands import COMMANDS
from cli.constants import APP_NAME, APP_VERSION, EXIT_DATA, EXIT_USAGE
from cli.parser import build_parser
from cli.run_config import resolve_run_config
from exceptions import InvalidArgumentError, SedError


def main(argv: list[str] | None = None) -> int:
    """Main entry point for the command-line application."""
    # --- 1. Argument Parsing ---
    # Usage errors are reported before logging exists; argparse already
    # printed the usage line to stderr.
    try:
        args = build_parser().parse_args(argv)
    except InvalidArgumentError as e:
        print(f"{APP_NAME}: error: {e}", file=sys.stderr)
        return EXIT_USAGE

    # --- 2. Initial Setup ---
    log_file_path = logger_setup.setup_logging(args.log_level)
    logger = logging.getLogger(__name__)
    logger.info("-----------------------------------------------------")
    logger.info("%s %s starting command '%s'.", APP_NAME, APP_VERSION, args.command)

    # --- 3. Command Dispatch ---
    try:
        run_config = resolve_run_config(args)
        return COMMANDS[args.command](args, run_config)
    except SedError as e:
        logger.error("Command '%s' failed: %s", args.command, e)
        print(f"{APP_NAME}: error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception:
        logger.critical("An unhandled exception occurred in command '%s'.", args.command,
                        exc_info=True)
        hint = f" See the log file at {log_file_path}." if log_file_path else ""
        print(f"{APP_NAME}: unexpected error.{hint}", file=sys.stderr)
        return EXIT_DATA
    finally:
        logger.info("Command '%s' finished.\n", args.command)


if __name__ == "__main__":
    sys.exit(main())
