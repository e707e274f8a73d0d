# main.py
import argparse
import logging
import os
import sys

# Add src to the Python path to allow absolute imports
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), 'src')))

from src import config
from src.errors import QocError
from src.models.run_config import COMMANDS, RunConfig
from src.results_manager import load_json_config
from src.run_controller import COMMAND_HANDLERS, exit_code_for

LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"

logger = logging.getLogger("lqoc")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lqoc",
        description=f"{config.APP_NAME} {config.APP_VERSION}: adjoint-state optimal control of Lindblad "
                    f"master equations.",
    )
    parser.add_argument("config", help="JSON run configuration")
    parser.add_argument("--command", choices=COMMANDS, help="override the command given in the config")
    parser.add_argument("--output-dir", help="override the output directory (relative to the working directory)")
    parser.add_argument("--log-level", help=f"DEBUG, INFO, WARNING or ERROR (default: ${config.LOG_LEVEL_ENV} or INFO)")
    return parser


def configure_logging(level_name: str = None) -> int:
    """Stream logging for the whole process; returns the level in use."""
    name = (level_name or os.environ.get(config.LOG_LEVEL_ENV) or "INFO").upper()
    level = logging.getLevelName(name)
    invalid = not isinstance(level, int)
    if invalid:
        level = logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)
    if invalid:
        logger.warning("Unknown log level '%s'; using INFO.", name)
    return level


def attach_log_file(output_dir: str):
    """Mirrors the log into run.log inside the output directory."""
    os.makedirs(output_dir, exist_ok=True)
    handler = logging.FileHandler(os.path.join(output_dir, config.LOG_FILE), mode="w")
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logging.getLogger().addHandler(handler)
    return handler


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        data = load_json_config(args.config)
        if args.command:
            data["command"] = args.command
        if args.output_dir:
            data["output_dir"] = os.path.abspath(args.output_dir)
        run_config = RunConfig.from_dict(data, base_dir=os.path.dirname(os.path.abspath(args.config)))
        try:
            attach_log_file(run_config.output_dir)
        except OSError as e:
            logger.warning("Cannot write %s to %s: %s", config.LOG_FILE, run_config.output_dir, e)
        return COMMAND_HANDLERS[run_config.command](run_config)
    except QocError as e:
        logger.error("%s", e)
        return exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
