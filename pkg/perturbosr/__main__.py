#!/usr/bin/env python3
#
# License: See LICENSE.md file
#

import argparse
import sys

import perturbosr
from perturbosr.commands.manager import get_command, parser_arguments
from perturbosr.config import load_config

logger = perturbosr.logging.get_logger(__name__)

EXIT_OK = 0
EXIT_USER_ERROR = 1
EXIT_INTERNAL_ERROR = 2

common = argparse.ArgumentParser(add_help=False)
common.add_argument("-c", "--config", default=None, help="TOML config file (default: built-in defaults)")
common.add_argument("--seed", type=int, default=None, help="Override the master seed of the config")
common.add_argument("--output-dir", default=None, help="Override the output directory of the config")
common.add_argument(
    "--log-level",
    default="WARNING",
    type=str,
    choices=["CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG"],
    help="Set logging level"
)

parser = argparse.ArgumentParser(
    prog="perturbosr",
    description="perturbosr -- open-set recognition by parameter-perturbation uncertainty and two-stage detection",
)
parser.add_argument("--version", action="version", version=f"%(prog)s {perturbosr.__version__}")
subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
subparsers.required = True

for name, summary, arguments in parser_arguments():
    subparser = subparsers.add_parser(name, help=summary, description=summary, parents=[common])
    for a in arguments:
        *args, kwargs = a
        if args[0] not in subparser._option_string_actions:
            subparser.add_argument(*args, **kwargs)


def main(argv=None):
    args = parser.parse_args(argv)
    perturbosr.logging.log_level(args.log_level)

    try:
        config = load_config(args.config, seed=args.seed, output_dir=args.output_dir)
        get_command(args.command)(config, args).execute()
    except (ValueError, FileNotFoundError, KeyError) as e:
        # ConfigError and ParseError are ValueErrors
        logger.error("%s failed: %s", args.command, e)
        return EXIT_USER_ERROR
    except AssertionError as e:
        logger.critical("%s failed on an internal invariant: %s", args.command, e)
        return EXIT_INTERNAL_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
