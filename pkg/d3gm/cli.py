import argparse
import logging
import sys

from .commands import COMMANDS
from .commands.base import RunOutput
from .config import load_config, parse_overrides
from .errors import NumericError, ValidationError
from .utils import Timer, dump_json

log = logging.getLogger("d3gm")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERIC = 2


def build_parser():
    parser = argparse.ArgumentParser(
        prog="d3gm",
        description="Mean-reverting diffusion experiments. Any config key can be overridden with --section.key value.",
        allow_abbrev=False,
    )
    parser.add_argument("command", choices=list(COMMANDS), help="experiment to run")
    parser.add_argument("--config", help="sectioned key = value config file")
    parser.add_argument("--verbose", action="store_true", help="log debug messages")
    return parser


def run(argv=None):
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    if args.verbose:
        log.setLevel(logging.DEBUG)
    try:
        cfg = load_config(args.command, args.config, parse_overrides(rest))
        command = COMMANDS[args.command]()
        if not command.WRITES_OUTPUT:
            sys.stdout.write(dump_json(command.run(cfg, None)))
            return EXIT_OK
        out = RunOutput(cfg.get("output", "dir") or f"runs/{args.command}", cfg.get("output", "formats"))
        with Timer(args.command):
            command.run(cfg, out)
        out.manifest(cfg)
        log.info("%s finished, outputs in %s", args.command, out.dir)
        return EXIT_OK
    except ValidationError as e:
        log.error("%s", e)
        return EXIT_VALIDATION
    except NumericError as e:
        log.error("Numeric failure: %s", e)
        return EXIT_NUMERIC
    except OSError as e:
        log.error("I/O error: %s", e)
        return EXIT_VALIDATION


def main():
    sys.exit(run())
