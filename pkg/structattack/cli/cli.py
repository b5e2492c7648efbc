# The MIT License (MIT)
# Copyright © 2024 structattack contributors

import sys
import argparse
import structattack
from munch import Munch
from loguru import logger
from rich import print
from typing import List, Optional

from structattack.constants import EXIT_CONFIG_ERROR, EXIT_OK, EXIT_RUNTIME_ERROR
from structattack.shared.config import build_config
from structattack.shared.errors import ConfigurationError, StructAttackError

from .traincommand import TrainCommand
from .evalcommand import EvalCommand
from .analyzecommand import AnalyzeCommand
from .metricscommand import MetricsCommand

ALIAS_TO_COMMAND = {
    "t": "train",
    "e": "eval",
    "evaluate": "eval",
    "a": "analyze",
    "m": "metrics",
    "train": "train",
    "eval": "eval",
    "analyze": "analyze",
    "metrics": "metrics",
}

COMMANDS = {
    "train": TrainCommand,
    "eval": EvalCommand,
    "analyze": AnalyzeCommand,
    "metrics": MetricsCommand,
}


class cli:
    """
    Command line interface of structattack: train a generator, evaluate it
    against victims, analyze its internals, recompute metrics from dumps.
    """

    def __init__(self, config: Optional[Munch] = None, args: Optional[List[str]] = None):
        """
        Args:
            config (Munch, optional): An already parsed configuration.
            args (List[str], optional): Command line arguments parsed when no config is given.
        """
        if config is None:
            config = cli.create_config(args)

        self.config = config
        if self.config.get("command") in ALIAS_TO_COMMAND:
            self.config.command = ALIAS_TO_COMMAND[self.config.command]
        else:
            raise ConfigurationError(f"Unknown command: {self.config.get('command')}")

        # Check if the config is valid.
        cli.check_config(self.config)

    @staticmethod
    def __create_parser__() -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(
            description=f"structattack cli v{structattack.__version__}",
            usage="structattack <command> <command args>",
            add_help=True,
        )
        cmd_parsers = parser.add_subparsers(dest="command")
        for command in COMMANDS.values():
            command.add_args(cmd_parsers)
        return parser

    @staticmethod
    def create_config(args: Optional[List[str]]) -> Munch:
        parser = cli.__create_parser__()

        # If no arguments are passed, print help text and exit with a usage error.
        if args is None or len(args) == 0:
            parser.print_help()
            sys.exit(EXIT_CONFIG_ERROR)

        return build_config(parser, args)

    @staticmethod
    def check_config(config: Munch):
        COMMANDS[config.command].check_config(config)

    def run(self):
        """Executes the command from the configuration."""
        COMMANDS[self.config.command].run(self)


def dispatch(argv: Optional[List[str]] = None) -> int:
    """Run one command and map its outcome to an exit code (0, 2, 3 or 4)."""
    try:
        cli(args=argv).run()
    except StructAttackError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f":cross_mark:[red]{e}[/red]")
        return e.exit_code
    except SystemExit as e:
        # argparse usage errors exit with 2 already.
        return e.code if isinstance(e.code, int) else EXIT_CONFIG_ERROR
    except KeyboardInterrupt:
        logger.warning("Interrupted")
        return EXIT_RUNTIME_ERROR
    except Exception as e:
        logger.opt(exception=e).error(f"Unexpected error: {e}")
        return EXIT_RUNTIME_ERROR
    return EXIT_OK


def main():
    sys.exit(dispatch(sys.argv[1:]))
