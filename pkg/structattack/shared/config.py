# The MIT License (MIT)
# Copyright © 2024 structattack contributors

import os
import copy
import yaml
import argparse
from typing import List, Optional
from munch import Munch, munchify

from structattack.shared.errors import ConfigurationError

EXPLICIT_KEY = "_explicit"


def _suppress_defaults(parser: argparse.ArgumentParser) -> argparse.ArgumentParser:
    """Copy of `parser` whose namespace only contains flags given on the command line."""
    suppressed = copy.deepcopy(parser)
    stack = [suppressed]
    while stack:
        p = stack.pop()
        for action in p._actions:
            if isinstance(action, argparse._SubParsersAction):
                stack.extend(action.choices.values())
            elif action.dest != "help":
                action.default = argparse.SUPPRESS
        p._defaults = {}
    return suppressed


def _has_option(parser: argparse.ArgumentParser, option: str) -> bool:
    stack = [parser]
    while stack:
        p = stack.pop()
        for action in p._actions:
            if option in action.option_strings:
                return True
            if isinstance(action, argparse._SubParsersAction):
                stack.extend(action.choices.values())
    return False


def flatten(tree: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in tree.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten(value, prefix=f"{name}."))
        else:
            flat[name] = value
    return flat


def nest(flat: dict) -> Munch:
    tree = {}
    for key, value in flat.items():
        node = tree
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"Config key '{key}' collides with a scalar value")
        node[parts[-1]] = value
    return munchify(tree)


def load_config_file(path: str) -> dict:
    path = os.path.expanduser(path)
    if not os.path.exists(path):
        raise ConfigurationError(f"Config file does not exist: {path}")
    with open(path, "r") as f:
        try:
            loaded = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigurationError(f"Could not parse config file {path}: {e}")
    if not isinstance(loaded, dict):
        raise ConfigurationError(f"Config file {path} must hold a mapping at top level")
    return loaded


def build_config(
    parser: argparse.ArgumentParser, args: Optional[List[str]] = None
) -> Munch:
    """
    Parse `args` into a nested Munch.

    Dotted destinations (`train.lr`) become nested keys. Values resolve as
    explicit command-line flag > `--config` YAML file > parser default.
    """
    if not _has_option(parser, "--config"):
        parser.add_argument(
            "--config",
            type=str,
            default=None,
            help="YAML file with config values; command-line flags take precedence.",
        )

    params = vars(parser.parse_args(args))
    explicit = set(vars(_suppress_defaults(parser).parse_args(args)).keys())

    file_values = {}
    if params.get("config"):
        file_values = flatten(load_config_file(params["config"]))

    resolved = dict(file_values)
    for key, value in params.items():
        if key in explicit or key not in file_values:
            resolved[key] = value

    config = nest(resolved)
    config[EXPLICIT_KEY] = sorted(explicit)
    return config


def is_set(config: Munch, key: str) -> bool:
    """Whether `key` was given explicitly on the command line."""
    return key in config.get(EXPLICIT_KEY, [])


def get(config: Munch, key: str, default=None):
    node = config
    for part in key.split("."):
        if not isinstance(node, dict) or part not in node:
            return default
        node = node[part]
    return node


def to_dict(config: Munch) -> dict:
    """Plain nested dict without bookkeeping keys, for manifests and checkpoints."""
    plain = config.toDict() if isinstance(config, Munch) else dict(config)
    plain.pop(EXPLICIT_KEY, None)
    return plain


def require(config: Munch, *keys: str):
    """Values a command cannot run without, given either as flags or in the `--config` file."""
    missing = [key for key in keys if get(config, key) in (None, "", [])]
    if missing:
        raise ConfigurationError(
            f"Missing required value(s) {', '.join(missing)}; pass the flag or set it in the config file"
        )
