# The MIT License (MIT)
# Copyright © 2024 structattack contributors

from structattack.constants import (
    EXIT_CONFIG_ERROR,
    EXIT_DATA_ERROR,
    EXIT_RUNTIME_ERROR,
)


class StructAttackError(Exception):
    """Base error. `exit_code` is what the CLI returns when this escapes a command."""

    exit_code = EXIT_RUNTIME_ERROR


class ConfigurationError(StructAttackError, ValueError):
    exit_code = EXIT_CONFIG_ERROR


class ShapeError(ConfigurationError):
    """Input spatial size is not accepted by the generator or backbone."""


class CheckpointVersionError(ConfigurationError):
    pass


class UnsupportedDefenseError(ConfigurationError):
    pass


class DataError(StructAttackError):
    exit_code = EXIT_DATA_ERROR


class EmptyDatasetError(DataError):
    pass


class UndefinedMetricError(DataError):
    pass


class StructuralError(StructAttackError):
    """Mismatched parameter trees, feature bundles or array shapes."""


class DegenerateValueError(StructAttackError, ArithmeticError):
    """A quantity is undefined for the given input (e.g. cosine of a zero vector)."""


class NumericsError(StructAttackError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
