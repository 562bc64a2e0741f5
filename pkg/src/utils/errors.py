"""Exception types shared by the library and the command line.

Each error carries the process exit code the CLI maps it to.
"""

from dataclasses import dataclass


class KoopmanError(Exception):
    """Base class for every error raised by this project."""

    exit_code = 1


class ConfigurationError(KoopmanError, ValueError):
    """A parameter, flag or config value is outside its valid range."""

    exit_code = 2


class InputError(KoopmanError, ValueError):
    """Data handed to an operation is malformed (shape, finiteness)."""

    exit_code = 2


class NumericalCorruptionError(KoopmanError, ArithmeticError):
    """The running inverse lost positive definiteness."""


class StreamQualityError(KoopmanError):
    """Too many items of a stream had to be skipped."""

    exit_code = 3


class ArtifactFormatError(KoopmanError):
    """A binary operator or checkpoint file cannot be decoded."""

    exit_code = 4


@dataclass(frozen=True)
class ItemError:
    """A stream item that could not be used; yielded in place of the item."""

    index: int
    reason: str
