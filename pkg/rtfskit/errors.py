"""Exception hierarchy shared by the library and the CLI."""

from __future__ import annotations


class RtfsError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for this failure."""

    exit_code = 1


class UsageError(RtfsError):
    exit_code = 2


class ConfigError(RtfsError):
    exit_code = 2


class FormatError(RtfsError):
    """A file could not be parsed or does not satisfy its format contract."""

    exit_code = 3


class WeightError(FormatError):
    """A weight container does not match the tensors the graph requires."""

    def __init__(self, message: str, tensor: str | None = None) -> None:
        super().__init__(message)
        self.tensor = tensor


class ShapeError(RtfsError):
    exit_code = 3


class NumericalError(RtfsError):
    exit_code = 4
