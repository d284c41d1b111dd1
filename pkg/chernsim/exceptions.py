"""Exception hierarchy for chernsim."""

from __future__ import annotations


class ChernsimError(Exception):
    """Root of every error raised by chernsim."""


class DimensionError(ChernsimError, ValueError):
    """An arm, hypothesis or parameter index/shape is out of range."""


class AssumptionError(ChernsimError):
    """A rule needs a positive minimum gap (eta0 > 0) and the table has none."""


class DatasetError(ChernsimError):
    """A CSV dataset could not be ingested."""


class ConfigError(ChernsimError):
    """Invalid experiment configuration.

    Attributes:
        path: Config file the error refers to (None for CLI flags).
        line: 1-based line in that file, when it could be located.
    """

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None) -> None:
        self.path = path
        self.line = line
        self.message = message
        super().__init__(self.describe())

    def describe(self) -> str:
        """Render as ``file:line: message``."""
        if self.path is None:
            return self.message
        if self.line is None:
            return f"{self.path}: {self.message}"
        return f"{self.path}:{self.line}: {self.message}"
