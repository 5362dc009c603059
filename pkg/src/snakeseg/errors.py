"""Exception types shared across the package."""
from __future__ import annotations


class SnakesegError(Exception):
    """Base class for every error raised by snakeseg."""


class ParameterError(SnakesegError, ValueError):
    """An argument violates its documented precondition."""


class NiftiError(SnakesegError):
    """A NIfTI payload cannot be parsed or produced."""


class ParseError(SnakesegError):
    """A text input (detections, labels, config) is malformed."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
