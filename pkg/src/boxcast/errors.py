"""Exception hierarchy shared by every module in the package.

Each class maps to one failure family so callers (and the CLI exit-code
table) can branch on category rather than on message text.
"""


class BoxcastError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(BoxcastError, ValueError):
    """Invalid configuration: bad hyperparameter, unknown key, bad flag combo."""


class ShapeError(BoxcastError, ValueError):
    """Tensor dimension mismatch. Messages name both offending shapes."""


class DataError(BoxcastError, ValueError):
    """Invalid data content: gaps, non-positive sizes, short tracks, bad files."""


class ParseError(DataError):
    """Malformed input file. Carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericError(BoxcastError, ArithmeticError):
    """Non-finite value where a finite one is required (NaN/inf loss, grads)."""
