"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage/validation -> 1, numeric -> 2,
I/O -> 3.
"""


class ICLIPError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class UsageError(ICLIPError, ValueError):
    """Invalid arguments or configuration."""


class DimensionError(UsageError):
    """Tensor shapes or embedding dimensions do not agree."""


class FixtureParseError(UsageError):
    """A fixture line could not be parsed or failed validation."""

    def __init__(self, message, line_no=None, field=None):
        self.line_no = line_no
        self.field = field
        prefix = f"line {line_no}: " if line_no is not None else ""
        if field is not None:
            prefix += f"field '{field}': "
        super().__init__(prefix + message)


class FormatError(UsageError):
    """File is well-formed but inconsistent (version, dimension, hashes)."""


class NumericError(ICLIPError, ArithmeticError):
    """NaN/Inf detected, zero-norm rows, failed gradient checks."""

    exit_code = 2
