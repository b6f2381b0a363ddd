"""Exception hierarchy shared by every module.

Each class carries the CLI exit code it maps to, so the harness can turn any
failure into the right process status without a lookup table.
"""

from __future__ import annotations


class OcetsError(Exception):
    exit_code = 3


class ConfigError(OcetsError):
    exit_code = 1


class InvalidParameter(ConfigError):
    pass


class DataError(OcetsError):
    exit_code = 2


class IoError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, row: int | None = None, col: int | None = None):
        loc = ""
        if row is not None:
            loc = f" (row {row}" + (f", col {col})" if col is not None else ")")
        super().__init__(message + loc)
        self.row = row
        self.col = col


class SchemaError(DataError):
    pass


class InsufficientData(DataError):
    pass


class InvalidInput(DataError):
    pass


class NumericError(OcetsError):
    exit_code = 3


class InvalidDimension(NumericError):
    pass


class SingularMatrix(NumericError):
    def __init__(self, message: str, smallest_pivot: float):
        super().__init__(f"{message} (smallest pivot {smallest_pivot:.3e})")
        self.smallest_pivot = smallest_pivot


class OutOfSupport(NumericError):
    pass


class DegenerateDistribution(NumericError):
    pass


class PreconditionError(NumericError):
    def __init__(self, message: str, failed: list[str] | None = None):
        super().__init__(message)
        self.failed = list(failed or [])


class InvariantViolation(OcetsError):
    exit_code = 4
