"""Exception types shared across the package.

The CLI maps these onto process exit codes, so every failure path in the
library should raise one of them rather than a bare ``ValueError``.
"""


class VPBoostError(Exception):
    """Base class for all package errors."""


class InputError(VPBoostError, ValueError):
    """Bad shapes, out-of-range labels, or invalid scalar arguments."""


class ConfigError(VPBoostError):
    """Unknown keys, conflicting settings, or invariant violations in a run config."""


class DataError(VPBoostError):
    """Unreadable or malformed data, or a generator that cannot meet its contract."""


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GenerationError(DataError):
    pass


class DegenerateClassError(DataError):
    """A class is missing from the targets, so the optimal constant is infinite."""


class NumericalError(VPBoostError, ArithmeticError):
    """Factorization failure or non-finite values inside the optimizer."""
