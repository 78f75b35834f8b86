"""Exception classes. Each maps to a distinct CLI exit code."""


class StgpError(Exception):
    exit_code = 1


class ConfigError(StgpError, ValueError):
    exit_code = 2


class InputError(StgpError, ValueError):
    """Bad user data: parse failures, shape mismatches, NaNs where not allowed."""

    exit_code = 3


class NumericalError(StgpError, ArithmeticError):
    """Numerical degeneracy (non-positive innovation variance, unstable F, ...)."""

    exit_code = 4


class ToleranceError(StgpError):
    exit_code = 5
