"""Error hierarchy shared by the library and the command-line harness.

The CLI maps these onto process exit codes: parameter/state problems exit
with 2, resource limits with 3, numeric failures with 4.
"""

from __future__ import annotations


class BBMLabError(Exception):
    """Base class for all library errors."""


class ParameterError(BBMLabError, ValueError):
    """Invalid model parameter, configuration value, or argument domain."""


class StateError(BBMLabError, RuntimeError):
    """Operation applied to data that was not produced in the required mode."""


class ResourceLimitError(BBMLabError, RuntimeError):
    """A configured resource budget (population cap, attempt budget) ran out."""

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.context = dict(context)


class NumericError(BBMLabError, ArithmeticError):
    """Numeric instability or an internal consistency check failure."""
