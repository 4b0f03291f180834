"""Exception hierarchy shared by the library and the command-line front end."""

from __future__ import annotations


class MortdriftError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(MortdriftError, ValueError):
    """Input data violates a documented invariant."""


class DegenerateError(MortdriftError, ArithmeticError):
    """A quantity is numerically undefined for the given inputs."""
