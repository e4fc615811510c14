"""Exception types shared across the package."""

from __future__ import annotations


class LocIndexError(Exception):
    """Base class for all package errors."""


class ConstructionError(LocIndexError, ValueError):
    """Input data violates a type invariant."""


class NumericalNonConvergence(LocIndexError, RuntimeError):
    """An iterative solver hit its iteration cap."""


class UnreliableGap(LocIndexError):
    """No spectral gap large enough to claim an index."""


class InconsistentSystem(LocIndexError):
    """A linear relation system has no solution."""

    def __init__(self, message: str, witness: list | None = None):
        super().__init__(message)
        self.witness = witness or []
