"""Exception types shared across the package."""
from __future__ import annotations


class SvarError(Exception):
    """Base class for package-specific errors."""


class DimensionError(SvarError, ValueError):
    """Array shapes are inconsistent with the model dimensions."""


class SchemeError(SvarError, ValueError):
    """An observation scheme cannot be applied to the requested span."""


class CapacityError(SvarError):
    """A combinatorial enumeration would exceed the configured budget."""

    def __init__(self, message: str, required: int | None = None):
        super().__init__(message)
        self.required = required


class NumericalError(SvarError, RuntimeError):
    """A numerical operation failed (singular factor, overflow, ...).

    ``time_index`` locates the failure within a block when applicable.
    """

    def __init__(self, message: str, time_index: int | None = None):
        super().__init__(message)
        self.time_index = time_index


class DegenerateComponentError(NumericalError):
    """A mixture component lost essentially all responsibility mass."""

    def __init__(self, message: str, series: int | None = None, component: int | None = None):
        super().__init__(message)
        self.series = series
        self.component = component
