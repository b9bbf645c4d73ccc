"""Exception hierarchy for dynamic principal component fitting."""

from __future__ import annotations


class DpcError(Exception):
    """Base class for every error raised by dpca."""


class InputError(DpcError, ValueError):
    """Input data is malformed, non-finite or otherwise unusable."""


class ShapeError(InputError):
    """Array dimensions do not agree."""


class ConfigError(InputError):
    """A configuration object holds an invalid value."""


class DegenerateFitError(DpcError, ArithmeticError):
    """A linear system or regression became singular during fitting."""


class ExactFitError(DegenerateFitError):
    """An M-scale collapsed to zero, so robust weights are undefined.

    Attributes:
        series: Index of the offending series
        label: Label of the offending series, when known
    """

    def __init__(self, series: int, label: str | None = None, detail: str = ""):
        self.series = series
        self.label = label
        name = f"'{label}'" if label is not None else f"#{series}"
        message = f"M-scale of series {name} is zero (exact fit)"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


class AnalyticFormUnavailable(DpcError):
    """The one-lag closed form cannot be evaluated for these loadings."""


class DomainError(DpcError, ValueError):
    """An argument lies outside the domain of a closed-form expression."""
