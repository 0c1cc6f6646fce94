"""Typed exceptions raised across the package.

Every exception carries an ``exit_code`` so the command-line front end can
map failures onto its documented exit statuses without string matching.
"""

from __future__ import annotations


class UniscatterError(Exception):
    """Base class for all package errors (internal failure by default)."""

    exit_code = 4


class ConfigError(UniscatterError):
    """Invalid configuration; carries every violation, not only the first."""

    exit_code = 1

    def __init__(self, messages: list[str]):
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))


class PreconditionError(UniscatterError, ValueError):
    """A documented precondition of an operation does not hold."""

    exit_code = 2


class SpaceMismatchError(PreconditionError):
    """Operator and state live on different spaces (H versus H0)."""


class DimensionMismatchError(PreconditionError):
    """Operator and vector dimensions disagree."""


class CoinConstraintError(PreconditionError):
    """Coin parameters violate a^2 + b^2 = 1 or the a > 0 requirement."""


class DecayBoundError(PreconditionError):
    """A coin deviation exceeds its declared decay envelope."""

    def __init__(self, message: str, site: int):
        self.site = site
        super().__init__(message)


class ShortRangeError(PreconditionError):
    """The weighted perturbation grows too fast across sub-windows."""

    def __init__(self, message: str, norms: list[float]):
        self.norms = list(norms)
        super().__init__(message)


class NoWrapError(PreconditionError):
    """Evolution horizon would carry probability around the periodic window."""

    def __init__(self, message: str, required_half_width: int):
        self.required_half_width = required_half_width
        super().__init__(message)


class ThresholdProximityError(PreconditionError):
    """Requested angle lies too close to a band edge or an eigenphase."""

    def __init__(self, message: str, theta: float, nearest: float):
        self.theta = theta
        self.nearest = nearest
        super().__init__(message)


class PacketSpreadError(PreconditionError):
    """Requested packet is too wide in position space for the window."""


class NumericalError(UniscatterError, ArithmeticError):
    """Numerical failure: singular factorization or non-convergence."""

    exit_code = 3


class SingularOperatorError(NumericalError):
    """Factorization met a pivot below the relative threshold."""

    def __init__(self, message: str, pivot: float):
        self.pivot = pivot
        super().__init__(message)


class ConvergenceError(NumericalError):
    """An iteration did not reach its tolerance."""


class BranchTrackingError(NumericalError):
    """Dispersion branches could not be followed continuously on the grid."""


class BoundaryLimitError(NumericalError):
    """A boundary-value sequence does not settle as the radius approaches 1."""

    def __init__(self, message: str, trend: list[float]):
        self.trend = list(trend)
        super().__init__(message)
