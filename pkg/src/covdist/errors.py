"""Exception hierarchy shared across the package."""

from __future__ import annotations


class CovdistError(Exception):
    """Base class for all package errors."""


class ConfigError(CovdistError, ValueError):
    """Invalid user configuration or input shape."""


class RegimeError(CovdistError, ValueError):
    """The estimator is not defined for the requested M/N regime."""


class NumericalError(CovdistError, ArithmeticError):
    """A numerical routine failed to deliver the requested accuracy."""


class DegenerateSpectrumError(NumericalError):
    """Eigenvalues coincide where strict separation is required."""


class SingularEvaluationError(NumericalError):
    """A rational function was evaluated at (or too close to) a pole."""


class ClusterOverlapError(NumericalError):
    """The equation Gamma(omega) = 1 has non-real or repeated solutions."""


class QuadratureError(NumericalError):
    """Contour quadrature did not converge within the node cap."""


class BranchCutError(NumericalError):
    """A logarithm argument came too close to the negative real axis."""
