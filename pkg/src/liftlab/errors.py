"""Exception types shared across the package."""

from __future__ import annotations


class LiftLabError(Exception):
    """Base class for all liftlab errors."""


class ValidationError(LiftLabError, ValueError):
    """An input object violates one of its invariants."""


class ConfigError(LiftLabError, ValueError):
    """A config document failed schema or cross-field validation.

    ``messages`` holds one field-level message per violation.
    """

    def __init__(self, messages):
        if isinstance(messages, str):
            messages = [messages]
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))


class ZeroBaselineError(LiftLabError, ValueError):
    """Control conversion rate is zero, so a relative lift is undefined."""


class NegativeVarianceError(LiftLabError, ValueError):
    """The delta-method quadratic form came out negative beyond tolerance."""


class NonFiniteObjectiveError(LiftLabError, ArithmeticError):
    """Residuals became non-finite; the fit inputs are inconsistent."""


class DegenerateProblemError(LiftLabError, ValueError):
    """The least-squares problem has no residual terms to fit."""


class AllFitsFailedError(LiftLabError, RuntimeError):
    """Every Monte Carlo iteration failed to converge."""


class InvalidWorldError(LiftLabError, ValueError):
    """A synthetic world spec describes impossible conversion probabilities."""
