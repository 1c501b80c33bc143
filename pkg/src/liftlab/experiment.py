"""Observed A/B lift estimation with delta-method uncertainty.

A two-branch experiment is summarised by its raw tallies.  The OLS fit of
conversion on a treatment indicator reduces to group means, so the
coefficients are computed in closed form: the intercept is the control
conversion rate and the slope is the treatment-minus-control difference.
The relative lift ``beta1 / beta0`` gets a first-order (delta method)
variance from the coefficient covariance, and a 95% normal interval.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NegativeVarianceError, ValidationError, ZeroBaselineError

# Two-sided 95% normal quantile used for all reported intervals.
Z_95 = 1.96

# Absolute floor below which a quadratic form is treated as invalid rather
# than as floating-point noise.
PSD_TOLERANCE = 1e-12


@dataclass(frozen=True)
class ExperimentCounts:
    """Raw two-branch tallies: users and converters per branch."""

    n_treat: int
    m_treat: int
    n_ctrl: int
    m_ctrl: int

    def __post_init__(self) -> None:
        if self.n_treat < 1 or self.n_ctrl < 1:
            raise ValidationError("both branches need at least one user")
        if not (0 <= self.m_treat <= self.n_treat):
            raise ValidationError(
                f"treatment converters must lie in [0, {self.n_treat}], got {self.m_treat}"
            )
        if not (0 <= self.m_ctrl <= self.n_ctrl):
            raise ValidationError(
                f"control converters must lie in [0, {self.n_ctrl}], got {self.m_ctrl}"
            )

    def scaled(self, k: int) -> "ExperimentCounts":
        """Same rates at k times the sample size."""
        return ExperimentCounts(self.n_treat * k, self.m_treat * k, self.n_ctrl * k, self.m_ctrl * k)

    def swapped(self) -> "ExperimentCounts":
        """Branches relabelled: treatment becomes control and vice versa."""
        return ExperimentCounts(self.n_ctrl, self.m_ctrl, self.n_treat, self.m_treat)


@dataclass(frozen=True)
class ConversionRates:
    """Empirical conversion rate per branch."""

    p_treat: float
    p_ctrl: float

    def __post_init__(self) -> None:
        for name, value in (("p_treat", self.p_treat), ("p_ctrl", self.p_ctrl)):
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {value}")


@dataclass(frozen=True, eq=False)
class RegressionCoefficients:
    """Group-mean regression coefficients and their sampling covariance.

    ``beta0`` is the control conversion rate, ``beta1`` the treatment
    minus control difference (1-for-treatment indicator coding, so the
    implied lift is treatment relative to control).  ``cov`` is the 2x2
    covariance of (beta0, beta1) from per-group binomial variances.
    """

    beta0: float
    beta1: float
    cov: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (2, 2):
            raise ValidationError(f"cov must be 2x2, got shape {cov.shape}")
        if not np.isfinite(cov).all():
            raise ValidationError("cov must be finite")
        if abs(cov[0, 1] - cov[1, 0]) > PSD_TOLERANCE:
            raise ValidationError("cov must be symmetric")
        if cov[0, 0] < 0 or cov[1, 1] < 0:
            raise ValidationError("cov must have non-negative diagonal")
        det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
        if det < -PSD_TOLERANCE:
            raise ValidationError(f"cov must be positive semidefinite, determinant {det}")
        object.__setattr__(self, "cov", cov)


@dataclass(frozen=True)
class LiftEstimate:
    """Relative lift with its standard error and 95% interval."""

    lift: float
    se: float
    ci_low: float
    ci_high: float

    def __post_init__(self) -> None:
        if self.se < 0:
            raise ValidationError(f"se must be non-negative, got {self.se}")
        if not self.ci_low <= self.lift <= self.ci_high:
            raise ValidationError("interval must bracket the point estimate")


def conversion_rates(counts: ExperimentCounts) -> ConversionRates:
    """Per-branch empirical conversion rates."""
    return ConversionRates(
        p_treat=counts.m_treat / counts.n_treat,
        p_ctrl=counts.m_ctrl / counts.n_ctrl,
    )


def regression_coefficients(counts: ExperimentCounts) -> RegressionCoefficients:
    """Closed-form group-mean coefficients with binomial covariance.

    The design matrix has an intercept and a single binary indicator, so
    OLS is exactly the pair of group means; per-group binomial variances
    give the sampling covariance of those means (heteroskedastic, which is
    what a resampling check converges to).
    """
    rates = conversion_rates(counts)
    var_ctrl = rates.p_ctrl * (1.0 - rates.p_ctrl) / counts.n_ctrl
    var_treat = rates.p_treat * (1.0 - rates.p_treat) / counts.n_treat
    cov = np.array(
        [
            [var_ctrl, -var_ctrl],
            [-var_ctrl, var_treat + var_ctrl],
        ]
    )
    return RegressionCoefficients(
        beta0=rates.p_ctrl,
        beta1=rates.p_treat - rates.p_ctrl,
        cov=cov,
    )


def delta_method_lift(coefs: RegressionCoefficients) -> LiftEstimate:
    """First-order variance of the lift ratio ``beta1 / beta0``.

    The gradient of the ratio is ``[-beta1 / beta0**2, 1 / beta0]``; the
    variance is the quadratic form of that gradient with the coefficient
    covariance.

    Raises:
        ZeroBaselineError: beta0 is zero, so the ratio is undefined.
        NegativeVarianceError: the quadratic form is negative beyond
            floating-point tolerance, meaning the covariance is invalid.
    """
    if coefs.beta0 == 0.0:
        raise ZeroBaselineError("control conversion rate is zero; lift undefined")
    lift = coefs.beta1 / coefs.beta0
    grad = np.array([-coefs.beta1 / coefs.beta0**2, 1.0 / coefs.beta0])
    var = float(grad @ coefs.cov @ grad)
    if var < -PSD_TOLERANCE:
        raise NegativeVarianceError(f"delta-method variance is negative: {var}")
    se = float(np.sqrt(max(var, 0.0)))
    return LiftEstimate(lift=lift, se=se, ci_low=lift - Z_95 * se, ci_high=lift + Z_95 * se)


def estimate_lift(counts: ExperimentCounts) -> LiftEstimate:
    """Observed lift with delta-method interval, straight from tallies.

    Raises:
        ZeroBaselineError: the control branch has no converters.
    """
    if counts.m_ctrl == 0:
        raise ZeroBaselineError("control branch has zero converters; lift undefined")
    return delta_method_lift(regression_coefficients(counts))
