"""Regularized nonlinear least-squares fit of the factor model.

The objective is the squared norm of the stacked residual vector (ON/OFF
lift residuals, interaction ridge terms, pure-lift anchors).  It is
minimized with a damped (Levenberg-Marquardt) iteration over the log of
the parameters, so every iterate maps to strictly positive factors and no
bound constraints are needed.  The problem is tiny (at most ~15 residuals
by ~15 parameters), so the solver is implemented here directly with dense
linear algebra and an analytic Jacobian.
"""

from __future__ import annotations

import logging
import math
import warnings as _warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateProblemError, NonFiniteObjectiveError, ValidationError
from .factor_model import (
    DerivedQuantities,
    Hyperparams,
    ModelParams,
    ObservedLifts,
    OverlapDistribution,
    ResidualSystem,
    derived_quantities,
)

log = logging.getLogger(__name__)

# Initial damping is this fraction of the largest normal-matrix diagonal.
_DAMPING_SEED = 1e-3


@dataclass(frozen=True)
class FitConfig:
    """Solver settings.

    ``gradient_tolerance`` applies to the max-norm of the objective
    gradient; ``step_tolerance`` to the relative parameter change.  When
    ``initial_theta`` is omitted the solver starts from ``f_j = 1 +
    observed ON/OFF lift`` and all interactions at 1.  ``interaction_order``
    caps the size of interaction subsets (None means the full hierarchy).
    """

    max_iterations: int = 200
    gradient_tolerance: float = 1e-10
    step_tolerance: float = 1e-12
    initial_theta: Optional[ModelParams] = None
    interaction_order: Optional[int] = None

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be at least 1")
        if self.gradient_tolerance <= 0 or self.step_tolerance <= 0:
            raise ValidationError("tolerances must be strictly positive")


@dataclass(frozen=True, eq=False)
class FitResult:
    """Fitted parameters plus convergence and residual diagnostics.

    ``objective_history`` holds the objective value at the start and after
    each accepted step (non-increasing by construction).
    """

    theta: ModelParams
    objective_value: float
    residuals: np.ndarray = field(repr=False)
    converged: bool
    reason: str
    iterations: int
    derived: DerivedQuantities
    warnings: tuple = ()
    objective_history: tuple = field(default=(), repr=False)


def _build_system(
    p: OverlapDistribution,
    obs: ObservedLifts,
    hyper: Hyperparams,
    config: FitConfig,
) -> ResidualSystem:
    if config.initial_theta is not None:
        theta0 = config.initial_theta
        if theta0.journey_set != p.journey_set:
            raise ValidationError("initial_theta uses a different journey set")
        subsets = theta0.kappa_subsets
    else:
        subsets = p.journey_set.kappa_subsets(config.interaction_order)
    return ResidualSystem(p, obs, hyper, subsets)


def _initial_params(system: ResidualSystem, config: FitConfig) -> np.ndarray:
    if config.initial_theta is not None:
        return system.pack(config.initial_theta)
    x0 = np.zeros(system.n_params)
    x0[: system.n_journeys] = np.log1p(system.lift_targets)
    return x0


def objective_gradient(
    theta: ModelParams,
    p: OverlapDistribution,
    obs: ObservedLifts,
    hyper: Hyperparams,
) -> np.ndarray:
    """Gradient of the squared-residual objective in log-parameter space.

    Entries follow the parameter layout: journeys first, then kappa
    subsets in size-then-journey order.

    Raises:
        NonFiniteObjectiveError: the residuals are not finite at ``theta``.
    """
    system = ResidualSystem(p, obs, hyper, theta.kappa_subsets)
    params = system.pack(theta)
    r = system.residuals(params)
    if not np.isfinite(r).all():
        raise NonFiniteObjectiveError("residuals are non-finite at the given parameters")
    return 2.0 * (system.jacobian(params).T @ r)


def fit(
    p: OverlapDistribution,
    obs: ObservedLifts,
    hyper: Hyperparams,
    config: Optional[FitConfig] = None,
) -> FitResult:
    """Minimize the regularized objective; deterministic for fixed inputs.

    Levenberg-Marquardt with gain-ratio damping control: a step is accepted
    only if it lowers the objective, so the accepted objective sequence is
    non-increasing.  Terminates on the gradient max-norm, on a negligible
    relative step, or at ``max_iterations`` (returning the best iterate
    with ``converged=False``).

    Raises:
        NonFiniteObjectiveError: residuals are non-finite at the start.
        DegenerateProblemError: there are no residual terms at all.
    """
    config = config or FitConfig()
    system = _build_system(p, obs, hyper, config)
    if system.n_residuals == 0:
        raise DegenerateProblemError("the residual vector is empty; nothing to fit")

    fit_warnings = []
    if hyper.lambda_inter == 0.0 and (hyper.w_pure == 0.0 or not system.anchor_journeys):
        message = (
            "no regularization is active (lambda_inter = 0 and no effective pure "
            "anchors); interaction factors may be under-determined"
        )
        fit_warnings.append(message)
        _warnings.warn(message, RuntimeWarning, stacklevel=2)

    x = _initial_params(system, config)
    r = system.residuals(x)
    if not np.isfinite(r).all():
        raise NonFiniteObjectiveError(
            "residuals are non-finite at the initial point; check the inputs"
        )
    jac = system.jacobian(x)
    normal = jac.T @ jac
    g = jac.T @ r
    cost = float(r @ r)
    history = [cost]

    mu = _DAMPING_SEED * float(np.max(np.diag(normal))) if system.n_params else 0.0
    if mu <= 0.0 or not math.isfinite(mu):
        mu = _DAMPING_SEED
    nu = 2.0

    converged = False
    reason = "max_iterations"
    iterations = 0

    if float(np.max(np.abs(2.0 * g))) <= config.gradient_tolerance:
        converged, reason = True, "gradient"

    while not converged and iterations < config.max_iterations:
        iterations += 1
        try:
            step = np.linalg.solve(normal + mu * np.eye(system.n_params), -g)
        except np.linalg.LinAlgError:
            mu *= nu
            nu *= 2.0
            continue
        if float(np.linalg.norm(step)) <= config.step_tolerance * (
            float(np.linalg.norm(x)) + config.step_tolerance
        ):
            converged, reason = True, "step"
            break

        x_new = x + step
        r_new = system.residuals(x_new)
        cost_new = float(r_new @ r_new) if np.isfinite(r_new).all() else math.inf
        predicted = float(step @ (mu * step - g))
        if predicted > 0.0 and math.isfinite(cost_new):
            rho = (cost - cost_new) / predicted
        else:
            rho = 1.0 if cost_new < cost else -1.0

        if rho > 0.0 and cost_new < math.inf:
            x, r, cost = x_new, r_new, cost_new
            history.append(cost)
            jac = system.jacobian(x)
            normal = jac.T @ jac
            g = jac.T @ r
            mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
            if float(np.max(np.abs(2.0 * g))) <= config.gradient_tolerance:
                converged, reason = True, "gradient"
        else:
            mu *= nu
            nu *= 2.0

    theta = system.unpack(x)
    log.debug(
        "fit finished: converged=%s reason=%s iterations=%d objective=%.3e",
        converged,
        reason,
        iterations,
        cost,
    )
    return FitResult(
        theta=theta,
        objective_value=cost,
        residuals=r,
        converged=converged,
        reason=reason,
        iterations=iterations,
        derived=derived_quantities(theta, p),
        warnings=tuple(fit_warnings),
        objective_history=tuple(history),
    )
