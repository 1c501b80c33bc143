"""Monte Carlo uncertainty quantification for the factor-model fit.

Each iteration resamples the overlap proportions from a Dirichlet
distribution, perturbs every observed lift by its own standard error,
refits the model, and records the parameters and derived quantities.
Percentile summaries over the converged iterations give the parameter
uncertainty.

Every iteration draws from its own RNG substream derived from
``(seed, iteration index)``, so the per-iteration results - and therefore
the summaries - are identical no matter how many workers execute them.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import AllFitsFailedError, LiftLabError, ValidationError
from .estimator import FitConfig, FitResult, fit
from .factor_model import (
    Hyperparams,
    LiftObservation,
    ObservedLifts,
    OverlapDistribution,
    combo_key,
)

log = logging.getLogger(__name__)

# Perturbed lifts are clipped here so they stay valid model inputs.
LIFT_FLOOR = -0.999


@dataclass(frozen=True)
class McConfig:
    """Monte Carlo settings.

    ``dirichlet_concentration`` multiplies the base proportions to give the
    Dirichlet parameters (use the cohort size behind the proportion
    estimates to mimic multinomial sampling error).  Lift noise magnitudes
    are not configured here; they come from the standard errors on the
    observations themselves.  ``workers`` > 1 runs iterations in a process
    pool; results do not depend on it.
    """

    seed: int
    dirichlet_concentration: float
    iterations: int = 5000
    workers: Optional[int] = None
    warm_start: bool = True

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValidationError("iterations must be at least 1")
        if not self.dirichlet_concentration > 0:
            raise ValidationError("dirichlet_concentration must be strictly positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be an unsigned 64-bit integer")
        if self.workers is not None and self.workers < 1:
            raise ValidationError("workers must be at least 1 when given")


@dataclass(frozen=True)
class QuantitySummary:
    """Location and spread of one sampled quantity."""

    mean: float
    median: float
    p2_5: float
    p25: float
    p75: float
    p97_5: float

    def __post_init__(self) -> None:
        ordered = (self.p2_5, self.p25, self.median, self.p75, self.p97_5)
        if any(a > b for a, b in zip(ordered, ordered[1:])):
            raise ValidationError("percentiles must be monotone")

    @property
    def interval_95(self) -> tuple:
        return (self.p2_5, self.p97_5)


@dataclass(frozen=True)
class McSummary:
    """Posterior-style summaries over the converged iterations."""

    iterations: int
    failures: int
    parameters: dict
    derived: dict


@dataclass(frozen=True, eq=False)
class McResult:
    """Summary plus the full per-iteration trace.

    ``draws[i]`` holds the quantities of iteration ``i`` (NaN when the fit
    errored); ``converged[i]`` flags iterations that fed the summaries.
    """

    summary: McSummary
    quantity_names: tuple
    draws: np.ndarray = field(repr=False)
    converged: np.ndarray = field(repr=False)


def sample_proportions(
    base: OverlapDistribution, concentration: float, rng: np.random.Generator
) -> OverlapDistribution:
    """One Dirichlet draw with parameters ``concentration * base masses``.

    Combinations with zero base mass keep exactly zero mass (the Dirichlet
    is degenerate on the observed support), so resampling never invents
    segments that were never observed.
    """
    if not concentration > 0:
        raise ValidationError("concentration must be strictly positive")
    alpha = concentration * base.masses
    draws = np.zeros_like(alpha)
    positive = alpha > 0
    draws[positive] = rng.standard_gamma(alpha[positive])
    total = draws.sum()
    if not total > 0:
        raise LiftLabError("Dirichlet draw degenerated to zero total mass")
    return OverlapDistribution(journey_set=base.journey_set, masses=draws / total)


def _perturb(obs_value: LiftObservation, rng: np.random.Generator) -> LiftObservation:
    z = rng.standard_normal()
    if obs_value.se == 0.0:
        return obs_value
    lift = max(obs_value.lift + obs_value.se * z, LIFT_FLOOR)
    return LiftObservation(lift=lift, se=obs_value.se)


def perturb_lifts(obs: ObservedLifts, rng: np.random.Generator) -> ObservedLifts:
    """Add one standard-normal-scaled draw to every observed lift.

    Draw order is fixed (ON/OFF lifts in journey order, then pure lifts in
    journey order, then the global benchmark) so a given RNG state always
    produces the same perturbation.  Draws are clipped at -0.999 to keep
    the lifts valid model inputs; standard errors pass through unchanged.
    """
    journeys = obs.journey_set.journeys
    onoff = {j: _perturb(obs.onoff[j], rng) for j in journeys}
    pure = {j: _perturb(obs.pure[j], rng) for j in journeys if j in obs.pure}
    global_observed = (
        _perturb(obs.global_observed, rng) if obs.global_observed is not None else None
    )
    return ObservedLifts(
        journey_set=obs.journey_set,
        onoff=onoff,
        pure=pure,
        global_observed=global_observed,
    )


# ---------------------------------------------------------------------------
# Iteration plumbing
# ---------------------------------------------------------------------------


def quantity_names(journey_set, kappa_subsets) -> tuple:
    """Column layout shared by traces and summaries."""
    names = [f"f.{j}" for j in journey_set.journeys]
    names += [f"kappa.{combo_key(s)}" for s in kappa_subsets]
    names += [f"pure_lift.{j}" for j in journey_set.journeys]
    names += [f"synergy.{combo_key(s)}" for s in kappa_subsets]
    names += [f"onoff_lift.{j}" for j in journey_set.journeys]
    names.append("global_lift")
    return tuple(names)


def _extract(result: FitResult, kappa_subsets: tuple) -> np.ndarray:
    theta = result.theta
    derived = result.derived
    values = [theta.f[j] for j in theta.journey_set.journeys]
    values += [theta.kappa[s] for s in kappa_subsets]
    values += [derived.pure_lifts[j] for j in theta.journey_set.journeys]
    values += [derived.synergies[combo_key(s)] for s in kappa_subsets]
    values += [derived.onoff_lifts[j] for j in theta.journey_set.journeys]
    values.append(derived.global_lift)
    return np.array(values)


def _iteration_rng(seed: int, index: int) -> np.random.Generator:
    # Substream mixing of (seed, index): stable, order-free, spawn-safe.
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def _run_range(args) -> list:
    (start, stop, seed, p, obs, hyper, fit_config, concentration, kappa_subsets) = args
    rows = []
    for i in range(start, stop):
        rng = _iteration_rng(seed, i)
        p_i = sample_proportions(p, concentration, rng)
        obs_i = perturb_lifts(obs, rng)
        try:
            result = fit(p_i, obs_i, hyper, fit_config)
        except LiftLabError:
            rows.append((i, False, None))
            continue
        rows.append((i, result.converged, _extract(result, kappa_subsets)))
    return rows


def _summarize(values: np.ndarray) -> QuantitySummary:
    return QuantitySummary(
        mean=float(np.mean(values)),
        median=float(np.median(values)),
        p2_5=float(np.percentile(values, 2.5)),
        p25=float(np.percentile(values, 25.0)),
        p75=float(np.percentile(values, 75.0)),
        p97_5=float(np.percentile(values, 97.5)),
    )


def run_monte_carlo(
    p: OverlapDistribution,
    obs: ObservedLifts,
    hyper: Hyperparams,
    fit_config: Optional[FitConfig] = None,
    mc: Optional[McConfig] = None,
) -> McResult:
    """Resample, refit, and summarize the empirical parameter distribution.

    Summaries cover only converged iterations; the failure count is
    reported.  With ``warm_start`` every iteration starts from the
    deterministic fit of the unperturbed inputs.

    Raises:
        AllFitsFailedError: no iteration converged.
    """
    if mc is None:
        raise ValidationError("an McConfig with a seed is required")
    fit_config = fit_config or FitConfig()

    base = fit(p, obs, hyper, fit_config)
    kappa_subsets = base.theta.kappa_subsets
    names = quantity_names(p.journey_set, kappa_subsets)
    iter_config = fit_config
    if mc.warm_start:
        iter_config = dataclasses.replace(fit_config, initial_theta=base.theta)

    n = mc.iterations
    draws = np.full((n, len(names)), np.nan)
    converged = np.zeros(n, dtype=bool)

    task = (mc.seed, p, obs, hyper, iter_config, mc.dirichlet_concentration, kappa_subsets)
    if mc.workers is None or mc.workers <= 1 or n == 1:
        chunks = [_run_range((0, n) + task)]
    else:
        step = max(1, -(-n // (mc.workers * 4)))
        ranges = [(lo, min(lo + step, n)) for lo in range(0, n, step)]
        with ProcessPoolExecutor(max_workers=mc.workers) as pool:
            chunks = list(pool.map(_run_range, [r + task for r in ranges]))

    for rows in chunks:
        for i, ok, values in rows:
            converged[i] = ok
            if values is not None:
                draws[i] = values

    n_converged = int(converged.sum())
    log.debug("monte carlo: %d/%d iterations converged", n_converged, n)
    if n_converged == 0:
        raise AllFitsFailedError(f"none of the {n} Monte Carlo iterations converged")

    kept = draws[converged]
    summaries = {name: _summarize(kept[:, k]) for k, name in enumerate(names)}
    n_params = p.journey_set.size + len(kappa_subsets)
    summary = McSummary(
        iterations=n,
        failures=n - n_converged,
        parameters={name: summaries[name] for name in names[:n_params]},
        derived={name: summaries[name] for name in names[n_params:]},
    )
    return McResult(summary=summary, quantity_names=names, draws=draws, converged=converged)


def trace_csv(result: McResult) -> str:
    """Per-iteration trace as CSV text (header row included)."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["iteration", "converged", *result.quantity_names])
    for i in range(result.draws.shape[0]):
        values = [repr(float(v)) for v in result.draws[i]]
        writer.writerow([i, int(result.converged[i]), *values])
    return buffer.getvalue()
