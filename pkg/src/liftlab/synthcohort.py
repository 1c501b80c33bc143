"""Synthetic cohorts with known ground truth, and brute-force oracles.

A world spec fixes the journey overlap distribution, the true
multiplicative parameters, a baseline conversion rate, and a seed.  Every
generated user gets a combination membership, a single branch bit shared
across all virtual experiments, and a latent uniform draw.  Under any
activation scenario the user converts exactly when the latent draw falls
below the scenario's conversion probability, so each outcome is marginally
Bernoulli(base_rate * F(effective combination)) while scenarios stay
comparable across the same users.

``exposure_bonus`` adds a flat conversion-probability bonus whenever a
user has at least one active journey.  The multiplicative model has no
such term, which makes the bonus a controlled source of unmodeled effect
for validation studies.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from itertools import combinations as iter_combinations
from typing import Iterable, Optional

import numpy as np

from .errors import InvalidWorldError, ValidationError, ZeroBaselineError
from .experiment import ExperimentCounts, estimate_lift
from .factor_model import (
    Combination,
    JourneySet,
    ModelParams,
    ObservedLifts,
    OverlapDistribution,
    combination_factor,
    combo_key,
)

ENUMERATION_LIMIT = 12


@dataclass(frozen=True)
class WorldSpec:
    """Ground truth for a synthetic cohort."""

    journey_set: JourneySet
    true_theta: ModelParams
    overlap: OverlapDistribution
    base_rate: float
    seed: int
    cohort_size: int = 3_000_000
    exposure_bonus: float = 0.0

    def __post_init__(self) -> None:
        if self.true_theta.journey_set != self.journey_set:
            raise InvalidWorldError("true_theta uses a different journey set")
        if self.overlap.journey_set != self.journey_set:
            raise InvalidWorldError("overlap uses a different journey set")
        if not 0.0 < self.base_rate < 1.0:
            raise InvalidWorldError(f"base_rate must lie in (0, 1), got {self.base_rate}")
        if self.cohort_size < 1:
            raise InvalidWorldError("cohort_size must be at least 1")
        if self.exposure_bonus < 0:
            raise InvalidWorldError("exposure_bonus must be non-negative")
        worst = max(self.conversion_probability(mask) for mask in range(1 << self.journey_set.size))
        if worst > 1.0:
            raise InvalidWorldError(
                f"conversion probability exceeds 1 for some combination (max {worst:.6g})"
            )

    def conversion_probability(self, active_mask: int) -> float:
        """Conversion probability of a user whose active combination is the mask."""
        members = self.journey_set.members_of(active_mask)
        prob = self.base_rate * combination_factor(Combination(members), self.true_theta)
        if active_mask:
            prob += self.exposure_bonus
        return prob


@dataclass(frozen=True, eq=False)
class SyntheticCohort:
    """Per-user records: combination, shared branch bit, latent uniform."""

    spec: WorldSpec
    combo_index: np.ndarray = field(repr=False)
    branch: np.ndarray = field(repr=False)
    latent: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return int(self.combo_index.shape[0])


def _stream(seed: int, key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))


def generate_cohort(spec: WorldSpec) -> SyntheticCohort:
    """Draw a cohort; deterministic per (seed, cohort_size).

    Membership, branch assignment, and latent conversion draws come from
    three separate substreams of the world seed, so the branch split of a
    user does not depend on the overlap distribution.
    """
    n = spec.cohort_size
    masses = spec.overlap.masses / spec.overlap.masses.sum()
    combo = _stream(spec.seed, 0).choice(masses.size, size=n, p=masses).astype(np.uint16)
    branch = _stream(spec.seed, 1).integers(0, 2, size=n, dtype=np.uint8)
    latent = _stream(spec.seed, 2).random(size=n)
    return SyntheticCohort(spec=spec, combo_index=combo, branch=branch, latent=latent)


def _probability_table(spec: WorldSpec, active: Iterable[str]) -> np.ndarray:
    """Conversion probability by full combination index, given active journeys."""
    active_mask = spec.journey_set.mask_of(active)
    n_combos = 1 << spec.journey_set.size
    return np.array(
        [spec.conversion_probability(mask & active_mask) for mask in range(n_combos)]
    )


def virtual_experiment(
    cohort: SyntheticCohort,
    treat_active: Iterable[str],
    ctrl_active: Iterable[str],
    segment: Optional[Iterable[str]] = None,
) -> ExperimentCounts:
    """Tally a two-branch experiment under an activation scenario.

    ``treat_active``/``ctrl_active`` name the journeys delivering
    communications in each branch; a user's effective combination is the
    intersection with their membership.  ``segment`` restricts the tally to
    users whose full membership equals exactly that combination (used for
    pure-lift measurement on exclusively-exposed users).
    """
    spec = cohort.spec
    keep = np.ones(cohort.size, dtype=bool)
    if segment is not None:
        members = segment.members if isinstance(segment, Combination) else segment
        keep = cohort.combo_index == spec.journey_set.mask_of(members)

    counts = []
    for branch_bit, active in ((1, treat_active), (0, ctrl_active)):
        table = _probability_table(spec, active)
        sel = keep & (cohort.branch == branch_bit)
        n = int(sel.sum())
        m = int((cohort.latent[sel] < table[cohort.combo_index[sel]]).sum())
        counts.append((n, m))
    (n_treat, m_treat), (n_ctrl, m_ctrl) = counts
    return ExperimentCounts(n_treat=n_treat, m_treat=m_treat, n_ctrl=n_ctrl, m_ctrl=m_ctrl)


@dataclass(frozen=True)
class WorldMeasurements:
    """Counts from the standard virtual experiments on one cohort."""

    overlap_counts: dict
    onoff: dict
    pure: dict
    global_counts: ExperimentCounts


def measure_world(cohort: SyntheticCohort) -> WorldMeasurements:
    """Run the standard scenario suite: per-journey ON/OFF, pure, and global.

    The ON/OFF scenario for journey j keeps every other journey active in
    both branches; the pure scenario additionally restricts to users
    exposed exclusively to j; the global scenario activates everything for
    treatment and nothing for control.
    """
    js = cohort.spec.journey_set
    everything = js.journeys
    overlap_counts = {
        combo_key(js.members_of(mask)): int(count)
        for mask, count in enumerate(np.bincount(cohort.combo_index, minlength=1 << js.size))
    }
    onoff = {}
    pure = {}
    for j in everything:
        others = tuple(k for k in everything if k != j)
        onoff[j] = virtual_experiment(cohort, everything, others)
        try:
            pure[j] = virtual_experiment(cohort, everything, others, segment=frozenset({j}))
        except ValidationError:
            # An exclusive-exposure branch can be empty in small cohorts;
            # the pure measurement is optional, so drop it.
            continue
    global_counts = virtual_experiment(cohort, everything, ())
    return WorldMeasurements(
        overlap_counts=overlap_counts, onoff=onoff, pure=pure, global_counts=global_counts
    )


def observed_lifts(measurements: WorldMeasurements, journey_set: JourneySet) -> ObservedLifts:
    """Lift estimates from measured counts, ready to feed the fit.

    Pure-lift anchors are soft inputs, so journeys whose exclusive segment
    cannot support a lift estimate (empty branch or zero control
    conversions) are simply dropped.  The same situation in an ON/OFF or
    global experiment raises, because those measurements are required.
    """
    onoff = {}
    for j, counts in measurements.onoff.items():
        estimate = estimate_lift(counts)
        onoff[j] = (estimate.lift, estimate.se)
    pure = {}
    for j, counts in measurements.pure.items():
        try:
            estimate = estimate_lift(counts)
        except ZeroBaselineError:
            continue
        pure[j] = (estimate.lift, estimate.se)
    global_estimate = estimate_lift(measurements.global_counts)
    return ObservedLifts(
        journey_set=journey_set,
        onoff=onoff,
        pure=pure,
        global_observed=(global_estimate.lift, global_estimate.se),
    )


def enumeration_oracle(
    p: OverlapDistribution, theta: ModelParams, off_set: Iterable[str] = ()
) -> float:
    """Expected effect by explicit enumeration over every combination.

    Loops over all 2^J combinations, deactivates the ``off_set`` journeys,
    and multiplies factors one by one - no matrix shortcuts - making this
    the reference for the factor-model expectations.  ``off_set`` empty
    reproduces the all-on expectation; ``off_set`` equal to all journeys
    gives exactly 1.
    """
    journeys = p.journey_set.journeys
    if len(journeys) > ENUMERATION_LIMIT:
        raise ValidationError(f"enumeration is limited to {ENUMERATION_LIMIT} journeys")
    off = frozenset(off_set)
    for label in off:
        p.journey_set.index(label)
    total = 0.0
    for size in range(len(journeys) + 1):
        for members in iter_combinations(journeys, size):
            mass = p.mass(members)
            active = frozenset(members) - off
            effect = 1.0
            for j in active:
                effect *= theta.f[j]
            for subset, value in theta.kappa.items():
                if subset <= active:
                    effect *= value
            total += mass * effect
    return total


def cohort_csv(cohort: SyntheticCohort) -> str:
    """Cohort export: user id, combination bitmask, branch bit, conversion bit.

    The conversion bit is the outcome of the global experiment: treatment
    users have every journey active, control users none.
    """
    spec = cohort.spec
    table_treat = _probability_table(spec, spec.journey_set.journeys)
    table_ctrl = _probability_table(spec, ())
    prob = np.where(
        cohort.branch == 1,
        table_treat[cohort.combo_index],
        table_ctrl[cohort.combo_index],
    )
    converted = (cohort.latent < prob).astype(int)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["user_id", "combination_mask", "branch", "converted"])
    for i in range(cohort.size):
        writer.writerow(
            [i, int(cohort.combo_index[i]), int(cohort.branch[i]), int(converted[i])]
        )
    return buffer.getvalue()
