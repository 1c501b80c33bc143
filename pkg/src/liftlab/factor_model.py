"""Multiplicative hierarchical lift model over journey combinations.

Each journey carries a multiplicative factor ``f_j = 1 + pure_lift_j`` and
every journey subset of size two or more carries an interaction factor
``kappa`` (1 means no interaction).  A combination of simultaneously
active journeys multiplies the factors of its members and of every
interaction subset it contains.  Averaging those combination factors over
the population's overlap distribution gives expected effects with a given
journey ON or OFF, and from those the predicted lifts.

Combinations are encoded as bitmasks over the journey order, which keeps
expectation and Jacobian evaluation a handful of small dense matrix
products.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations as iter_combinations
from typing import Iterable, Mapping, Optional

import numpy as np

from .errors import ValidationError

MASS_TOLERANCE = 1e-9

# Key used for the empty combination in serialized maps.
EMPTY_COMBO_KEY = "none"


def combo_key(members: Iterable[str]) -> str:
    """Canonical string key for a combination: sorted labels joined by '+'."""
    labels = sorted(members)
    return "+".join(labels) if labels else EMPTY_COMBO_KEY


def parse_combo_key(key: str, journeys: Iterable[str]) -> frozenset:
    """Inverse of :func:`combo_key`; validates labels against the journey set."""
    if key == EMPTY_COMBO_KEY:
        return frozenset()
    labels = key.split("+")
    known = set(journeys)
    if len(set(labels)) != len(labels):
        raise ValidationError(f"combination key {key!r} repeats a journey")
    unknown = [lab for lab in labels if lab not in known]
    if unknown:
        raise ValidationError(f"combination key {key!r} names unknown journeys {unknown}")
    return frozenset(labels)


@dataclass(frozen=True)
class JourneySet:
    """Ordered set of distinct journey labels.

    The order fixes bitmask bit positions, residual layout, and every other
    journey-indexed structure in the package.
    """

    journeys: tuple
    max_journeys: int = 4

    def __post_init__(self) -> None:
        journeys = tuple(self.journeys)
        object.__setattr__(self, "journeys", journeys)
        if not 1 <= len(journeys) <= self.max_journeys:
            raise ValidationError(
                f"journey count must lie in [1, {self.max_journeys}], got {len(journeys)}"
            )
        if len(set(journeys)) != len(journeys):
            raise ValidationError("journey labels must be unique")
        if any(not isinstance(j, str) or not j for j in journeys):
            raise ValidationError("journey labels must be non-empty strings")

    @property
    def size(self) -> int:
        return len(self.journeys)

    def index(self, label: str) -> int:
        try:
            return self.journeys.index(label)
        except ValueError:
            raise ValidationError(f"unknown journey {label!r}") from None

    def mask_of(self, members: Iterable[str]) -> int:
        mask = 0
        for label in members:
            mask |= 1 << self.index(label)
        return mask

    def members_of(self, mask: int) -> frozenset:
        return frozenset(j for i, j in enumerate(self.journeys) if mask >> i & 1)

    def all_combinations(self) -> tuple:
        """Every subset as a frozenset, in bitmask order (empty set first)."""
        return tuple(self.members_of(mask) for mask in range(1 << self.size))

    def kappa_subsets(self, interaction_order: Optional[int] = None) -> tuple:
        """Interaction subsets of size 2..order, size-then-journey-order.

        ``None`` means the full hierarchy up to size J.  For three journeys
        this yields the three pairs followed by the triple.
        """
        order = self.size if interaction_order is None else interaction_order
        if not 1 <= order <= self.size:
            raise ValidationError(
                f"interaction order must lie in [1, {self.size}], got {order}"
            )
        subsets = []
        for size in range(2, order + 1):
            for idx in iter_combinations(range(self.size), size):
                subsets.append(frozenset(self.journeys[i] for i in idx))
        return tuple(subsets)


@dataclass(frozen=True)
class Combination:
    """A subset of a journey set (possibly empty)."""

    members: frozenset

    def __post_init__(self) -> None:
        object.__setattr__(self, "members", frozenset(self.members))

    @classmethod
    def of(cls, journey_set: JourneySet, members: Iterable[str]) -> "Combination":
        members = frozenset(members)
        for label in members:
            journey_set.index(label)
        return cls(members)

    @property
    def key(self) -> str:
        return combo_key(self.members)


def _subset_sort_key(journey_set: JourneySet, members: frozenset) -> tuple:
    return (len(members), tuple(sorted(journey_set.index(j) for j in members)))


@dataclass(frozen=True)
class ModelParams:
    """Parameter vector: per-journey factors and interaction factors.

    ``f`` maps every journey to a strictly positive factor; ``kappa`` maps
    every interaction subset (all subsets of size 2 up to some order) to a
    strictly positive factor.
    """

    journey_set: JourneySet
    f: Mapping[str, float]
    kappa: Mapping[frozenset, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        f = {j: float(v) for j, v in self.f.items()}
        kappa = {frozenset(s): float(v) for s, v in self.kappa.items()}
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "kappa", kappa)
        if set(f) != set(self.journey_set.journeys):
            raise ValidationError("f must have exactly one factor per journey")
        if any(v <= 0 or not math.isfinite(v) for v in f.values()):
            raise ValidationError("journey factors must be strictly positive and finite")
        if any(v <= 0 or not math.isfinite(v) for v in kappa.values()):
            raise ValidationError("interaction factors must be strictly positive and finite")
        order = self._infer_order(kappa)
        expected = set(self.journey_set.kappa_subsets(order))
        if set(kappa) != expected:
            raise ValidationError(
                "kappa must cover every subset of size >= 2 up to the interaction order"
            )
        object.__setattr__(self, "_order", order)

    def _infer_order(self, kappa: Mapping[frozenset, float]) -> int:
        if not kappa:
            return 1
        sizes = {len(s) for s in kappa}
        if min(sizes) < 2 or max(sizes) > self.journey_set.size:
            raise ValidationError("kappa subsets must have size between 2 and J")
        return max(sizes)

    @property
    def interaction_order(self) -> int:
        return self._order

    @property
    def kappa_subsets(self) -> tuple:
        """kappa keys in the canonical size-then-journey-order layout."""
        return tuple(
            sorted(self.kappa, key=lambda s: _subset_sort_key(self.journey_set, s))
        )

    @classmethod
    def neutral(
        cls, journey_set: JourneySet, interaction_order: Optional[int] = None
    ) -> "ModelParams":
        """All factors 1: no journey effect and no interaction."""
        return cls(
            journey_set=journey_set,
            f={j: 1.0 for j in journey_set.journeys},
            kappa={s: 1.0 for s in journey_set.kappa_subsets(interaction_order)},
        )


@dataclass(frozen=True, eq=False)
class OverlapDistribution:
    """Probability mass over every journey combination, empty set included.

    ``masses[mask]`` is the share of the population simultaneously exposed
    to exactly the journeys in ``mask``.
    """

    journey_set: JourneySet
    masses: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        masses = np.asarray(self.masses, dtype=float)
        expected = 1 << self.journey_set.size
        if masses.shape != (expected,):
            raise ValidationError(
                f"masses must have length {expected}, got shape {masses.shape}"
            )
        if not np.isfinite(masses).all() or (masses < 0).any():
            raise ValidationError("masses must be finite and non-negative")
        total = float(masses.sum())
        if abs(total - 1.0) > MASS_TOLERANCE:
            raise ValidationError(f"masses must sum to 1 within {MASS_TOLERANCE}, got {total}")
        object.__setattr__(self, "masses", masses)

    @classmethod
    def from_mapping(
        cls, journey_set: JourneySet, p: Mapping
    ) -> "OverlapDistribution":
        """Build from {combination: mass}; combinations not listed get 0.

        Keys may be :class:`Combination`, frozensets/iterables of labels, or
        canonical '+'-joined key strings.
        """
        masses = np.zeros(1 << journey_set.size)
        seen = set()
        for key, value in p.items():
            if isinstance(key, Combination):
                members = key.members
            elif isinstance(key, str):
                members = parse_combo_key(key, journey_set.journeys)
            else:
                members = frozenset(key)
            mask = journey_set.mask_of(members)
            if mask in seen:
                raise ValidationError(f"combination {combo_key(members)!r} listed twice")
            seen.add(mask)
            masses[mask] = float(value)
        return cls(journey_set=journey_set, masses=masses)

    def mass(self, members: Iterable[str]) -> float:
        return float(self.masses[self.journey_set.mask_of(members)])

    def as_mapping(self) -> dict:
        """{canonical key: mass} over all combinations."""
        js = self.journey_set
        return {
            combo_key(js.members_of(mask)): float(self.masses[mask])
            for mask in range(1 << js.size)
        }


@dataclass(frozen=True)
class LiftObservation:
    """A measured lift and its standard error."""

    lift: float
    se: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.lift) or self.lift <= -1.0:
            raise ValidationError(
                f"observed lift must be finite and > -1 (got {self.lift}); "
                "a lift of -1 or below implies a non-positive conversion rate"
            )
        if not math.isfinite(self.se) or self.se < 0:
            raise ValidationError(f"standard error must be finite and >= 0, got {self.se}")


def _as_observation(value) -> LiftObservation:
    if isinstance(value, LiftObservation):
        return value
    lift, se = value
    return LiftObservation(float(lift), float(se))


@dataclass(frozen=True)
class ObservedLifts:
    """Experimental lift measurements feeding the fit.

    ``onoff`` must cover every journey; ``pure`` entries (lifts measured on
    exclusively-exposed users) are optional soft anchors; ``global_observed``
    is a benchmark only and never enters the residuals.
    """

    journey_set: JourneySet
    onoff: Mapping[str, LiftObservation]
    pure: Mapping[str, LiftObservation] = field(default_factory=dict)
    global_observed: Optional[LiftObservation] = None

    def __post_init__(self) -> None:
        onoff = {j: _as_observation(v) for j, v in self.onoff.items()}
        pure = {j: _as_observation(v) for j, v in self.pure.items()}
        object.__setattr__(self, "onoff", onoff)
        object.__setattr__(self, "pure", pure)
        if self.global_observed is not None:
            object.__setattr__(self, "global_observed", _as_observation(self.global_observed))
        journeys = set(self.journey_set.journeys)
        if set(onoff) != journeys:
            missing = sorted(journeys - set(onoff))
            extra = sorted(set(onoff) - journeys)
            parts = []
            if missing:
                parts.append(f"missing ON/OFF lift for journeys {missing}")
            if extra:
                parts.append(f"ON/OFF lift for unknown journeys {extra}")
            raise ValidationError("; ".join(parts))
        unknown = sorted(set(pure) - journeys)
        if unknown:
            raise ValidationError(f"pure lift for unknown journeys {unknown}")

    @property
    def pure_journeys(self) -> tuple:
        """Journeys with a pure observation, in journey-set order."""
        return tuple(j for j in self.journey_set.journeys if j in self.pure)


@dataclass(frozen=True)
class Hyperparams:
    """Regularization strengths for the least-squares objective."""

    lambda_inter: float = 0.30
    w_pure: float = 0.20

    def __post_init__(self) -> None:
        if self.lambda_inter < 0 or self.w_pure < 0:
            raise ValidationError("hyperparameters must be non-negative")


# ---------------------------------------------------------------------------
# Vectorized structure over combination bitmasks
# ---------------------------------------------------------------------------


@lru_cache(maxsize=64)
def _structure(journeys: tuple, kappa_subsets: tuple):
    """Membership matrices for a (journey order, kappa layout) pair.

    Returns (A, B, contains) where A[mask, j] says journey j is in the
    combination, B[mask, k] says kappa subset k is contained in it, and
    contains[k, j] says journey j belongs to kappa subset k.
    """
    n_j = len(journeys)
    n_combos = 1 << n_j
    index = {j: i for i, j in enumerate(journeys)}
    subset_masks = [sum(1 << index[j] for j in s) for s in kappa_subsets]

    A = np.zeros((n_combos, n_j))
    B = np.zeros((n_combos, len(subset_masks)))
    for mask in range(n_combos):
        for j in range(n_j):
            if mask >> j & 1:
                A[mask, j] = 1.0
        for k, smask in enumerate(subset_masks):
            if mask & smask == smask:
                B[mask, k] = 1.0
    contains = np.zeros((len(subset_masks), n_j))
    for k, smask in enumerate(subset_masks):
        for j in range(n_j):
            if smask >> j & 1:
                contains[k, j] = 1.0
    return A, B, contains


class ResidualSystem:
    """Residuals and analytic Jacobian of the fit, in log-parameter space.

    The parameter vector is ``[log f_j ... , log kappa_S ...]`` with
    journeys in journey-set order and kappa subsets in size-then-journey
    order.  The residual layout is fixed: one ON/OFF residual per journey,
    then one ridge residual ``sqrt(lambda) * (kappa - 1)`` per interaction
    subset, then one anchor residual ``sqrt(w) * ((f_j - 1) - pure_j)`` per
    journey with a pure observation.
    """

    def __init__(
        self,
        p: OverlapDistribution,
        obs: ObservedLifts,
        hyper: Hyperparams,
        kappa_subsets: tuple,
    ) -> None:
        if p.journey_set != obs.journey_set:
            raise ValidationError("overlap and observations use different journey sets")
        self.journey_set = p.journey_set
        self.kappa_subsets = tuple(kappa_subsets)
        self.masses = p.masses
        self.hyper = hyper
        self.sqrt_lambda = math.sqrt(hyper.lambda_inter)
        self.sqrt_w = math.sqrt(hyper.w_pure)
        self.lift_targets = np.array(
            [obs.onoff[j].lift for j in self.journey_set.journeys]
        )
        self.anchor_journeys = obs.pure_journeys
        self.anchor_indices = np.array(
            [self.journey_set.index(j) for j in self.anchor_journeys], dtype=int
        )
        self.anchor_targets = np.array([obs.pure[j].lift for j in self.anchor_journeys])
        self.A, self.B, self.contains = _structure(
            self.journey_set.journeys, self.kappa_subsets
        )
        self.n_journeys = self.journey_set.size
        self.n_kappa = len(self.kappa_subsets)
        self.n_params = self.n_journeys + self.n_kappa
        self.n_residuals = self.n_journeys + self.n_kappa + len(self.anchor_journeys)

    # -- parameter packing ---------------------------------------------------

    def pack(self, theta: ModelParams) -> np.ndarray:
        """Log-parameter vector for ``theta`` (must share this layout)."""
        if theta.journey_set != self.journey_set or theta.kappa_subsets != self.kappa_subsets:
            raise ValidationError("theta layout does not match this system")
        logs = [math.log(theta.f[j]) for j in self.journey_set.journeys]
        logs += [math.log(theta.kappa[s]) for s in self.kappa_subsets]
        return np.array(logs)

    def unpack(self, params: np.ndarray) -> ModelParams:
        f = {
            j: float(np.exp(params[i]))
            for i, j in enumerate(self.journey_set.journeys)
        }
        kappa = {
            s: float(np.exp(params[self.n_journeys + k]))
            for k, s in enumerate(self.kappa_subsets)
        }
        return ModelParams(journey_set=self.journey_set, f=f, kappa=kappa)

    # -- model evaluation ----------------------------------------------------

    def _effects(self, params: np.ndarray):
        """Weighted combination factors with everything on and per-journey off."""
        x = params[: self.n_journeys]
        y = params[self.n_journeys :]
        log_f_all = self.A @ x + self.B @ y
        # Removing journey j drops its factor and every interaction involving it.
        removal = self.A * x + self.B @ (self.contains * y[:, None])
        w_on = self.masses * np.exp(log_f_all)
        w_off = self.masses[:, None] * np.exp(log_f_all[:, None] - removal)
        return w_on, w_off

    def residuals(self, params: np.ndarray) -> np.ndarray:
        w_on, w_off = self._effects(params)
        e_on = w_on.sum()
        e_off = w_off.sum(axis=0)
        lift_resid = e_on / e_off - 1.0 - self.lift_targets
        kappa = np.exp(params[self.n_journeys :])
        ridge_resid = self.sqrt_lambda * (kappa - 1.0)
        f_anchor = np.exp(params[self.anchor_indices])
        anchor_resid = self.sqrt_w * (f_anchor - 1.0 - self.anchor_targets)
        return np.concatenate([lift_resid, ridge_resid, anchor_resid])

    def jacobian(self, params: np.ndarray) -> np.ndarray:
        """d residual / d log-parameter, rows in residual order."""
        w_on, w_off = self._effects(params)
        e_on = w_on.sum()
        e_off = w_off.sum(axis=0)

        d_on = np.concatenate([self.A.T @ w_on, self.B.T @ w_on])
        # d_off[k, m]: derivative of E_off(k); parameters tied to journey k
        # are absent from the off expectation, so those entries are zero.
        d_off_x = w_off.T @ self.A
        np.fill_diagonal(d_off_x, 0.0)
        d_off_y = w_off.T @ self.B
        d_off_y[self.contains.T.astype(bool)] = 0.0
        d_off = np.hstack([d_off_x, d_off_y])

        jac = np.zeros((self.n_residuals, self.n_params))
        jac[: self.n_journeys] = (d_on[None, :] * e_off[:, None] - e_on * d_off) / (
            e_off[:, None] ** 2
        )
        kappa = np.exp(params[self.n_journeys :])
        rows = np.arange(self.n_kappa) + self.n_journeys
        jac[rows, rows] = self.sqrt_lambda * kappa
        f_anchor = np.exp(params[self.anchor_indices])
        rows = np.arange(len(self.anchor_journeys)) + self.n_journeys + self.n_kappa
        jac[rows, self.anchor_indices] = self.sqrt_w * f_anchor
        return jac


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def combination_factor(c: Combination, theta: ModelParams) -> float:
    """Total multiplicative effect of a combination.

    Product of the member journeys' factors and of every interaction factor
    whose subset the combination contains; the empty combination is exactly 1.
    """
    members = c.members if isinstance(c, Combination) else frozenset(c)
    for label in members:
        theta.journey_set.index(label)
    factor = 1.0
    for j in members:
        factor *= theta.f[j]
    for subset, value in theta.kappa.items():
        if subset <= members:
            factor *= value
    return factor


def _check_compatible(p: OverlapDistribution, theta: ModelParams) -> None:
    if p.journey_set != theta.journey_set:
        raise ValidationError("overlap and parameters use different journey sets")


def _combination_factors(theta: ModelParams) -> np.ndarray:
    A, B, _ = _structure(theta.journey_set.journeys, theta.kappa_subsets)
    x = np.array([math.log(theta.f[j]) for j in theta.journey_set.journeys])
    y = np.array([math.log(theta.kappa[s]) for s in theta.kappa_subsets])
    return np.exp(A @ x + B @ y)


def expected_effect_on(p: OverlapDistribution, theta: ModelParams) -> float:
    """Population-average effect with every journey active."""
    _check_compatible(p, theta)
    return float(p.masses @ _combination_factors(theta))


def expected_effect_off(j: str, p: OverlapDistribution, theta: ModelParams) -> float:
    """Population-average effect as if journey ``j`` never activates.

    Equivalent to the ON expectation with ``f_j`` and every interaction
    factor involving ``j`` replaced by 1.
    """
    _check_compatible(p, theta)
    theta.journey_set.index(j)
    f = dict(theta.f, **{j: 1.0})
    kappa = {s: (1.0 if j in s else v) for s, v in theta.kappa.items()}
    neutralized = ModelParams(journey_set=theta.journey_set, f=f, kappa=kappa)
    return float(p.masses @ _combination_factors(neutralized))


def predicted_onoff_lift(j: str, p: OverlapDistribution, theta: ModelParams) -> float:
    """Model-implied lift of the ON/OFF experiment for journey ``j``."""
    return expected_effect_on(p, theta) / expected_effect_off(j, p, theta) - 1.0


def predicted_global_lift(p: OverlapDistribution, theta: ModelParams) -> float:
    """Model-implied lift of activating all journeys versus none."""
    return expected_effect_on(p, theta) - 1.0


def residual_vector(
    theta: ModelParams,
    p: OverlapDistribution,
    obs: ObservedLifts,
    hyper: Hyperparams,
) -> np.ndarray:
    """Full stacked residual vector of the regularized objective.

    Layout (fixed): ON/OFF residuals in journey order, ridge residuals in
    kappa-subset order, pure-lift anchor residuals in journey order for
    journeys that have a pure observation.
    """
    system = ResidualSystem(p, obs, hyper, theta.kappa_subsets)
    return system.residuals(system.pack(theta))


@dataclass(frozen=True)
class DerivedQuantities:
    """Report of the quantities read off a parameter vector.

    ``synergies`` are keyed by canonical combination key ('F+S' style).
    """

    pure_lifts: dict
    synergies: dict
    onoff_lifts: dict
    global_lift: float


def derived_quantities(theta: ModelParams, p: OverlapDistribution) -> DerivedQuantities:
    """Pure lifts, synergies, and predicted lifts implied by ``theta``."""
    _check_compatible(p, theta)
    return DerivedQuantities(
        pure_lifts={j: theta.f[j] - 1.0 for j in theta.journey_set.journeys},
        synergies={combo_key(s): theta.kappa[s] - 1.0 for s in theta.kappa_subsets},
        onoff_lifts={
            j: predicted_onoff_lift(j, p, theta) for j in theta.journey_set.journeys
        },
        global_lift=predicted_global_lift(p, theta),
    )
