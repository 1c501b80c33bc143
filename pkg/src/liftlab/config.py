"""Config ingestion, schema validation, and report serialization.

All documents are JSON with a ``schema_version`` field and validate
against the schema files shipped under ``liftlab/schemas``.  Combination
keys are sorted journey labels joined by '+' ('none' for the empty
combination).  Reports are serialized with sorted keys and no timestamps,
so identical inputs produce byte-identical documents, and files are
written atomically (write to a temp file, then rename).
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Optional

from jsonschema import Draft202012Validator

from .errors import ConfigError, ValidationError
from .estimator import FitConfig, FitResult
from .factor_model import (
    Hyperparams,
    JourneySet,
    ModelParams,
    ObservedLifts,
    OverlapDistribution,
    combo_key,
    parse_combo_key,
)
from .montecarlo import McConfig, McResult
from .synthcohort import WorldMeasurements, WorldSpec

RUN_CONFIG_VERSION = "liftlab.run_config.v1"
WORLD_SPEC_VERSION = "liftlab.world_spec.v1"
LIFT_REPORT_VERSION = "liftlab.lift_report.v1"
FIT_REPORT_VERSION = "liftlab.fit_report.v1"
MC_SUMMARY_VERSION = "liftlab.mc_summary.v1"

DEFAULT_MC_ITERATIONS = 5000


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    """Load a published schema (e.g. 'run_config') from package data."""
    text = resources.files("liftlab.schemas").joinpath(f"{name}.schema.json").read_text()
    return json.loads(text)


def validate_document(doc: dict, schema_name: str) -> None:
    """Validate against a shipped schema; raise ConfigError with field paths."""
    validator = Draft202012Validator(load_schema(schema_name))
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.path)))
    if errors:
        messages = [
            f"{'.'.join(str(part) for part in error.path) or '<root>'}: {error.message}"
            for error in errors
        ]
        raise ConfigError(messages)


def read_json(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return json.load(handle)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None


def dumps_report(doc: dict) -> str:
    """Canonical serialization: sorted keys, two-space indent, newline-terminated."""
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def write_atomic(path, text: str) -> None:
    """Write-then-rename so an interrupted run never leaves a partial file."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".liftlab-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


# ---------------------------------------------------------------------------
# Run config
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """Parsed and validated inputs for the fit and simulate commands."""

    journey_set: JourneySet
    overlap: OverlapDistribution
    observed: ObservedLifts
    hyper: Hyperparams
    fit: FitConfig
    mc_iterations: int = DEFAULT_MC_ITERATIONS
    mc_seed: Optional[int] = None
    mc_concentration: Optional[float] = None
    mc_workers: Optional[int] = None
    mc_warm_start: bool = True
    report_path: Optional[str] = None
    trace_path: Optional[str] = None

    def mc_config(
        self,
        seed: Optional[int] = None,
        workers: Optional[int] = None,
        iterations: Optional[int] = None,
    ) -> McConfig:
        """Monte Carlo settings with CLI overrides applied.

        Raises ConfigError when the seed is missing or when the Dirichlet
        concentration is neither configured nor derivable (it is derived
        automatically when the overlap is given as counts).
        """
        final_seed = seed if seed is not None else self.mc_seed
        if final_seed is None:
            raise ConfigError(
                "monte_carlo.seed: a seed is required (set it in the config or pass --seed)"
            )
        if self.mc_concentration is None:
            raise ConfigError(
                "monte_carlo.dirichlet_concentration: required when the overlap is "
                "given as proportions (with counts it defaults to the total count)"
            )
        return McConfig(
            seed=final_seed,
            dirichlet_concentration=self.mc_concentration,
            iterations=iterations if iterations is not None else self.mc_iterations,
            workers=workers if workers is not None else self.mc_workers,
            warm_start=self.mc_warm_start,
        )


def _parse_overlap(section: dict, journey_set: JourneySet):
    """Returns (distribution, implied concentration or None)."""
    if "proportions" in section:
        mapping = section["proportions"]
        concentration = None
    else:
        mapping = section["counts"]
        total = sum(mapping.values())
        if total <= 0:
            raise ConfigError("overlap.counts: total count must be positive")
        mapping = {key: value / total for key, value in mapping.items()}
        concentration = float(total)
    try:
        distribution = OverlapDistribution.from_mapping(journey_set, mapping)
    except ValidationError as exc:
        raise ConfigError(f"overlap: {exc}") from None
    return distribution, concentration


def _parse_observed(section: dict, journey_set: JourneySet) -> ObservedLifts:
    onoff = {j: (v["lift"], v["se"]) for j, v in section["onoff"].items()}
    for j in journey_set.journeys:
        if j not in onoff:
            raise ConfigError(f"observed.onoff.{j}: missing ON/OFF lift for this journey")
    pure = {j: (v["lift"], v["se"]) for j, v in section.get("pure", {}).items()}
    global_entry = section.get("global")
    global_observed = (global_entry["lift"], global_entry["se"]) if global_entry else None
    try:
        return ObservedLifts(
            journey_set=journey_set,
            onoff=onoff,
            pure=pure,
            global_observed=global_observed,
        )
    except ValidationError as exc:
        raise ConfigError(f"observed: {exc}") from None


def parse_run_config(doc: dict) -> RunConfig:
    """Validate a run-config document and build the typed inputs."""
    validate_document(doc, "run_config")
    try:
        journey_set = JourneySet(
            tuple(doc["journeys"]), max_journeys=doc.get("max_journeys", 4)
        )
    except ValidationError as exc:
        raise ConfigError(f"journeys: {exc}") from None

    overlap, implied_concentration = _parse_overlap(doc["overlap"], journey_set)
    observed = _parse_observed(doc["observed"], journey_set)

    hyper_section = doc.get("hyperparams", {})
    hyper = Hyperparams(
        lambda_inter=hyper_section.get("lambda_inter", Hyperparams.lambda_inter),
        w_pure=hyper_section.get("w_pure", Hyperparams.w_pure),
    )

    fit_section = doc.get("fit", {})
    order = fit_section.get("interaction_order")
    if order is not None and order > journey_set.size:
        raise ConfigError(
            f"fit.interaction_order: must not exceed the journey count ({journey_set.size})"
        )
    fit_config = FitConfig(
        max_iterations=fit_section.get("max_iterations", FitConfig.max_iterations),
        gradient_tolerance=fit_section.get(
            "gradient_tolerance", FitConfig.gradient_tolerance
        ),
        step_tolerance=fit_section.get("step_tolerance", FitConfig.step_tolerance),
        interaction_order=order,
    )

    mc_section = doc.get("monte_carlo", {})
    output_section = doc.get("output", {})
    return RunConfig(
        journey_set=journey_set,
        overlap=overlap,
        observed=observed,
        hyper=hyper,
        fit=fit_config,
        mc_iterations=mc_section.get("iterations", DEFAULT_MC_ITERATIONS),
        mc_seed=mc_section.get("seed"),
        mc_concentration=mc_section.get("dirichlet_concentration", implied_concentration),
        mc_workers=mc_section.get("workers"),
        mc_warm_start=mc_section.get("warm_start", True),
        report_path=output_section.get("report"),
        trace_path=output_section.get("trace"),
    )


def load_run_config(path) -> RunConfig:
    return parse_run_config(read_json(path))


# ---------------------------------------------------------------------------
# World spec
# ---------------------------------------------------------------------------


def parse_world_spec(doc: dict):
    """Validate a world-spec document; returns (WorldSpec, mc settings dict).

    Journey factors must be listed for every journey; interaction factors
    default to 1 (neutral) for any subset not listed.
    """
    validate_document(doc, "world_spec")
    try:
        journey_set = JourneySet(
            tuple(doc["journeys"]), max_journeys=doc.get("max_journeys", 4)
        )
    except ValidationError as exc:
        raise ConfigError(f"journeys: {exc}") from None

    params_section = doc["true_params"]
    f = params_section["f"]
    for j in journey_set.journeys:
        if j not in f:
            raise ConfigError(f"true_params.f.{j}: missing factor for this journey")
    for j in f:
        if j not in journey_set.journeys:
            raise ConfigError(f"true_params.f.{j}: unknown journey")
    kappa = {s: 1.0 for s in journey_set.kappa_subsets()}
    for key, value in params_section.get("kappa", {}).items():
        try:
            subset = parse_combo_key(key, journey_set.journeys)
        except ValidationError as exc:
            raise ConfigError(f"true_params.kappa.{key}: {exc}") from None
        if len(subset) < 2:
            raise ConfigError(
                f"true_params.kappa.{key}: interaction subsets need at least two journeys"
            )
        kappa[subset] = value
    try:
        theta = ModelParams(journey_set=journey_set, f=dict(f), kappa=kappa)
    except ValidationError as exc:
        raise ConfigError(f"true_params: {exc}") from None

    overlap, _ = _parse_overlap(doc["overlap"], journey_set)
    try:
        world = WorldSpec(
            journey_set=journey_set,
            true_theta=theta,
            overlap=overlap,
            base_rate=doc["base_rate"],
            seed=doc["seed"],
            cohort_size=doc.get("cohort_size", WorldSpec.cohort_size),
            exposure_bonus=doc.get("exposure_bonus", 0.0),
        )
    except (ValidationError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    mc_section = doc.get("monte_carlo", {})
    return world, mc_section


def load_world_spec(path):
    return parse_world_spec(read_json(path))


# ---------------------------------------------------------------------------
# Report builders
# ---------------------------------------------------------------------------


def lift_report(estimate) -> dict:
    return {
        "schema_version": LIFT_REPORT_VERSION,
        "lift": estimate.lift,
        "se": estimate.se,
        "ci_low": estimate.ci_low,
        "ci_high": estimate.ci_high,
    }


def fit_report(result: FitResult) -> dict:
    theta = result.theta
    derived = result.derived
    return {
        "schema_version": FIT_REPORT_VERSION,
        "converged": result.converged,
        "reason": result.reason,
        "iterations": result.iterations,
        "objective_value": result.objective_value,
        "parameters": {
            "f": {j: theta.f[j] for j in theta.journey_set.journeys},
            "kappa": {combo_key(s): theta.kappa[s] for s in theta.kappa_subsets},
        },
        "derived": {
            "pure_lift": dict(derived.pure_lifts),
            "synergy": dict(derived.synergies),
            "onoff_lift": dict(derived.onoff_lifts),
            "global_lift": derived.global_lift,
        },
        "residuals": [float(r) for r in result.residuals],
        "warnings": list(result.warnings),
    }


def mc_summary_report(result: McResult) -> dict:
    def summary_dict(summary) -> dict:
        return {
            "mean": summary.mean,
            "median": summary.median,
            "p2_5": summary.p2_5,
            "p25": summary.p25,
            "p75": summary.p75,
            "p97_5": summary.p97_5,
        }

    return {
        "schema_version": MC_SUMMARY_VERSION,
        "iterations": result.summary.iterations,
        "failures": result.summary.failures,
        "parameters": {
            name: summary_dict(s) for name, s in result.summary.parameters.items()
        },
        "derived": {name: summary_dict(s) for name, s in result.summary.derived.items()},
    }


def _counts_dict(counts) -> dict:
    return {
        "n_treat": counts.n_treat,
        "m_treat": counts.m_treat,
        "n_ctrl": counts.n_ctrl,
        "m_ctrl": counts.m_ctrl,
    }


def generated_run_config(
    world: WorldSpec,
    measurements: WorldMeasurements,
    lifts: ObservedLifts,
    mc_settings: Optional[dict] = None,
) -> dict:
    """Run-config document for a measured synthetic world.

    The output is directly consumable by the fit and simulate commands:
    overlap as raw counts (which also fixes the Dirichlet concentration),
    observed lifts from the virtual experiments, default hyperparameters,
    and the raw experiment counts bundled alongside.
    """
    mc_settings = mc_settings or {}
    observed: dict = {
        "onoff": {
            j: {"lift": obs.lift, "se": obs.se} for j, obs in lifts.onoff.items()
        }
    }
    if lifts.pure:
        observed["pure"] = {
            j: {"lift": obs.lift, "se": obs.se} for j, obs in lifts.pure.items()
        }
    if lifts.global_observed is not None:
        observed["global"] = {
            "lift": lifts.global_observed.lift,
            "se": lifts.global_observed.se,
        }
    experiments = {
        "onoff": {j: _counts_dict(c) for j, c in measurements.onoff.items()},
        "global": _counts_dict(measurements.global_counts),
    }
    if measurements.pure:
        experiments["pure"] = {j: _counts_dict(c) for j, c in measurements.pure.items()}
    return {
        "schema_version": RUN_CONFIG_VERSION,
        "journeys": list(world.journey_set.journeys),
        "overlap": {"counts": dict(measurements.overlap_counts)},
        "observed": observed,
        "hyperparams": {
            "lambda_inter": Hyperparams.lambda_inter,
            "w_pure": Hyperparams.w_pure,
        },
        "monte_carlo": {
            "iterations": mc_settings.get("iterations", DEFAULT_MC_ITERATIONS),
            "seed": mc_settings.get("seed", world.seed),
        },
        "experiments": experiments,
    }
