"""Command-line entry point.

Subcommands: ``lift`` (delta-method lift from branch tallies), ``fit``
(deterministic model fit from a run config), ``simulate`` (Monte Carlo
uncertainty), and ``generate`` (synthetic world measurement producing a
run config).  Reports go to stdout unless ``--out`` is given; files are
written atomically.  ``LIFTLAB_LOG`` sets the diagnostic log level.

Exit codes: 0 success, 2 invalid input or config, 3 zero control
baseline, 4 degenerate or non-finite fit problem, 5 no Monte Carlo
iteration converged.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Optional

from . import config as cfg
from .errors import (
    AllFitsFailedError,
    ConfigError,
    DegenerateProblemError,
    InvalidWorldError,
    NonFiniteObjectiveError,
    ValidationError,
    ZeroBaselineError,
)
from .estimator import fit
from .experiment import ExperimentCounts, estimate_lift
from .montecarlo import run_monte_carlo, trace_csv
from .synthcohort import cohort_csv, generate_cohort, measure_world, observed_lifts

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_ZERO_BASELINE = 3
EXIT_BAD_PROBLEM = 4
EXIT_ALL_FITS_FAILED = 5


def _emit(doc: dict, out_path: Optional[str]) -> None:
    text = cfg.dumps_report(doc)
    if out_path:
        cfg.write_atomic(out_path, text)
    else:
        sys.stdout.write(text)


def cmd_lift(args: argparse.Namespace) -> int:
    values = {}
    if args.config:
        doc = cfg.read_json(args.config)
        for name in ("n_treat", "m_treat", "n_ctrl", "m_ctrl"):
            if name in doc:
                values[name] = doc[name]
    for name in ("n_treat", "m_treat", "n_ctrl", "m_ctrl"):
        flag = getattr(args, name)
        if flag is not None:
            values[name] = flag
    missing = [n for n in ("n_treat", "m_treat", "n_ctrl", "m_ctrl") if n not in values]
    if missing:
        raise ConfigError([f"{name}: count is required (flag or config)" for name in missing])
    counts = ExperimentCounts(**values)
    estimate = estimate_lift(counts)
    _emit(cfg.lift_report(estimate), args.out)
    return EXIT_OK


def cmd_fit(args: argparse.Namespace) -> int:
    run = cfg.load_run_config(args.config)
    result = fit(run.overlap, run.observed, run.hyper, run.fit)
    log.info(
        "fit: converged=%s iterations=%d objective=%.3e",
        result.converged,
        result.iterations,
        result.objective_value,
    )
    _emit(cfg.fit_report(result), args.out or run.report_path)
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    run = cfg.load_run_config(args.config)
    mc = run.mc_config(seed=args.seed, workers=args.workers)
    result = run_monte_carlo(run.overlap, run.observed, run.hyper, run.fit, mc)
    log.info(
        "simulate: %d iterations, %d failures",
        result.summary.iterations,
        result.summary.failures,
    )
    _emit(cfg.mc_summary_report(result), args.out or run.report_path)
    trace_path = args.trace or run.trace_path
    if trace_path:
        cfg.write_atomic(trace_path, trace_csv(result))
    return EXIT_OK


def cmd_generate(args: argparse.Namespace) -> int:
    world, mc_settings = cfg.load_world_spec(args.config)
    cohort = generate_cohort(world)
    measurements = measure_world(cohort)
    lifts = observed_lifts(measurements, world.journey_set)
    log.info("generate: cohort of %d users measured", cohort.size)
    _emit(cfg.generated_run_config(world, measurements, lifts, mc_settings), args.out)
    if args.cohort_csv:
        cfg.write_atomic(args.cohort_csv, cohort_csv(cohort))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="liftlab",
        description="Pure and global incremental lift estimation for overlapping journeys",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_lift = sub.add_parser("lift", help="delta-method lift from branch tallies")
    p_lift.add_argument("--n-treat", dest="n_treat", type=int)
    p_lift.add_argument("--m-treat", dest="m_treat", type=int)
    p_lift.add_argument("--n-ctrl", dest="n_ctrl", type=int)
    p_lift.add_argument("--m-ctrl", dest="m_ctrl", type=int)
    p_lift.add_argument("--config", help="JSON file with the four counts")
    p_lift.add_argument("--out", help="write the report here instead of stdout")
    p_lift.set_defaults(func=cmd_lift)

    p_fit = sub.add_parser("fit", help="deterministic factor-model fit")
    p_fit.add_argument("--config", required=True)
    p_fit.add_argument("--out")
    p_fit.set_defaults(func=cmd_fit)

    p_sim = sub.add_parser("simulate", help="Monte Carlo parameter uncertainty")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--out")
    p_sim.add_argument("--seed", type=int, help="overrides the config seed")
    p_sim.add_argument("--workers", type=int)
    p_sim.add_argument("--trace", help="write the per-iteration CSV trace here")
    p_sim.set_defaults(func=cmd_simulate)

    p_gen = sub.add_parser("generate", help="measure a synthetic world")
    p_gen.add_argument("--config", required=True, help="world spec JSON")
    p_gen.add_argument("--out")
    p_gen.add_argument("--cohort-csv", dest="cohort_csv", help="export the cohort as CSV")
    p_gen.set_defaults(func=cmd_generate)
    return parser


def _configure_logging() -> None:
    level_name = os.environ.get("LIFTLAB_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[list] = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for message in exc.messages:
            print(f"error: {message}", file=sys.stderr)
        return EXIT_INVALID
    except (InvalidWorldError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ZeroBaselineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ZERO_BASELINE
    except (NonFiniteObjectiveError, DegenerateProblemError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_PROBLEM
    except AllFitsFailedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ALL_FITS_FAILED


if __name__ == "__main__":
    raise SystemExit(main())
