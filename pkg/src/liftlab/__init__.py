"""Pure and global incremental lift estimation for overlapping journeys.

The package estimates observed A/B lifts with delta-method uncertainty,
fits a multiplicative hierarchical factor model to them by regularized
nonlinear least squares, quantifies parameter uncertainty with
Dirichlet-driven Monte Carlo, and validates the whole chain against
synthetic cohorts with known ground truth.
"""

from .errors import (
    AllFitsFailedError,
    ConfigError,
    DegenerateProblemError,
    InvalidWorldError,
    LiftLabError,
    NegativeVarianceError,
    NonFiniteObjectiveError,
    ValidationError,
    ZeroBaselineError,
)
from .experiment import (
    ConversionRates,
    ExperimentCounts,
    LiftEstimate,
    RegressionCoefficients,
    conversion_rates,
    delta_method_lift,
    estimate_lift,
    regression_coefficients,
)
from .factor_model import (
    Combination,
    DerivedQuantities,
    Hyperparams,
    JourneySet,
    LiftObservation,
    ModelParams,
    ObservedLifts,
    OverlapDistribution,
    combination_factor,
    combo_key,
    derived_quantities,
    expected_effect_off,
    expected_effect_on,
    predicted_global_lift,
    predicted_onoff_lift,
    residual_vector,
)
from .estimator import FitConfig, FitResult, fit, objective_gradient
from .montecarlo import (
    McConfig,
    McResult,
    McSummary,
    QuantitySummary,
    perturb_lifts,
    run_monte_carlo,
    sample_proportions,
    trace_csv,
)
from .synthcohort import (
    SyntheticCohort,
    WorldMeasurements,
    WorldSpec,
    cohort_csv,
    enumeration_oracle,
    generate_cohort,
    measure_world,
    observed_lifts,
    virtual_experiment,
)

__version__ = "0.1.0"

__all__ = [
    "AllFitsFailedError",
    "Combination",
    "ConfigError",
    "ConversionRates",
    "DegenerateProblemError",
    "DerivedQuantities",
    "ExperimentCounts",
    "FitConfig",
    "FitResult",
    "Hyperparams",
    "InvalidWorldError",
    "JourneySet",
    "LiftEstimate",
    "LiftLabError",
    "LiftObservation",
    "McConfig",
    "McResult",
    "McSummary",
    "ModelParams",
    "NegativeVarianceError",
    "NonFiniteObjectiveError",
    "ObservedLifts",
    "OverlapDistribution",
    "QuantitySummary",
    "RegressionCoefficients",
    "SyntheticCohort",
    "ValidationError",
    "WorldMeasurements",
    "WorldSpec",
    "ZeroBaselineError",
    "cohort_csv",
    "combination_factor",
    "combo_key",
    "conversion_rates",
    "delta_method_lift",
    "derived_quantities",
    "enumeration_oracle",
    "estimate_lift",
    "expected_effect_off",
    "expected_effect_on",
    "fit",
    "generate_cohort",
    "measure_world",
    "objective_gradient",
    "observed_lifts",
    "perturb_lifts",
    "predicted_global_lift",
    "predicted_onoff_lift",
    "regression_coefficients",
    "residual_vector",
    "run_monte_carlo",
    "sample_proportions",
    "trace_csv",
    "virtual_experiment",
]
