"""Inference for multivariate coefficients of variation in factorial designs."""

__version__ = "0.1.0"

from .design import (
    ContrastMatrix,
    FactorLayout,
    centering_matrix,
    dunnett_contrasts,
    factorial_effect_matrix,
    tukey_contrasts,
    validate_contrast,
)
from .estimation import (
    DegeneracyError,
    EstimateResult,
    McvVariant,
    MomentSet,
    Sample,
    estimate,
    mcv,
    one_sample_ci,
    sample_moments,
)
from .numkit import RngStream, make_rng
from .sim import ScenarioConfig, ScenarioResult, run_moment_mimic, run_scenario
from .tests_global import (
    GroupedData,
    Target,
    TestResult,
    asymptotic_test,
    bootstrap_test,
    permutation_test,
    wald_statistic,
)
from .tests_multiple import MctResult, asymptotic_mct, bootstrap_mct, mct_global_p

__all__ = [
    "ContrastMatrix",
    "DegeneracyError",
    "EstimateResult",
    "FactorLayout",
    "GroupedData",
    "McvVariant",
    "MctResult",
    "MomentSet",
    "RngStream",
    "Sample",
    "ScenarioConfig",
    "ScenarioResult",
    "Target",
    "TestResult",
    "asymptotic_mct",
    "asymptotic_test",
    "bootstrap_mct",
    "bootstrap_test",
    "centering_matrix",
    "dunnett_contrasts",
    "estimate",
    "factorial_effect_matrix",
    "make_rng",
    "mcv",
    "mct_global_p",
    "one_sample_ci",
    "permutation_test",
    "run_moment_mimic",
    "run_scenario",
    "sample_moments",
    "tukey_contrasts",
    "validate_contrast",
    "wald_statistic",
]
