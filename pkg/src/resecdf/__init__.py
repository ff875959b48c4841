"""Residual-eCDF estimation of finite-population CDFs and quantiles.

Combines a probability sample (covariates and design weights, no response)
with a convenience sample (covariates and response, no weights).
"""

__version__ = "0.1.0"

from .api import ResidualCDFEstimator
from .estimators import (cdf_ht, cdf_naive, cdf_plugin, cdf_residual, invert_quantile,
                         residual_curve, woodruff_interval)
from .exceptions import (ConfigError, EstimationError, InvariantViolation, SamplingError,
                         SimulationError)
from .population import FinitePopulation, finite_cdf, finite_quantile, generate_population
from .regression import FittedModel, ScaleFunction, fit_linear
from .sampling import (ConvenienceSample, ProbabilitySample, draw_convenience, draw_srs_wor,
                       joint_inclusion)
from .simharness import SimConfig, SimReport, run_monte_carlo
from .variance import (VarianceReport, bootstrap, bootstrap_variance, var_cdf_asymptotic,
                       var_cdf_srs, var_quantile_woodruff)

__all__ = [
    "ResidualCDFEstimator", "cdf_ht", "cdf_naive", "cdf_plugin", "cdf_residual",
    "invert_quantile", "residual_curve", "woodruff_interval", "ConfigError", "EstimationError",
    "InvariantViolation", "SamplingError", "SimulationError", "FinitePopulation", "finite_cdf",
    "finite_quantile", "generate_population", "FittedModel", "ScaleFunction", "fit_linear",
    "ConvenienceSample", "ProbabilitySample", "draw_convenience", "draw_srs_wor",
    "joint_inclusion", "SimConfig", "SimReport", "run_monte_carlo", "VarianceReport",
    "bootstrap", "bootstrap_variance", "var_cdf_asymptotic", "var_cdf_srs",
    "var_quantile_woodruff",
]
