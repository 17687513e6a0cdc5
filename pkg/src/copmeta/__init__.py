"""Hybrid copula mixed models for meta-analysis of diagnostic test accuracy.

Case-control studies inform sensitivity and specificity through a bivariate
copula mixed model; cohort studies also inform disease prevalence through a
truncated three-dimensional vine copula mixed model. Both share margins and
are fitted jointly by maximum likelihood with Gauss-Legendre quadrature.
"""

from .copula import CopulaFamily, CopulaSpec, tau_to_theta, theta_to_tau
from .inference import (
    ConfigurationError,
    FitResult,
    LrtResult,
    fit_cl,
    fit_ml,
    lrt_vs_independence,
    model_scan,
)
from .io import parse_dataset, read_fit_report, write_dataset, write_fit_report
from .likelihood import Dataset, Design, ModelSpec, ParamSet, StudyRecord, hybrid_loglik
from .margin import LinkFn, MarginKind, MarginSpec
from .simulate import FitCandidate, SimConfig, run_simulation_study, simulate_dataset
from .sroc import density_grid, quantile_curve, summary_point

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "CopulaFamily",
    "CopulaSpec",
    "Dataset",
    "Design",
    "FitCandidate",
    "FitResult",
    "LinkFn",
    "LrtResult",
    "MarginKind",
    "MarginSpec",
    "ModelSpec",
    "ParamSet",
    "SimConfig",
    "StudyRecord",
    "density_grid",
    "fit_cl",
    "fit_ml",
    "hybrid_loglik",
    "lrt_vs_independence",
    "model_scan",
    "parse_dataset",
    "quantile_curve",
    "read_fit_report",
    "run_simulation_study",
    "simulate_dataset",
    "summary_point",
    "tau_to_theta",
    "theta_to_tau",
    "write_dataset",
    "write_fit_report",
]
