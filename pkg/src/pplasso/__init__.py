"""Simultaneous selection of prognostic and predictive biomarkers."""

from .covariance import (
    CovarianceModel,
    EstimatorCandidate,
    cv_select,
    estimate,
    sample_correlation,
    symmetric_roots,
)
from .pipeline import PPLassoConfig, PPLassoResult, run_pplasso
from .solver import TrialData, build_design, coordinate_descent, fit_path

__version__ = "0.1.0"
