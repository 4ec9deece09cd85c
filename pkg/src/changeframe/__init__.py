"""Detect periods of relevant change in time-response curves.

Fit a 4pLL or beta time-response model, build a bootstrap-t lower
simultaneous confidence band for ``|f'(t)|`` and report the times where it
exceeds a relevance threshold, with percentile intervals for the start, end
and maximum of each period.
"""

__version__ = "0.1.0"

from .bootstrap import BootstrapConfig, ConfidenceBand, lower_band, two_step_band
from .ci import compare_onsets, time_point_cis
from .detection import (
    ChangeReport,
    Region,
    change_summary,
    default_lambda,
    extract_regions,
    find_regions,
    test_h0,
)
from .estimator import ChangeFrameDetector, TimeResponseRegressor
from .exceptions import (
    ChangeFrameError,
    DataError,
    DomainError,
    InvalidParameterError,
    NumericalError,
)
from .fitting import Dataset, FitOptions, FitResult, TimeDesign, fit_ols, select_model
from .models import ModelSpec, beta, eval_derivative, eval_model, fourpll

__all__ = [
    "BootstrapConfig", "ConfidenceBand", "lower_band", "two_step_band",
    "compare_onsets", "time_point_cis",
    "ChangeReport", "Region", "change_summary", "default_lambda", "extract_regions",
    "find_regions", "test_h0",
    "ChangeFrameDetector", "TimeResponseRegressor",
    "ChangeFrameError", "DataError", "DomainError", "InvalidParameterError", "NumericalError",
    "Dataset", "FitOptions", "FitResult", "TimeDesign", "fit_ols", "select_model",
    "ModelSpec", "beta", "eval_derivative", "eval_model", "fourpll",
]
