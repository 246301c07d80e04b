"""Dual martingale upper bounds and regression lower bounds for Bermudan options."""

__version__ = "0.1.0"

from .engine import (  # noqa: E402
    BoundEstimate,
    DualCoefficients,
    DualMartingaleEstimator,
    VarianceDiagnostics,
    backward_pass,
    lower_bound,
    upper_bound,
)
from .regression import BasisSet, LeastSquaresRegressor, default_basis  # noqa: E402
from .stochastic import GbmModel, PathBatch, RngStream, TimeGrid, make_stream, simulate_gbm, simulate_gbm_blocks  # noqa: E402

__all__ = [
    "__version__",
    "BasisSet",
    "BoundEstimate",
    "DualCoefficients",
    "DualMartingaleEstimator",
    "GbmModel",
    "LeastSquaresRegressor",
    "PathBatch",
    "RngStream",
    "TimeGrid",
    "VarianceDiagnostics",
    "backward_pass",
    "default_basis",
    "lower_bound",
    "make_stream",
    "simulate_gbm",
    "simulate_gbm_blocks",
    "upper_bound",
]
