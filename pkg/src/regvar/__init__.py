"""Forecasting toolkit for daily-regenerating high-dimensional time series.

Fits l1-penalized vector-autoregressive predictors within each day,
detects intra-day regime switches by cross-validation, generates
synthetic benchmark data, and evaluates predictors against classical
baselines with interpretability exports.
"""

from .dataset import DayTensor, RawLog, SlotSpec, SplitSpec
from .errors import RegvarError
from .solver import PenaltySpec, SolverConfig
from .sparse import SparseMatrix, SparseVector
from .varmodel import LinearPredictor, MomentModel

__all__ = [
    "DayTensor",
    "RawLog",
    "SlotSpec",
    "SplitSpec",
    "RegvarError",
    "PenaltySpec",
    "SolverConfig",
    "SparseMatrix",
    "SparseVector",
    "LinearPredictor",
    "MomentModel",
]
