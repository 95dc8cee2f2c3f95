"""Polynomial interaction networks with static and instance-dependent parameters."""

__version__ = "0.1.0"

from .dataio import CTREncoder, Dataset, FieldSpec, read_cache, write_cache
from .estimator import DynIntClassifier
from .model import DynIntModel, TrainConfig
from .ndcore import ConfigurationError, ShapeError
from .objective import MetricReport, UndefinedMetricError, auc, log_loss

__all__ = [
    "CTREncoder",
    "ConfigurationError",
    "Dataset",
    "DynIntClassifier",
    "DynIntModel",
    "FieldSpec",
    "MetricReport",
    "ShapeError",
    "TrainConfig",
    "UndefinedMetricError",
    "auc",
    "log_loss",
    "read_cache",
    "write_cache",
]
