"""Hybrid transformer/CNN segmentation network with a from-scratch autodiff core."""

from .config import RunConfig
from .exceptions import ConfigError, DataError
from .losses import LossConfig, combined_loss, total_loss
from .metrics import MetricReport, evaluate
from .model import ModelConfig, MugenNet
from .tensor import NumericalError, ShapeError, Tensor

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "ConfigError", "DataError", "LossConfig", "combined_loss",
    "total_loss", "MetricReport", "evaluate", "ModelConfig", "MugenNet",
    "NumericalError", "ShapeError", "Tensor", "__version__",
]
