"""Regress subjective fatigue ratings from eye-tracking velocity sequences."""
from .densenet import DenseNetRegressor, ModelConfig, build
from .signal_prep import PrepConfig, preprocess
from .training import TrainConfig, train

__all__ = ["DenseNetRegressor", "ModelConfig", "PrepConfig", "TrainConfig", "build", "preprocess", "train"]
__version__ = "0.1.0"
