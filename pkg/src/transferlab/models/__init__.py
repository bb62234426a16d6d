from .base import (
    ConvergenceError,
    Model,
    ModelSpec,
    TrainingError,
    UnsupportedFamilyError,
    ValidationStats,
    fit,
    validation_loss,
)
from .forest import ForestModel
from .linear import LogisticModel, RidgeModel
from .nn import NNModel
from .serialize import load_model, model_from_dict, model_to_dict, save_model
from .svm import SVMModel

__all__ = [
    "ConvergenceError",
    "ForestModel",
    "LogisticModel",
    "Model",
    "ModelSpec",
    "NNModel",
    "RidgeModel",
    "SVMModel",
    "TrainingError",
    "UnsupportedFamilyError",
    "ValidationStats",
    "fit",
    "load_model",
    "model_from_dict",
    "model_to_dict",
    "save_model",
    "validation_loss",
]
