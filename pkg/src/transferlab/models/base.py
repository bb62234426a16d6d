"""Model specs, the common classifier interface, and training dispatch.

Every family exposes the same attacker-facing surface: a real-valued
decision function f, the attack loss -y*f, its input gradient, and the
family's native training loss for validation statistics.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

FAMILIES = ("linear_svm", "rbf_svm", "logistic", "ridge", "feedforward_nn", "random_forest")

# hyperparameters each family is allowed to set (besides train_seed)
_FAMILY_PARAMS = {
    "linear_svm": {"C"},
    "rbf_svm": {"C", "kernel_gamma"},
    "logistic": {"C"},
    "ridge": {"alpha"},
    "feedforward_nn": {"weight_decay", "hidden_layers"},
    "random_forest": {"n_trees", "max_depth"},
}


class TrainingError(RuntimeError):
    """Training could not be carried out (e.g. single-class data)."""


class ConvergenceError(RuntimeError):
    def __init__(self, message, grad_norm=None):
        super().__init__(message)
        self.grad_norm = grad_norm


class UnsupportedFamilyError(TypeError):
    """Operation not defined for this model family (e.g. forest gradients)."""


@dataclass(frozen=True)
class ModelSpec:
    family: str
    C: Optional[float] = None
    alpha: Optional[float] = None
    weight_decay: Optional[float] = None
    kernel_gamma: Optional[float] = None
    hidden_layers: tuple = ()
    n_trees: Optional[int] = None
    max_depth: Optional[int] = None
    train_seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        allowed = _FAMILY_PARAMS[self.family]
        set_params = {
            name
            for name in ("C", "alpha", "weight_decay", "kernel_gamma", "n_trees", "max_depth")
            if getattr(self, name) is not None
        }
        if self.hidden_layers:
            set_params.add("hidden_layers")
            object.__setattr__(self, "hidden_layers", tuple(self.hidden_layers))
        if set_params - allowed:
            raise ValueError(
                f"{self.family} does not take hyperparameters {sorted(set_params - allowed)}"
            )
        if self.family in ("linear_svm", "rbf_svm", "logistic") and not (self.C or 0) > 0:
            raise ValueError("C must be positive")
        if self.family == "ridge" and not (self.alpha or 0) > 0:
            raise ValueError("alpha must be positive")
        if self.family == "rbf_svm" and not (self.kernel_gamma or 0) > 0:
            raise ValueError("kernel_gamma must be positive")
        if self.family == "feedforward_nn":
            if self.weight_decay is None or self.weight_decay < 0:
                raise ValueError("weight_decay must be >= 0")
            if not self.hidden_layers:
                raise ValueError("feedforward_nn needs at least one hidden layer")
        if self.family == "random_forest" and not (self.n_trees or 0) >= 1:
            raise ValueError("n_trees must be >= 1")


@dataclass(frozen=True)
class ValidationStats:
    loss_sum: float
    loss_mean: float
    zero_one_error: float


class Model:
    """Trained classifier base. Subclasses are immutable after fit."""

    differentiable = True

    def __init__(self, spec, objective_value):
        self.spec = spec
        self.objective_value = objective_value

    # -- family-specific -------------------------------------------------
    def decision_function(self, X):
        """Real-valued scores for a 2-d batch of inputs."""
        raise NotImplementedError

    def decision_gradient(self, x):
        """Gradient of the decision function at a single point."""
        raise NotImplementedError

    def native_losses(self, X, y):
        """Per-point training-loss values (hinge/logistic/squared/xent)."""
        raise NotImplementedError

    def params_dict(self):
        raise NotImplementedError

    # -- shared ----------------------------------------------------------
    def decision_value(self, x):
        return float(self.decision_function(np.asarray(x, dtype=float)[None, :])[0])

    def predict(self, X):
        return np.where(self.decision_function(X) >= 0.0, 1, -1)

    def point_loss(self, x, y):
        """Attack loss -y*f(x), the evasion objective for every family."""
        return -y * self.decision_value(x)

    def point_losses(self, X, y):
        return -np.asarray(y, dtype=float) * self.decision_function(X)

    def input_gradient(self, x, y):
        """Gradient of the attack loss -y*f w.r.t. the input."""
        if not self.differentiable:
            raise UnsupportedFamilyError(f"{self.spec.family} has no input gradients")
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_features,):
            raise ValueError(f"expected a vector of dim {self.n_features}")
        return -y * self.decision_gradient(x)

    def training_loss_at_point(self, x, y):
        return float(self.native_losses(np.asarray(x, dtype=float)[None, :], np.array([y]))[0])

    def zero_one_error(self, dataset):
        return float(np.mean(self.predict(dataset.X) != dataset.y))


def validation_loss(model, val):
    """Sum of the family's native loss over a dataset, plus mean and error."""
    if val is None or val.n == 0:
        return ValidationStats(0.0, 0.0, 0.0)
    losses = model.native_losses(val.X, val.y)
    return ValidationStats(
        loss_sum=float(np.sum(losses)),
        loss_mean=float(np.mean(losses)),
        zero_one_error=model.zero_one_error(val),
    )


def fit(spec, train):
    """Train a model of the requested family. Deterministic per train_seed."""
    from . import forest, linear, nn, svm

    if spec.family != "random_forest" and len(np.unique(train.y)) < 2:
        raise TrainingError("training data must contain both classes")
    if spec.family in ("linear_svm", "rbf_svm"):
        return svm.fit_svm(spec, train)
    if spec.family == "logistic":
        return linear.fit_logistic(spec, train)
    if spec.family == "ridge":
        return linear.fit_ridge(spec, train)
    if spec.family == "feedforward_nn":
        return nn.fit_nn(spec, train)
    if spec.family == "random_forest":
        return forest.fit_forest(spec, train)
    raise ValueError(spec.family)
