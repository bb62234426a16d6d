"""Versioned JSON save/load for trained models (bit-exact round-trip)."""

import dataclasses
import json

import numpy as np

from .base import ModelSpec
from .forest import ForestModel
from .linear import LogisticModel, RidgeModel
from .nn import NNModel
from .svm import SVMModel

FORMAT_VERSION = 1


def model_to_dict(model):
    return {
        "version": FORMAT_VERSION,
        "spec": dataclasses.asdict(model.spec),
        "objective_value": model.objective_value,
        "params": model.params_dict(),
    }


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh)


def model_from_dict(doc):
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc.get('version')!r}")
    spec_doc = dict(doc["spec"])
    spec_doc["hidden_layers"] = tuple(spec_doc.get("hidden_layers") or ())
    spec = ModelSpec(**spec_doc)
    p = doc["params"]
    obj = doc["objective_value"]
    if spec.family in ("linear_svm", "rbf_svm"):
        return SVMModel(
            spec,
            np.array(p["train_X"]),
            np.array(p["train_y"]),
            np.array(p["alpha"]),
            p["b"],
            obj,
        )
    if spec.family == "logistic":
        return LogisticModel(spec, np.array(p["theta"]), p["b"], obj)
    if spec.family == "ridge":
        return RidgeModel(spec, np.array(p["w"]), p["b"], obj)
    if spec.family == "feedforward_nn":
        return NNModel(
            spec,
            [np.array(W) for W in p["weights"]],
            [np.array(b) for b in p["biases"]],
            obj,
        )
    if spec.family == "random_forest":
        return ForestModel(spec, p["trees"], p["n_features"], obj)
    raise ValueError(spec.family)


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))
