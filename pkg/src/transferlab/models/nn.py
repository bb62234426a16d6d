"""Feed-forward ReLU network trained by full-batch gradient descent."""

import numpy as np

from .base import Model
from .linear import _log1pexp, sigmoid

LEARNING_RATE = 0.5
MAX_ITERS = 2000


class NNModel(Model):
    def __init__(self, spec, weights, biases, objective_value):
        super().__init__(spec, objective_value)
        self.weights = weights  # list of (fan_out, fan_in) matrices
        self.biases = biases
        self.n_features = weights[0].shape[1]

    def _forward(self, X):
        """Returns pre-activations per layer; output layer last (n,)."""
        pre = []
        a = X
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            z = a @ W.T + b
            pre.append(z)
            a = np.maximum(z, 0.0)
        out = a @ self.weights[-1].T + self.biases[-1]
        pre.append(out[:, 0])
        return pre

    def decision_function(self, X):
        return self._forward(np.asarray(X, dtype=float))[-1]

    def decision_gradient(self, x):
        pre = self._forward(x[None, :])
        # backprop df/dx; ReLU subgradient 0 at the kink
        g = self.weights[-1][0]
        for W, z in zip(reversed(self.weights[:-1]), reversed(pre[:-1])):
            g = (g * (z[0] > 0.0)) @ W
        return g

    def native_losses(self, X, y):
        margins = np.asarray(y, dtype=float) * self.decision_function(X)
        return _log1pexp(-margins)

    def params_dict(self):
        return {
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }


def _init_params(spec, d, rng):
    sizes = [d] + list(spec.hidden_layers) + [1]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def _loss_and_grads(weights, biases, X, y, decay):
    n = len(y)
    acts = [X]
    pres = []
    a = X
    for W, b in zip(weights[:-1], biases[:-1]):
        z = a @ W.T + b
        pres.append(z)
        a = np.maximum(z, 0.0)
        acts.append(a)
    f = (a @ weights[-1].T + biases[-1])[:, 0]
    margins = y * f
    loss = float(np.mean(_log1pexp(-margins))) + decay * sum(float(np.sum(W * W)) for W in weights)
    delta = ((sigmoid(margins) - 1.0) * y / n)[:, None]
    grads_W, grads_b = [], []
    for layer in range(len(weights) - 1, -1, -1):
        grads_W.append(delta.T @ acts[layer] + 2.0 * decay * weights[layer])
        grads_b.append(delta.sum(axis=0))
        if layer > 0:
            delta = (delta @ weights[layer]) * (pres[layer - 1] > 0.0)
    return loss, grads_W[::-1], grads_b[::-1]


def fit_nn(spec, train):
    X = train.X
    y = train.y.astype(np.float64)
    rng = np.random.default_rng(spec.train_seed)
    weights, biases = _init_params(spec, X.shape[1], rng)
    loss = np.inf
    for _ in range(MAX_ITERS):
        loss, grads_W, grads_b = _loss_and_grads(weights, biases, X, y, spec.weight_decay)
        for W, b, gW, gb in zip(weights, biases, grads_W, grads_b):
            W -= LEARNING_RATE * gW
            b -= LEARNING_RATE * gb
    return NNModel(spec, weights, biases, float(loss))
