"""Logistic regression (Newton) and ridge classification (closed form)."""

import numpy as np

from .base import ConvergenceError, Model

NEWTON_TOL = 1e-10
NEWTON_MAX_ITERS = 200


def _log1pexp(t):
    # log(1 + exp(t)) without overflow
    out = np.empty_like(t)
    big = t > 30
    out[big] = t[big]
    out[~big] = np.log1p(np.exp(t[~big]))
    return out


def sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


class LogisticModel(Model):
    """Objective: C * sum_i log(1 + exp(-y_i f_i)) + 0.5 ||theta||^2.

    The bias is unregularized, matching the identity block in the
    parameter Hessian used by the poisoning attack.
    """

    def __init__(self, spec, theta, b, objective_value):
        super().__init__(spec, objective_value)
        self.theta = theta
        self.b = b
        self.n_features = len(theta)

    def decision_function(self, X):
        return np.asarray(X, dtype=float) @ self.theta + self.b

    def decision_gradient(self, x):
        return self.theta.copy()

    def native_losses(self, X, y):
        margins = np.asarray(y, dtype=float) * self.decision_function(X)
        return _log1pexp(-margins)

    def params_dict(self):
        return {"theta": self.theta.tolist(), "b": self.b}


class RidgeModel(Model):
    """Objective: sum_i (f_i - y_i)^2 + alpha ||w||^2 (bias unregularized)."""

    def __init__(self, spec, w, b, objective_value):
        super().__init__(spec, objective_value)
        self.w = w
        self.b = b
        self.n_features = len(w)

    def decision_function(self, X):
        return np.asarray(X, dtype=float) @ self.w + self.b

    def decision_gradient(self, x):
        return self.w.copy()

    def native_losses(self, X, y):
        resid = self.decision_function(X) - np.asarray(y, dtype=float)
        return resid * resid

    def params_dict(self):
        return {"w": self.w.tolist(), "b": self.b}


def logistic_objective_grad(X, y, C, theta, b):
    margins = y * (X @ theta + b)
    sig = sigmoid(margins)
    coef = (sig - 1.0) * y  # d/df log(1+exp(-yf)) = (sigma-1) y
    grad_theta = C * (X.T @ coef) + theta
    grad_b = C * np.sum(coef)
    obj = C * np.sum(_log1pexp(-margins)) + 0.5 * theta @ theta
    z = sig * (1.0 - sig)
    return obj, grad_theta, grad_b, z


def fit_logistic(spec, train):
    X = train.X
    y = train.y.astype(np.float64)
    n, d = X.shape
    C = spec.C
    theta = np.zeros(d)
    b = 0.0
    for _ in range(NEWTON_MAX_ITERS):
        obj, g_theta, g_b, z = logistic_objective_grad(X, y, C, theta, b)
        grad = np.concatenate([g_theta, [g_b]])
        gnorm = np.linalg.norm(grad)
        if gnorm <= NEWTON_TOL * max(1.0, obj):
            break
        H = np.empty((d + 1, d + 1))
        Xz = X * z[:, None]
        H[:d, :d] = C * (X.T @ Xz) + np.eye(d)
        H[:d, d] = C * Xz.sum(axis=0)
        H[d, :d] = H[:d, d]
        H[d, d] = C * z.sum()
        step = np.linalg.solve(H, grad)
        # a Newton decrement below the objective's float resolution means no
        # representable progress is left; stop instead of spinning
        if 0.5 * float(grad @ step) <= 1e-14 * max(1.0, obj):
            break
        # backtracking keeps Newton monotone on poorly scaled problems
        t = 1.0
        for _ in range(50):
            theta_new = theta - t * step[:d]
            b_new = b - t * step[d]
            obj_new = C * np.sum(_log1pexp(-y * (X @ theta_new + b_new))) + 0.5 * theta_new @ theta_new
            if obj_new <= obj - 1e-4 * t * (grad @ step):
                break
            t *= 0.5
        theta, b = theta_new, b_new
    obj, g_theta, g_b, _ = logistic_objective_grad(X, y, C, theta, b)
    gnorm = float(np.linalg.norm(np.concatenate([g_theta, [g_b]])))
    # stationarity tolerance scales with the objective: large-C fits on big
    # sets cannot resolve gradients below the objective's float noise
    if gnorm > 1e-6 * max(1.0, obj):
        raise ConvergenceError("logistic Newton solver stalled", grad_norm=gnorm)
    return LogisticModel(spec, theta, float(b), float(obj))


def fit_ridge(spec, train):
    X = train.X
    y = train.y.astype(np.float64)
    n, d = X.shape
    A = np.empty((d + 1, d + 1))
    A[:d, :d] = X.T @ X + spec.alpha * np.eye(d)
    A[:d, d] = X.sum(axis=0)
    A[d, :d] = A[:d, d]
    A[d, d] = n
    rhs = np.concatenate([X.T @ y, [np.sum(y)]])
    sol = np.linalg.solve(A, rhs)
    w, b = sol[:d], float(sol[d])
    resid = X @ w + b - y
    obj = float(resid @ resid + spec.alpha * (w @ w))
    return RidgeModel(spec, w, b, obj)
