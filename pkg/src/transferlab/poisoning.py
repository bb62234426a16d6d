"""Training-time availability attacks.

Hypergradients of the validation loss w.r.t. a poisoning point are
obtained by implicit differentiation of the training stationarity
condition: grad = -(d2L/dx dw) (d2L/dw2)^{-1} grad_w L_val, with the
direct term zero because the validation set never contains the poison
point. The SVM path uses the bordered kernel system over the margin
support vectors instead of a parameter Hessian.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset
from .evasion import bisect_line_search
from .models import fit
from .models.linear import sigmoid
from .models.svm import SV_EPS, fit_svm

COND_LIMIT = 1e12
JITTER = 1e-10
STATIONARITY_TOL = 1e-6


class ConditioningError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class PoisoningConfig:
    fraction_alpha: float
    box_lb: np.ndarray
    box_ub: np.ndarray
    max_outer_iters: int = 10
    convergence_t: float = 1e-6
    line_search_max: int = 10
    init_strategy: str = "label_flip"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.fraction_alpha <= 0.5:
            raise ValueError("fraction_alpha must be in [0, 0.5]")
        if self.init_strategy != "label_flip":
            raise ValueError("only label_flip initialization is supported")
        object.__setattr__(self, "box_lb", np.asarray(self.box_lb, dtype=float))
        object.__setattr__(self, "box_ub", np.asarray(self.box_ub, dtype=float))


@dataclass
class Hypergradient:
    grad: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def _solve_with_jitter(H, rhs, diagnostics):
    cond = float(np.linalg.cond(H))
    diagnostics["hessian_cond"] = cond
    if cond > COND_LIMIT or not np.isfinite(cond):
        H = H + JITTER * np.eye(H.shape[0])
        cond = float(np.linalg.cond(H))
        diagnostics["hessian_cond_jittered"] = cond
        if cond > COND_LIMIT or not np.isfinite(cond):
            raise ConditioningError("Hessian condition number exceeds 1e12", diagnostics)
    return np.linalg.solve(H, rhs)


def _check_stationary(trained, d_full):
    family = trained.spec.family
    X = d_full.X
    y = d_full.y.astype(float)
    if family == "logistic":
        from .models.linear import logistic_objective_grad

        obj, g_t, g_b, _ = logistic_objective_grad(X, y, trained.spec.C, trained.theta, trained.b)
        gnorm = float(np.linalg.norm(np.concatenate([g_t, [g_b]])))
    elif family == "ridge":
        resid = X @ trained.w + trained.b - y
        obj = float(resid @ resid + trained.spec.alpha * (trained.w @ trained.w))
        g_w = 2.0 * (X.T @ resid) + 2.0 * trained.spec.alpha * trained.w
        gnorm = float(np.hypot(np.linalg.norm(g_w), 2.0 * np.sum(resid)))
    else:
        return
    # same objective-scaled tolerance as the solvers: gradients below the
    # objective's float noise cannot be driven further
    if gnorm > STATIONARITY_TOL * max(1.0, obj):
        raise ValueError(f"model not stationary on the poisoned set (|grad|={gnorm:.2e})")


def _logistic_blocks(trained, x_c, y_c, d_full, d_val):
    C = trained.spec.C
    theta, b = trained.theta, trained.b
    d = len(theta)
    X = d_full.X
    y = d_full.y.astype(float)
    sig = sigmoid(y * (X @ theta + b))
    z = sig * (1.0 - sig)
    Xz = X * z[:, None]
    H = np.empty((d + 1, d + 1))
    H[:d, :d] = C * (X.T @ Xz) + np.eye(d)
    H[:d, d] = C * Xz.sum(axis=0)
    H[d, :d] = H[:d, d]
    H[d, d] = C * z.sum()
    sig_c = float(sigmoid(np.array([y_c * (x_c @ theta + b)]))[0])
    z_c = sig_c * (1.0 - sig_c)
    mixed = np.empty((d, d + 1))
    mixed[:, :d] = C * ((y_c * sig_c - y_c) * np.eye(d) + z_c * np.outer(theta, x_c))
    mixed[:, d] = C * z_c * theta
    yv = d_val.y.astype(float)
    sig_v = sigmoid(yv * (d_val.X @ theta + b))
    coef = (sig_v - 1.0) * yv
    val_grad = np.concatenate([d_val.X.T @ coef, [coef.sum()]])
    return H, mixed, val_grad


def _ridge_blocks(trained, x_c, y_c, d_full, d_val):
    w, b, alpha = trained.w, trained.b, trained.spec.alpha
    d = len(w)
    X = d_full.X
    n = X.shape[0]
    H = np.empty((d + 1, d + 1))
    H[:d, :d] = 2.0 * (X.T @ X + alpha * np.eye(d))
    H[:d, d] = 2.0 * X.sum(axis=0)
    H[d, :d] = H[:d, d]
    H[d, d] = 2.0 * n
    f_c = float(x_c @ w + b)
    mixed = np.empty((d, d + 1))
    mixed[:, :d] = 2.0 * ((f_c - y_c) * np.eye(d) + np.outer(w, x_c))
    mixed[:, d] = 2.0 * w
    resid_v = d_val.X @ w + b - d_val.y
    val_grad = np.concatenate([2.0 * (d_val.X.T @ resid_v), [2.0 * resid_v.sum()]])
    return H, mixed, val_grad


_BLOCKS = {"logistic": _logistic_blocks, "ridge": _ridge_blocks}


def hypergradient_generic(trained, x_c, y_c, d_full, d_val):
    """Implicit-differentiation hypergradient for smooth families
    (logistic, ridge). `d_full` is the full (poisoned) training set the
    model was fit on; it contains (x_c, y_c)."""
    family = trained.spec.family
    if family not in _BLOCKS:
        raise ValueError(f"no generic hypergradient blocks for {family}")
    x_c = np.asarray(x_c, dtype=float)
    _check_stationary(trained, d_full)
    H, mixed, val_grad = _BLOCKS[family](trained, x_c, y_c, d_full, d_val)
    diagnostics = {}
    sol = _solve_with_jitter(H, val_grad, diagnostics)
    grad = -mixed @ sol
    diagnostics["direct_term_norm"] = 0.0
    diagnostics["implicit_term_norm"] = float(np.linalg.norm(grad))
    return Hypergradient(grad=grad, diagnostics=diagnostics)


def hypergradient_logistic(trained, x_c, y_c, d_full, d_val):
    """Closed-form logistic hypergradient (bordered sigmoid Hessian).

    Instantiates the same implicit equation as the generic path and must
    agree with it to machine precision.
    """
    if trained.spec.family != "logistic":
        raise ValueError("expects a logistic model")
    x_c = np.asarray(x_c, dtype=float)
    _check_stationary(trained, d_full)
    H, mixed, val_grad = _logistic_blocks(trained, x_c, y_c, d_full, d_val)
    diagnostics = {}
    sol = _solve_with_jitter(H, val_grad, diagnostics)
    grad = -mixed @ sol
    diagnostics["direct_term_norm"] = 0.0
    diagnostics["implicit_term_norm"] = float(np.linalg.norm(grad))
    return Hypergradient(grad=grad, diagnostics=diagnostics)


def hypergradient_svm(trained, x_c, y_c, d_tr, d_val, c_index=None):
    """SVM hypergradient via the bordered kernel system over the margin
    support vectors; validation index set = hinge-active points."""
    if trained.spec.family not in ("linear_svm", "rbf_svm"):
        raise ValueError("expects an SVM model")
    x_c = np.asarray(x_c, dtype=float)
    if c_index is None:
        matches = np.nonzero(
            np.all(np.abs(trained.train_X - x_c[None, :]) < 1e-12, axis=1)
            & (trained.train_y == y_c)
        )[0]
        if len(matches) == 0:
            raise ValueError("poison point not found in the model's training set")
        c_index = int(matches[-1])
    alpha_c = float(trained.alpha[c_index])
    diagnostics = {"alpha_c": alpha_c, "direct_term_norm": 0.0}
    d = trained.n_features
    if alpha_c <= SV_EPS:
        diagnostics["reason"] = "alpha_c=0"
        return Hypergradient(grad=np.zeros(d), diagnostics=diagnostics)
    hinge = trained.native_losses(d_val.X, d_val.y)
    active = np.nonzero(hinge > 0.0)[0]
    diagnostics["n_hinge_active"] = int(len(active))
    if len(active) == 0:
        diagnostics["reason"] = "no hinge-active validation points"
        return Hypergradient(grad=np.zeros(d), diagnostics=diagnostics)
    C = trained.spec.C
    margin = (trained.alpha > SV_EPS) & (trained.alpha < C - SV_EPS)
    margin[c_index] = False
    s = np.nonzero(margin)[0]
    X_s = trained.train_X[s]
    X_k = d_val.X[active]
    y_k = d_val.y[active].astype(float)
    from .models.svm import kernel_matrix

    G_kc = trained.kernel_grad_wrt_point(x_c, X_k).T  # d x v
    first = -G_kc @ y_k
    if len(s) > 0:
        m = len(s)
        M = np.empty((m + 1, m + 1))
        M[:m, :m] = kernel_matrix(trained.spec, X_s, X_s)
        M[:m, m] = 1.0
        M[m, :m] = 1.0
        M[m, m] = 0.0
        rhs = np.empty((m + 1, len(active)))
        rhs[:m] = kernel_matrix(trained.spec, X_s, X_k)
        rhs[m] = 1.0
        sol = _solve_with_jitter(M, rhs @ y_k, diagnostics)
        G_sc = trained.kernel_grad_wrt_point(x_c, X_s).T  # d x m
        second = np.hstack([G_sc, np.zeros((d, 1))]) @ sol
    else:
        second = np.zeros(d)
    grad = y_c * alpha_c * (first + second)
    diagnostics["implicit_term_norm"] = float(np.linalg.norm(grad))
    return Hypergradient(grad=grad, diagnostics=diagnostics)


def hypergradient(trained, x_c, y_c, d_full, d_val, c_index=None):
    """Family dispatch used by the outer poisoning loop. `d_full` is the
    full poisoned training set the model was fit on."""
    family = trained.spec.family
    if family in ("linear_svm", "rbf_svm"):
        return hypergradient_svm(trained, x_c, y_c, d_full, d_val, c_index=c_index)
    if family == "logistic":
        return hypergradient_logistic(trained, x_c, y_c, d_full, d_val)
    return hypergradient_generic(trained, x_c, y_c, d_full, d_val)


def poisoned_dataset(d_tr, poison_X, poison_y):
    lo = min(float(np.min(poison_X)), d_tr.feature_bounds[0]) if len(poison_X) else d_tr.feature_bounds[0]
    hi = max(float(np.max(poison_X)), d_tr.feature_bounds[1]) if len(poison_X) else d_tr.feature_bounds[1]
    return Dataset(
        X=np.vstack([d_tr.X, poison_X]),
        y=np.concatenate([d_tr.y, poison_y]),
        feature_bounds=(min(lo, d_tr.feature_bounds[0]), max(hi, d_tr.feature_bounds[1])),
    )


def n_poison_points(fraction_alpha, n_clean):
    """alpha is the adversarial fraction of the final poisoned training set."""
    if fraction_alpha == 0.0:
        return 0
    return math.ceil(fraction_alpha * n_clean / (1.0 - fraction_alpha))


def run_poisoning(surrogate_spec, d_tr, d_val, cfg):
    """Round-robin gradient ascent on the validation loss, retraining the
    surrogate after every candidate step.

    Returns (poison Dataset or None when alpha=0, trace). The trace lists
    the validation loss after every accepted step and is non-decreasing.
    """
    n_p = n_poison_points(cfg.fraction_alpha, d_tr.n)
    trace = []
    skipped = []
    if n_p == 0:
        return None, trace
    rng = np.random.default_rng(cfg.seed)
    idx = rng.choice(d_tr.n, size=n_p, replace=n_p > d_tr.n)
    poison_X = np.array(d_tr.X[idx])
    poison_y = -d_tr.y[idx]  # label-flip initialization

    warm = {"alpha": None}

    def refit(P_X):
        ds = poisoned_dataset(d_tr, P_X, poison_y)
        if surrogate_spec.family in ("linear_svm", "rbf_svm"):
            model = fit_svm(surrogate_spec, ds, warm_alpha=warm["alpha"])
            warm["alpha"] = model.alpha.copy()
        else:
            model = fit(surrogate_spec, ds)
        return model

    def val_loss(model):
        return float(np.sum(model.native_losses(d_val.X, d_val.y)))

    model = refit(poison_X)
    current = val_loss(model)
    trace.append(current)
    for outer in range(cfg.max_outer_iters):
        sweep_start = current
        for i in range(n_p):
            ds_full = poisoned_dataset(d_tr, poison_X, poison_y)
            try:
                hg = hypergradient(
                    model, poison_X[i], poison_y[i], ds_full, d_val, c_index=d_tr.n + i
                )
            except ConditioningError as exc:
                skipped.append((outer, i, str(exc)))
                continue
            g = hg.grad
            gnorm = float(np.linalg.norm(g))
            if gnorm == 0.0:
                continue
            span = float(np.max(cfg.box_ub - cfg.box_lb))
            eta_max = span / gnorm * np.sqrt(len(g))

            def objective(x_cand):
                P = np.array(poison_X)
                P[i] = x_cand
                return val_loss(refit(P))

            _, x_best, f_best = bisect_line_search(
                lambda z: objective(z),
                poison_X[i],
                g,
                lambda z: np.clip(z, cfg.box_lb, cfg.box_ub),
                cfg.line_search_max,
                eta_max,
            )
            if f_best > current:
                poison_X[i] = x_best
                current = f_best
                trace.append(current)
                model = refit(poison_X)
        model = refit(poison_X)
        current = val_loss(model)
        if abs(current - sweep_start) <= cfg.convergence_t:
            break
    poison = Dataset(
        X=np.clip(poison_X, cfg.box_lb, cfg.box_ub),
        y=poison_y,
        feature_bounds=(float(np.min(cfg.box_lb)), float(np.max(cfg.box_ub))),
    )
    return poison, trace


def evaluate_poisoning(target_spec, d_tr, poison_points, test):
    """Train the target on the poisoned set and return its 0/1 test error."""
    if poison_points is None or poison_points.n == 0:
        train = d_tr
    else:
        train = poisoned_dataset(d_tr, poison_points.X, poison_points.y)
    model = fit(target_spec, train)
    return model.zero_one_error(test)
