"""Hot numeric kernels, compiled with numba when available.

Set TRANSFERLAB_NO_NUMBA=1 to force the pure-numpy/python fallback path.
Both paths share the same source for the SMO loop; the RBF kernel has a
vectorized numpy fallback since the loop form is only fast when compiled.
"""

import os

import numpy as np

USE_NUMBA = os.environ.get("TRANSFERLAB_NO_NUMBA", "") not in ("1", "true", "yes")
if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        USE_NUMBA = False


def _smo_loop(K, y, C, alpha, b, tol, max_passes):
    """Sequential minimal optimization on the dual SVM problem.

    Maximizes sum(alpha) - 0.5 * (alpha*y)' K (alpha*y) subject to
    0 <= alpha_i <= C and sum(alpha_i y_i) = 0. Each iteration updates the
    maximal violating pair (the index pair realizing the duality-gap bounds
    b_up and b_low), which always admits a positive step, so the loop is
    deterministic and cannot cycle. Supports warm starts through a feasible
    initial `alpha`; the incoming `b` is ignored and recomputed.

    Returns (alpha, b, n_iters, converged_flag).
    """
    n = y.shape[0]
    f = K @ (alpha * y)  # decision values without the bias term
    iters = 0
    b_out = 0.0
    snap = 1e-12 * (1.0 + C)
    while iters < max_passes:
        iters += 1
        # F_t = f_t - y_t; optimal when max_{I_low} F <= min_{I_up} F + tol
        i = -1
        b_up = np.inf
        b_low = -np.inf
        for t in range(n):
            F = f[t] - y[t]
            if (y[t] > 0.0 and alpha[t] < C) or (y[t] < 0.0 and alpha[t] > 0.0):
                if F < b_up:
                    b_up = F
                    i = t
            if (y[t] > 0.0 and alpha[t] > 0.0) or (y[t] < 0.0 and alpha[t] < C):
                if F > b_low:
                    b_low = F
        b_out = -0.5 * (b_up + b_low)
        if i < 0 or b_low - b_up <= tol:
            return alpha, b_out, iters, True
        # second-order choice of the partner: maximal decrease estimate
        # (F_t - F_i)^2 / eta_t among violating candidates
        j = -1
        best_gain = 0.0
        for t in range(n):
            if (y[t] > 0.0 and alpha[t] > 0.0) or (y[t] < 0.0 and alpha[t] < C):
                diff = (f[t] - y[t]) - b_up
                if diff > tol:
                    eta_t = K[i, i] + K[t, t] - 2.0 * K[i, t]
                    if eta_t < 1e-12:
                        eta_t = 1e-12
                    gain = diff * diff / eta_t
                    if gain > best_gain:
                        best_gain = gain
                        j = t
        if j < 0:
            return alpha, b_out, iters, True
        a_i_old = alpha[i]
        a_j_old = alpha[j]
        if y[i] != y[j]:
            lo = max(0.0, a_j_old - a_i_old)
            hi = min(C, C + a_j_old - a_i_old)
        else:
            lo = max(0.0, a_i_old + a_j_old - C)
            hi = min(C, a_i_old + a_j_old)
        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if eta < 1e-12:
            eta = 1e-12
        F_i = f[i] - y[i]
        F_j = f[j] - y[j]
        a_j = a_j_old + y[j] * (F_i - F_j) / eta
        if a_j > hi:
            a_j = hi
        elif a_j < lo:
            a_j = lo
        # snap near-bound values onto the exact bounds so the strict
        # inequalities in the working-set selection never misfire; the
        # equality constraint drifts by at most the snap width per step
        if a_j < snap:
            a_j = 0.0
        elif C - a_j < snap:
            a_j = C
        if a_j == a_j_old:
            # bounds block the pair completely; the remaining gap is not
            # resolvable, report the current iterate
            return alpha, b_out, iters, b_low - b_up <= tol
        a_i = a_i_old + y[i] * y[j] * (a_j_old - a_j)
        if a_i < snap:
            a_i = 0.0
        elif C - a_i < snap:
            a_i = C
        for t in range(n):
            f[t] += (a_i - a_i_old) * y[i] * K[t, i] + (a_j - a_j_old) * y[j] * K[t, j]
        alpha[i] = a_i
        alpha[j] = a_j
    return alpha, b_out, iters, False


def _rbf_kernel_loop(X, Z, gamma):
    n, d = X.shape
    m = Z.shape[0]
    K = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(d):
                diff = X[i, k] - Z[j, k]
                s += diff * diff
            K[i, j] = np.exp(-gamma * s)
    return K


def _rbf_kernel_numpy(X, Z, gamma):
    sq = (
        np.sum(X * X, axis=1)[:, None]
        + np.sum(Z * Z, axis=1)[None, :]
        - 2.0 * (X @ Z.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


if USE_NUMBA:
    smo_loop = njit(cache=True)(_smo_loop)
    rbf_kernel = njit(cache=True)(_rbf_kernel_loop)
else:
    smo_loop = _smo_loop
    rbf_kernel = _rbf_kernel_numpy
