"""Transferability metrics (gradient size, gradient alignment, loss
variability), closed-form loss increments, and the statistical tests."""

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats as _scipy_stats

from .models import fit

DUAL_NORM = {1: np.inf, 2: 2, np.inf: 1}


class IncompleteReportError(ValueError):
    """A surrogate x target grid cell is missing."""


class UndefinedStatisticError(ValueError):
    """Zero-variance or degenerate input to a correlation/test."""


def metric_S(target, points, p):
    """Per-point dual norm of the target's input-loss gradient, and mean."""
    q = DUAL_NORM[p]
    vals = np.array(
        [
            np.linalg.norm(target.input_gradient(points.X[i], points.y[i]), ord=q)
            for i in range(points.n)
        ]
    )
    return vals, float(vals.mean())


def metric_R(surrogate, target, points, max_excluded_frac=0.1):
    """Per-point cosine between surrogate and target input gradients.

    Points where either gradient vanishes are excluded and counted; if
    more than `max_excluded_frac` are excluded the pair is flagged
    unreliable. Returns (per_point, mean, n_excluded, reliable).
    """
    vals = []
    excluded = 0
    for i in range(points.n):
        gs = surrogate.input_gradient(points.X[i], points.y[i])
        gt = target.input_gradient(points.X[i], points.y[i])
        ns, nt = np.linalg.norm(gs), np.linalg.norm(gt)
        if ns == 0.0 or nt == 0.0:
            excluded += 1
            continue
        vals.append(float(gs @ gt / (ns * nt)))
    if excluded:
        warnings.warn(f"metric_R: excluded {excluded} zero-gradient points")
    if not vals:
        raise UndefinedStatisticError("all points had zero gradients")
    vals = np.array(vals)
    reliable = excluded <= max_excluded_frac * points.n
    return vals, float(vals.mean()), excluded, reliable


def metric_V(surrogate_spec, training_pool, points, n_resamples=10, seed=0):
    """Variance of the attack loss under resampled surrogate training sets.

    Uses disjoint pool subsets when the pool is large enough for at least
    20 samples per resample, else seeded bootstrap. Returns
    (per_point, mean, mode).
    """
    if n_resamples < 2:
        raise ValueError("need at least 2 resamples")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(training_pool.n)
    subset = training_pool.n // n_resamples
    mode = "disjoint" if subset >= 20 else "bootstrap"
    losses = []
    failures = 0
    for r in range(n_resamples):
        if mode == "disjoint":
            idx = perm[r * subset : (r + 1) * subset]
        else:
            idx = rng.integers(0, training_pool.n, size=training_pool.n)
        try:
            model = fit(surrogate_spec, training_pool.subset(idx))
        except Exception:
            failures += 1
            continue
        losses.append(model.point_losses(points.X, points.y))
    if len(losses) < 2:
        raise UndefinedStatisticError(f"only {len(losses)} resamples trained successfully")
    if failures:
        warnings.warn(f"metric_V: dropped {failures} failed resamples")
    L = np.array(losses)
    per_point = np.mean(L * L, axis=0) - np.mean(L, axis=0) ** 2
    per_point = np.maximum(per_point, 0.0)
    return per_point, float(per_point.mean()), mode


def optimal_perturbation(grad, p, epsilon):
    """Closed-form maximizer of delta' grad over the lp ball of radius eps.

    p=2: scaled gradient; p=inf: eps*sign; p=1: all budget on the single
    maximal-|grad| coordinate (lowest index on ties).
    """
    grad = np.asarray(grad, dtype=float)
    if not np.any(grad):
        return np.zeros_like(grad)
    if p == 2:
        return epsilon * grad / np.linalg.norm(grad)
    if p == np.inf:
        return epsilon * np.sign(grad)
    delta = np.zeros_like(grad)
    j = int(np.argmax(np.abs(grad)))
    delta[j] = epsilon * np.sign(grad[j])
    return delta


def loss_increment(surrogate, target, x, y, p, epsilon):
    """Linearized black-box loss increment and its white-box upper bound.

    delta is the closed-form optimal perturbation against the surrogate;
    returns (delta' grad_target, epsilon * ||grad_target||_q).
    """
    g_hat = surrogate.input_gradient(x, y)
    g = target.input_gradient(x, y)
    upper = epsilon * float(np.linalg.norm(g, ord=DUAL_NORM[p]))
    if not np.any(g_hat):
        return 0.0, upper
    delta = optimal_perturbation(g_hat, p, epsilon)
    return float(delta @ g), upper


def pearson_correlation(xs, ys):
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    xc = xs - xs.mean()
    yc = ys - ys.mean()
    denom = np.linalg.norm(xc) * np.linalg.norm(yc)
    if denom == 0.0:
        raise UndefinedStatisticError("zero-variance input to Pearson correlation")
    return float(xc @ yc / denom)


def kendall_tau(xs, ys):
    """Kendall tau-b (tie-corrected)."""
    tau = _scipy_stats.kendalltau(xs, ys, variant="b").statistic
    if not np.isfinite(tau):
        raise UndefinedStatisticError("undefined Kendall tau")
    return float(tau)


def perturbation_correlation(deltas_blackbox, deltas_whitebox):
    """Pearson and Kendall tau-b over flattened perturbation pairs."""
    bb = np.concatenate([np.ravel(d) for d in deltas_blackbox])
    wb = np.concatenate([np.ravel(d) for d in deltas_whitebox])
    if bb.shape != wb.shape:
        raise ValueError("perturbation lists must match in count and dimension")
    return pearson_correlation(bb, wb), kendall_tau(bb, wb)


def binomial_sign_test(successes, trials):
    """Exact two-sided binomial test at null probability 0.5."""
    if not 0 <= successes <= trials:
        raise ValueError("need 0 <= successes <= trials")
    if trials == 0:
        return 1.0
    probs = np.array([math.comb(trials, k) for k in range(trials + 1)], dtype=float)
    probs /= 2.0**trials
    p_obs = probs[successes]
    return float(min(1.0, probs[probs <= p_obs * (1.0 + 1e-9)].sum()))


def permutation_test_correlation(xs, ys, n_perm, seed=0):
    """Two-sided permutation p-value for |Pearson correlation|."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) != len(ys) or len(xs) < 3:
        raise ValueError("need equal-length sequences of at least 3 values")
    if n_perm < 1:
        raise ValueError("n_perm must be >= 1")
    obs = abs(pearson_correlation(xs, ys))
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(n_perm):
        perm = rng.permutation(ys)
        try:
            r = abs(pearson_correlation(xs, perm))
        except UndefinedStatisticError:
            r = 0.0
        if r >= obs - 1e-12:
            hits += 1
    return (1 + hits) / (n_perm + 1)


@dataclass
class TransferReport:
    surrogates: list
    targets: list
    transfer_matrix: np.ndarray  # surrogate x target mean test errors
    white_box_row: np.ndarray
    clean_row: np.ndarray
    mean_transfer_rate: np.ndarray  # row means over all targets
    mean_transfer_rate_excl_self: np.ndarray
    S_per_target: Optional[dict] = None
    R_matrix: Optional[np.ndarray] = None
    V_per_surrogate: Optional[dict] = None
    pearson_matrix: Optional[np.ndarray] = None
    kendall_matrix: Optional[np.ndarray] = None
    pvalues: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def to_json_dict(self):
        def conv(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, dict):
                return {k: conv(x) for k, x in v.items()}
            if isinstance(v, (np.floating, np.integer)):
                return v.item()
            return v

        return {k: conv(v) for k, v in self.__dict__.items()}


def build_transfer_report(
    surrogates,
    targets,
    cells,
    white_box,
    clean,
    S_per_target=None,
    R_matrix=None,
    V_per_surrogate=None,
    pearson_matrix=None,
    kendall_matrix=None,
    pvalues=None,
    notes=None,
):
    """Assemble the surrogate x target report from per-cell mean errors.

    `cells` maps (surrogate, target) name pairs to errors; `white_box` and
    `clean` map target names to errors. Any missing cell is an error.
    Mean transfer rates are row means over all targets (the self-transfer
    cell included; the excluding variant is exposed alongside).
    """
    matrix = np.empty((len(surrogates), len(targets)))
    for i, s in enumerate(surrogates):
        for j, t in enumerate(targets):
            if (s, t) not in cells:
                raise IncompleteReportError(f"missing transfer cell ({s}, {t})")
            matrix[i, j] = cells[(s, t)]
    try:
        wb = np.array([white_box[t] for t in targets], dtype=float)
        cl = np.array([clean[t] for t in targets], dtype=float)
    except KeyError as exc:
        raise IncompleteReportError(f"missing white-box/clean entry for {exc}") from exc
    mean_rate = matrix.mean(axis=1)
    excl = np.array(
        [
            np.mean([matrix[i, j] for j, t in enumerate(targets) if t != s])
            if any(t != s for t in targets)
            else matrix[i].mean()
            for i, s in enumerate(surrogates)
        ]
    )
    return TransferReport(
        surrogates=list(surrogates),
        targets=list(targets),
        transfer_matrix=matrix,
        white_box_row=wb,
        clean_row=cl,
        mean_transfer_rate=mean_rate,
        mean_transfer_rate_excl_self=excl,
        S_per_target=S_per_target,
        R_matrix=R_matrix,
        V_per_surrogate=V_per_surrogate,
        pearson_matrix=pearson_matrix,
        kendall_matrix=kendall_matrix,
        pvalues=pvalues or {},
        notes=notes or {},
    )
