"""Test-time evasion attacks: projections, bisection line search, and the
projected gradient-ascent loop with maximum-confidence semantics."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

FEASIBILITY_TOL = 1e-9
ALTERNATE_MAX_ROUNDS = 1000


class InfeasibleError(ValueError):
    """The feasible set is empty (box excludes the anchor point)."""


@dataclass(frozen=True)
class PerturbationConstraint:
    """lp ball of radius epsilon around the attacked point, plus a box."""

    p: float  # 1, 2 or np.inf
    epsilon: float
    x_lb: np.ndarray
    x_ub: np.ndarray
    injection_only: bool = False

    def __post_init__(self):
        if self.p not in (1, 2, np.inf):
            raise ValueError("p must be 1, 2 or inf")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        lb = np.asarray(self.x_lb, dtype=float)
        ub = np.asarray(self.x_ub, dtype=float)
        if np.any(lb > ub):
            raise ValueError("x_lb must be elementwise <= x_ub")
        object.__setattr__(self, "x_lb", lb)
        object.__setattr__(self, "x_ub", ub)

    def bounds_for(self, x):
        """Effective box for a given anchor; injection-only pins the lower bound."""
        lb = np.maximum(self.x_lb, x) if self.injection_only else self.x_lb
        return lb, self.x_ub


@dataclass(frozen=True)
class AttackConfig:
    max_iters: int = 1000
    line_search_max: int = 20
    convergence_t: float = 1e-6
    double_init: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1 or self.line_search_max < 1 or self.convergence_t <= 0:
            raise ValueError("invalid attack configuration")


@dataclass
class AttackResult:
    x_star: np.ndarray
    delta: np.ndarray
    objective_trace: list
    iterations: int
    converged: bool
    used_double_init: bool = False
    double_init_fallback: bool = False


def project_l1_ball(v, radius):
    """Euclidean projection of v onto the l1 ball via sorted thresholding."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    a = np.abs(v)
    if a.sum() <= radius:
        return v.copy()
    if radius == 0:
        return np.zeros_like(v)
    u = np.sort(a)[::-1]
    cumsum = np.cumsum(u)
    idx = np.nonzero(u * np.arange(1, len(u) + 1) > (cumsum - radius))[0]
    rho = idx[-1] if len(idx) else 0  # radius below float resolution
    theta = (cumsum[rho] - radius) / (rho + 1.0)
    return np.sign(v) * np.maximum(a - theta, 0.0)


def _norm(v, p):
    if p == np.inf:
        return float(np.max(np.abs(v))) if len(v) else 0.0
    return float(np.linalg.norm(v, ord=p))


def _ball_project(v, x, p, epsilon):
    """Euclidean projection of v onto the lp ball of radius epsilon at x."""
    delta = v - x
    if _norm(delta, p) <= epsilon:
        return v.copy()
    if p == 2:
        return x + delta * (epsilon / _norm(delta, 2))
    return x + project_l1_ball(delta, epsilon)


def project(x_prime, x, c):
    """Euclidean projection onto the lp ball around x intersected with the box.

    p=inf separates per coordinate, so a double clip is exact. p in {1, 2}
    runs Dykstra's alternating scheme between the ball and the box, which
    converges to the true projection onto the intersection (both sets are
    convex); capped at 1000 rounds, constraints hold to 1e-9.
    """
    x = np.asarray(x, dtype=float)
    lb, ub = c.bounds_for(x)
    if np.any(lb > ub + FEASIBILITY_TOL) or np.any(x < lb - FEASIBILITY_TOL) or np.any(
        x > ub + FEASIBILITY_TOL
    ):
        raise InfeasibleError("box constraint excludes the anchor point")
    z = np.asarray(x_prime, dtype=float)
    if c.p == np.inf:
        z = np.clip(z, lb, ub)
        return np.clip(z, x - c.epsilon, x + c.epsilon)
    p_corr = np.zeros_like(z)
    q_corr = np.zeros_like(z)
    for _ in range(ALTERNATE_MAX_ROUNDS):
        w = z + p_corr
        yk = _ball_project(w, x, c.p, c.epsilon)
        p_new = w - yk
        w = yk + q_corr
        z_new = np.clip(w, lb, ub)
        q_new = w - z_new
        # the iterate can stall while the corrections still evolve, so
        # convergence must look at all three
        moved = max(
            float(np.max(np.abs(z_new - z))),
            float(np.max(np.abs(p_new - p_corr))),
            float(np.max(np.abs(q_new - q_corr))),
        )
        z, p_corr, q_corr = z_new, p_new, q_new
        if moved <= FEASIBILITY_TOL and _norm(z - x, c.p) <= c.epsilon + FEASIBILITY_TOL:
            break
    # plain alternation mop-up guarantees feasibility if Dykstra hit the cap
    for _ in range(ALTERNATE_MAX_ROUNDS):
        if _norm(z - x, c.p) <= c.epsilon + FEASIBILITY_TOL:
            break
        z = np.clip(_ball_project(z, x, c.p, c.epsilon), lb, ub)
    return z


def is_feasible(x_star, x, c, tol=FEASIBILITY_TOL):
    lb, ub = c.bounds_for(x)
    return (
        _norm(x_star - x, c.p) <= c.epsilon + tol
        and np.all(x_star >= lb - tol)
        and np.all(x_star <= ub + tol)
    )


def bisect_line_search(objective, x_from, direction, project_fn, max_evals, eta_max):
    """Derivative-free bisection search for max_eta objective(P(x + eta*dir)).

    Starts from the endpoints and midpoint, then repeatedly bisects the
    intervals adjacent to the best step found. Falls back to eta=0, which
    guarantees the returned objective never decreases.
    """
    f0 = objective(x_from)
    if eta_max <= 0 or max_evals < 1 or not np.any(direction):
        return 0.0, x_from, f0
    cache = {0.0: (f0, x_from)}

    def eval_eta(eta):
        if eta not in cache:
            z = project_fn(x_from + eta * direction)
            cache[eta] = (objective(z), z)
        return cache[eta][0]

    etas = [0.0, eta_max / 2.0, eta_max]
    evals = 2
    for eta in etas[1:]:
        eval_eta(eta)
    while evals < max_evals:
        best = max(etas, key=lambda e: (cache[e][0], -e))
        i = etas.index(best)
        new = []
        if i > 0:
            new.append((etas[i - 1] + best) / 2.0)
        if i < len(etas) - 1:
            new.append((best + etas[i + 1]) / 2.0)
        if not new:
            break
        for eta in new:
            if evals >= max_evals:
                break
            eval_eta(eta)
            evals += 1
        etas = sorted(set(etas) | set(cache))
    best = max(cache, key=lambda e: (cache[e][0], -e))
    if cache[best][0] <= f0:
        return 0.0, x_from, f0
    return best, cache[best][1], cache[best][0]


def _step_cap(direction, p, epsilon):
    """Largest useful line-search step for a direction under the lp ball.

    Chosen so the projected step can reach the ball's extreme point in the
    given direction: for p=2 the diameter suffices, for p=inf the smallest
    nonzero coordinate must saturate, for p=1 all mass must concentrate on
    the top coordinate (gap between the two largest magnitudes). Capped at
    1e6x the diameter step so nonlinear searches keep usable resolution.
    """
    a = np.abs(direction)
    dnorm = _norm(direction, p)
    base = 2.0 * epsilon / dnorm
    if p == 2:
        return base
    if p == np.inf:
        scale = float(np.min(a[a > 0]))
    else:
        top = np.sort(a)[::-1]
        gap = float(top[0] - top[1]) if len(top) > 1 else float(top[0])
        scale = gap if gap > 0 else float(top[0])
    return min(2.0 * epsilon / scale, 1e6 * base)


def line_search(model, x, y, direction, c, max_evals, anchor=None):
    """One evasion line-search step; projection is centered on `anchor`
    (the original attacked point), defaulting to x."""
    anchor = x if anchor is None else anchor
    dnorm = _norm(direction, c.p)
    if dnorm == 0.0:
        return 0.0, np.array(x, dtype=float)
    eta_max = _step_cap(direction, c.p, c.epsilon)
    eta, x_next, _ = bisect_line_search(
        lambda z: model.point_loss(z, y),
        np.asarray(x, dtype=float),
        direction,
        lambda z: project(z, anchor, c),
        max_evals,
        eta_max,
    )
    return eta, x_next


def run_evasion(model, x, y, c, cfg, x_init=None):
    """Projected gradient ascent on the attack loss -y*f (Algorithm-style
    loop with bisection line search and maximum-confidence semantics)."""
    x = np.asarray(x, dtype=float)
    x_cur = project(np.array(x) if x_init is None else np.asarray(x_init, dtype=float), x, c)
    trace = [model.point_loss(x_cur, y)]
    converged = False
    iters = 0
    for iters in range(1, cfg.max_iters + 1):
        grad = model.input_gradient(x_cur, y)
        dnorm = _norm(grad, c.p)
        if dnorm == 0.0 or c.epsilon == 0.0:
            converged = True
            break
        eta_max = _step_cap(grad, c.p, c.epsilon)
        _, x_next, f_next = bisect_line_search(
            lambda z: model.point_loss(z, y),
            x_cur,
            grad,
            lambda z: project(z, x, c),
            cfg.line_search_max,
            eta_max,
        )
        gain = abs(f_next - trace[-1])
        x_cur = x_next
        trace.append(f_next)
        if gain <= cfg.convergence_t:
            converged = True
            break
    return AttackResult(
        x_star=x_cur,
        delta=x_cur - x,
        objective_trace=trace,
        iterations=iters,
        converged=converged,
    )


NONLINEAR_FAMILIES = ("rbf_svm", "feedforward_nn")


def run_evasion_double_init(model, x, y, c, cfg, opposite_class_pool=None):
    """Evasion with a second start projected from an opposite-class point.

    Only nonlinear families use the second start; the better of the two
    runs is kept. An empty pool falls back to the single start.
    """
    result = run_evasion(model, x, y, c, cfg)
    if model.spec.family not in NONLINEAR_FAMILIES or not cfg.double_init:
        return result
    pool_idx = None
    if opposite_class_pool is not None:
        pool_idx = np.nonzero(opposite_class_pool.y == -y)[0]
    if pool_idx is None or len(pool_idx) == 0:
        result.double_init_fallback = True
        return result
    rng = np.random.default_rng(cfg.seed)
    x_r = opposite_class_pool.X[rng.choice(pool_idx)]
    alt = run_evasion(model, x, y, c, cfg, x_init=x_r)
    best = alt if alt.objective_trace[-1] > result.objective_trace[-1] else result
    best.used_double_init = True
    return best


def evaluate_evasion(target, attacks, labels):
    """Fraction of attack points misclassified by the target."""
    X = np.array([a.x_star for a in attacks])
    y = np.asarray(labels)
    return float(np.mean(target.predict(X) != y))


def threshold_at_fpr(legitimate_scores, max_fpr):
    """Smallest decision threshold whose false-positive rate stays <= max_fpr.

    Positives are scores >= threshold. The returned threshold attains the
    maximal feasible FPR (exhaustive sweep over candidate cut points).
    """
    scores = np.sort(np.asarray(legitimate_scores, dtype=float))[::-1]
    n = len(scores)
    candidates = [np.inf] + [np.nextafter(s, np.inf) for s in scores] + [scores[-1]]
    best_thr = np.inf
    best_fpr = -1.0
    for thr in candidates:
        fpr = float(np.mean(scores >= thr))
        if fpr <= max_fpr and fpr > best_fpr:
            best_fpr = fpr
            best_thr = float(thr)
    return best_thr, best_fpr


def evasion_rate_at_fpr(target, attacks, legitimate, max_fpr=0.005):
    """Fraction of (positive-class) attack points scored below the threshold
    that keeps the false-alarm rate on legitimate data within max_fpr."""
    thr, _ = threshold_at_fpr(target.decision_function(legitimate.X), max_fpr)
    X = np.array([a.x_star for a in attacks])
    return float(np.mean(target.decision_function(X) < thr))


def binarize_injection(x, x_star, epsilon):
    """Round a relaxed sparse-binary attack: set the top-k fractional
    injected features to 1, k = floor of the injected l1 mass. Ties break
    toward the lower feature index."""
    x = np.asarray(x, dtype=float)
    frac = np.clip(x_star - x, 0.0, None)
    k = int(np.floor(frac.sum() + FEASIBILITY_TOL))
    out = np.array(x)
    if k <= 0:
        return out
    order = np.argsort(-frac, kind="stable")[:k]
    order = order[frac[order] > 0]
    out[order] = 1.0
    return out
