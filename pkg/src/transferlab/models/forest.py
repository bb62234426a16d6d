"""Random forest of CART trees (gini split, bootstrap, feature subsampling).

Split thresholds are values occurring in the training data: the test is
`x[feature] <= threshold` with the threshold equal to an observed value.
Forests are evaluation-only targets; they expose no input gradients.
"""

import numpy as np

from .base import Model


def _gini(n_pos, n_neg):
    n = n_pos + n_neg
    if n == 0:
        return 0.0
    p = n_pos / n
    return 2.0 * p * (1.0 - p)


def _best_split(X, y, feat_idx):
    """Best (feature, threshold, gain) over candidate features, or None."""
    n = len(y)
    pos_total = int(np.sum(y > 0))
    parent = _gini(pos_total, n - pos_total)
    best = None
    best_gain = 1e-12
    for f in feat_idx:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = y[order]
        pos_prefix = np.cumsum(ys > 0)
        # candidate cut after position i: threshold xs[i], valid if xs[i] < xs[i+1]
        for i in range(n - 1):
            if xs[i] == xs[i + 1]:
                continue
            left_n = i + 1
            left_pos = int(pos_prefix[i])
            right_n = n - left_n
            right_pos = pos_total - left_pos
            score = (
                left_n / n * _gini(left_pos, left_n - left_pos)
                + right_n / n * _gini(right_pos, right_n - right_pos)
            )
            gain = parent - score
            if gain > best_gain:
                best_gain = gain
                best = (int(f), float(xs[i]), gain)
    return best


def _leaf(y):
    s = int(np.sum(y))
    return {"leaf": 1 if s >= 0 else -1}


def _build_tree(X, y, depth, max_depth, n_sub, rng):
    if len(np.unique(y)) == 1 or (max_depth is not None and depth >= max_depth) or len(y) < 2:
        return _leaf(y)
    feat_idx = np.sort(rng.choice(X.shape[1], size=n_sub, replace=False))
    found = _best_split(X, y, feat_idx)
    if found is None and n_sub < X.shape[1]:
        found = _best_split(X, y, np.arange(X.shape[1]))
    if found is None:
        return _leaf(y)
    f, thr, _ = found
    mask = X[:, f] <= thr
    return {
        "feature": f,
        "threshold": thr,
        "left": _build_tree(X[mask], y[mask], depth + 1, max_depth, n_sub, rng),
        "right": _build_tree(X[~mask], y[~mask], depth + 1, max_depth, n_sub, rng),
    }


def _tree_predict(node, x):
    while "leaf" not in node:
        node = node["left"] if x[node["feature"]] <= node["threshold"] else node["right"]
    return node["leaf"]


class ForestModel(Model):
    differentiable = False

    def __init__(self, spec, trees, n_features, objective_value=0.0):
        super().__init__(spec, objective_value)
        self.trees = trees
        self.n_features = n_features

    def decision_function(self, X):
        X = np.asarray(X, dtype=float)
        votes = np.zeros(len(X))
        for tree in self.trees:
            votes += np.array([_tree_predict(tree, x) for x in X], dtype=float)
        return votes / len(self.trees)

    def native_losses(self, X, y):
        # 0/1 loss: forests have no differentiable surrogate loss
        return (self.predict(X) != np.asarray(y)).astype(float)

    def params_dict(self):
        return {"trees": self.trees, "n_features": self.n_features}


def fit_forest(spec, train):
    rng = np.random.default_rng(spec.train_seed)
    n, d = train.X.shape
    n_sub = max(1, int(np.sqrt(d)))
    trees = []
    for _ in range(spec.n_trees):
        boot = rng.integers(0, n, size=n)
        trees.append(
            _build_tree(train.X[boot], train.y[boot], 0, spec.max_depth, n_sub, rng)
        )
    return ForestModel(spec, trees, d)
