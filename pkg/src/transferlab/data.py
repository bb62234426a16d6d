"""Datasets: loading, synthesis, splitting, and feature selection.

Labels are stored as signed integers in {-1, +1} so loss formulas can use
the label value directly. Feature matrices are dense float64 arrays; a
`sparse_binary` flag marks datasets whose features only take values {0, 1}.
"""

import csv
import struct
from dataclasses import dataclass, field, replace

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataFormatError(ValueError):
    """Malformed input file (bad magic number, dimension mismatch, ...)."""


class EmptyClassError(ValueError):
    """A requested class has no samples."""


class SplitSizeError(ValueError):
    """Split counts exceed the available number of samples."""


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (n x d) with labels in {-1, +1}."""

    X: np.ndarray
    y: np.ndarray
    feature_bounds: tuple[float, float] = (0.0, 1.0)
    sparse_binary: bool = False

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2 or X.shape[1] < 1:
            raise ValueError("features must be a 2-d matrix with at least one column")
        if y.shape != (X.shape[0],):
            raise ValueError("label vector length must match sample count")
        if not np.all(np.isin(y, (-1, 1))):
            raise ValueError("labels must be -1 or +1")
        lo, hi = self.feature_bounds
        if X.size and (X.min() < lo - 1e-12 or X.max() > hi + 1e-12):
            raise ValueError("feature values outside declared bounds")
        if self.sparse_binary and not np.all(np.isin(X, (0.0, 1.0))):
            raise ValueError("sparse-binary dataset contains non-binary values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        X.setflags(write=False)
        y.setflags(write=False)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def subset(self, idx):
        return replace(self, X=np.array(self.X[idx]), y=np.array(self.y[idx]))


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint split sizes for target/surrogate training, validation, test."""

    target_train_n: int
    surrogate_train_n: int
    validation_n: int
    test_n: int
    surrogate_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if min(self.target_train_n, self.surrogate_train_n, self.validation_n, self.test_n) < 0:
            raise ValueError("split counts must be non-negative")
        if not 0.0 < self.surrogate_fraction <= 1.0:
            raise ValueError("surrogate_fraction must be in (0, 1]")


def _read_idx(path, expected_magic):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise DataFormatError(f"{path}: truncated IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise DataFormatError(f"{path}: bad IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f"{path}: truncated IDX dimensions")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    body = np.frombuffer(raw, dtype=np.uint8, offset=header)
    if body.size != count:
        raise DataFormatError(f"{path}: payload size {body.size} != {count}")
    return body.reshape(dims)


def load_idx(images_path, labels_path, positive_class, negative_class):
    """Load an IDX image/label pair, keeping two classes mapped to +/-1.

    Pixels are divided by 255 into [0, 1]. Only unsigned-byte IDX payloads
    are supported.
    """
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError("image/label sample counts differ")
    mask_pos = labels == positive_class
    mask_neg = labels == negative_class
    if not mask_pos.any():
        raise EmptyClassError(f"no samples of class {positive_class}")
    if not mask_neg.any():
        raise EmptyClassError(f"no samples of class {negative_class}")
    keep = mask_pos | mask_neg
    X = images[keep].reshape(keep.sum(), -1).astype(np.float64) / 255.0
    y = np.where(mask_pos[keep], 1, -1)
    return Dataset(X=X, y=y)


def load_sparse(path, n_features=None):
    """Load `label idx:val` lines with 1-based ascending indices, vals in {0,1}."""
    rows = []
    labels = []
    max_idx = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            try:
                label = int(parts[0])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: bad label {parts[0]!r}") from exc
            if label not in (-1, 1):
                raise DataFormatError(f"{path}:{lineno}: label must be +1/-1")
            entries = []
            prev = 0
            for tok in parts[1:]:
                try:
                    idx_s, val_s = tok.split(":")
                    idx, val = int(idx_s), float(val_s)
                except ValueError as exc:
                    raise DataFormatError(f"{path}:{lineno}: bad entry {tok!r}") from exc
                if val not in (0.0, 1.0):
                    raise DataFormatError(f"{path}:{lineno}: non-binary value {val}")
                if idx <= prev:
                    raise DataFormatError(f"{path}:{lineno}: indices must ascend")
                prev = idx
                entries.append((idx, val))
            labels.append(label)
            rows.append(entries)
            if entries:
                max_idx = max(max_idx, entries[-1][0])
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    d = n_features if n_features is not None else max_idx
    d = max(d, 1)
    X = np.zeros((len(rows), d))
    for i, entries in enumerate(rows):
        for idx, val in entries:
            X[i, idx - 1] = val
    return Dataset(X=X, y=np.array(labels), sparse_binary=True)


def save_sparse(dataset, path):
    """Write a sparse-binary dataset in the `label idx:val` text format."""
    with open(path, "w") as fh:
        for i in range(dataset.n):
            cols = np.nonzero(dataset.X[i])[0]
            entries = " ".join(f"{c + 1}:{int(dataset.X[i, c])}" for c in cols)
            sign = "+1" if dataset.y[i] > 0 else "-1"
            fh.write(f"{sign} {entries}".rstrip() + "\n")


def load_csv(path):
    """Load a CSV with header row `y,f1,...,fd`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "y":
            raise DataFormatError(f"{path}: expected header starting with 'y'")
        rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    arr = np.array(rows)
    X = arr[:, 1:]
    return Dataset(
        X=X,
        y=arr[:, 0].astype(np.int64),
        feature_bounds=(min(0.0, X.min()), max(1.0, X.max())),
    )


def save_csv(dataset, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y"] + [f"f{i + 1}" for i in range(dataset.d)])
        for i in range(dataset.n):
            writer.writerow([int(dataset.y[i])] + [repr(float(v)) for v in dataset.X[i]])


def synthetic_gaussians(n, d, separation, sparse_binary=False, seed=0, scale=1.0):
    """Two spherical Gaussian classes centered at +/-(separation/2) e1.

    Values are clipped to [0, 1]; centers sit at 0.5 +/- separation/2 along
    the first axis so moderate separations stay inside the box. With
    `sparse_binary`, features are thresholded at 0.5 into {0, 1}.
    """
    if n % 2 != 0:
        raise ValueError("n must be even")
    if d < 1 or separation < 0:
        raise ValueError("need d >= 1 and separation >= 0")
    rng = np.random.default_rng(seed)
    half = n // 2
    sigma = 0.1 * scale
    X = rng.normal(0.0, sigma, size=(n, d))
    X[:, 0] += 0.5
    X[:half, 0] += separation / 2.0 * sigma
    X[half:, 0] -= separation / 2.0 * sigma
    X[:, 1:] += 0.5
    y = np.concatenate([np.ones(half, dtype=np.int64), -np.ones(half, dtype=np.int64)])
    perm = rng.permutation(n)
    X, y = X[perm], y[perm]
    np.clip(X, 0.0, 1.0, out=X)
    if sparse_binary:
        X = (X > 0.5).astype(np.float64)
    return Dataset(X=X, y=y, sparse_binary=sparse_binary)


def noisy_subspace_gaussians(
    n, d=60, n_informative=16, shift=0.25, sigma=0.12, label_noise=0.08, seed=0
):
    """Two Gaussian classes separated along an informative subspace.

    Class centers sit at 0.5 +/- `shift` on the first `n_informative`
    coordinates and at 0.5 elsewhere; a `label_noise` fraction of labels is
    flipped so flexible models can genuinely overfit. Values are clipped to
    [0, 1]. Serves as an image-like binary task when no real image data is
    available: moderate dimension, overlapping classes, box-bounded features.
    """
    if n % 2 != 0:
        raise ValueError("n must be even")
    if not 1 <= n_informative <= d:
        raise ValueError("need 1 <= n_informative <= d")
    if not 0.0 <= label_noise < 0.5:
        raise ValueError("label_noise must be in [0, 0.5)")
    rng = np.random.default_rng(seed)
    half = n // 2
    X = rng.normal(0.5, sigma, size=(n, d))
    X[:half, :n_informative] += shift
    X[half:, :n_informative] -= shift
    y = np.concatenate([np.ones(half, dtype=np.int64), -np.ones(half, dtype=np.int64)])
    flip = rng.random(n) < label_noise
    y[flip] = -y[flip]
    perm = rng.permutation(n)
    X, y = X[perm], y[perm]
    np.clip(X, 0.0, 1.0, out=X)
    return Dataset(X=X, y=y)


def split(dataset, spec):
    """Split into (target_train, surrogate_train, validation, test).

    All parts are pairwise disjoint; shuffling is driven solely by the
    spec seed. `surrogate_fraction` subsamples the surrogate pool.
    """
    total = spec.target_train_n + spec.surrogate_train_n + spec.validation_n + spec.test_n
    if total > dataset.n:
        raise SplitSizeError(f"split needs {total} samples, dataset has {dataset.n}")
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(dataset.n)
    bounds = np.cumsum(
        [spec.target_train_n, spec.surrogate_train_n, spec.validation_n, spec.test_n]
    )
    tgt = perm[: bounds[0]]
    sur_pool = perm[bounds[0] : bounds[1]]
    val = perm[bounds[1] : bounds[2]]
    tst = perm[bounds[2] : bounds[3]]
    n_sur = max(1, int(round(spec.surrogate_fraction * len(sur_pool)))) if len(sur_pool) else 0
    sur = sur_pool[:n_sur]
    return (
        dataset.subset(tgt),
        dataset.subset(sur),
        dataset.subset(val),
        dataset.subset(tst),
    )


def select_top_k(dataset, k):
    """Keep the k features with largest |P(x=1|+1) - P(x=1|-1)|.

    Ties break toward the lower feature index. Only meaningful for
    sparse-binary data. Returns (reduced dataset, selected column indices).
    """
    if not dataset.sparse_binary:
        raise ValueError("feature selection applies to sparse-binary datasets")
    pos = dataset.X[dataset.y == 1]
    neg = dataset.X[dataset.y == -1]
    gain = np.abs(pos.mean(axis=0) - neg.mean(axis=0))
    # stable sort on -gain keeps lower indices first among ties
    order = np.argsort(-gain, kind="stable")[:k]
    cols = np.sort(order)
    reduced = replace(dataset, X=np.array(dataset.X[:, cols]), y=np.array(dataset.y))
    return reduced, cols
