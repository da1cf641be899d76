"""Datasets: the simulated G-mean task, CSV loading, group noise and splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .numerics import RandomStream


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    groups: Optional[np.ndarray] = None
    binary_mask: Optional[np.ndarray] = None
    feature_names: tuple = field(default=(), compare=False)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.features, dtype=float))
        y = np.asarray(self.labels).reshape(-1).astype(int)
        n = y.shape[0]
        if n < 1:
            raise ValueError("empty dataset")
        if X.shape[0] != n:
            raise ValueError(f"{X.shape[0]} feature rows but {n} labels")
        if not np.all((y == 1) | (y == -1)):
            raise ValueError("labels must be -1 or +1")
        g = None
        if self.groups is not None:
            g = np.asarray(self.groups).reshape(-1).astype(int)
            if g.shape[0] != n:
                raise ValueError("group vector length must equal the number of examples")
            if not np.all((g == 0) | (g == 1)):
                raise ValueError("group ids must be 0 or 1")
        mask = np.zeros(X.shape[1], dtype=bool) if self.binary_mask is None else np.asarray(self.binary_mask, dtype=bool)
        if mask.shape[0] != X.shape[1]:
            raise ValueError("binary mask length must equal the number of features")
        if mask.any() and not np.all(np.isin(X[:, mask], (0.0, 1.0))):
            raise ValueError("columns flagged binary must contain only 0/1")
        for a in (X, y, mask) + ((g,) if g is not None else ()):
            a.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "groups", g)
        object.__setattr__(self, "binary_mask", mask)

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(
            self,
            features=self.features[idx],
            labels=self.labels[idx],
            groups=None if self.groups is None else self.groups[idx],
        )


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 4 / 9
    val_frac: float = 2 / 9
    test_frac: float = 1 / 3
    seed: int = 0

    def __post_init__(self):
        fr = (self.train_frac, self.val_frac, self.test_frac)
        if not all(0.0 < f < 1.0 for f in fr):
            raise ValueError(f"split fractions must lie in (0, 1): {fr}")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fr)}")


def generate_simulated(n: int = 5000, positive_frac: float = 0.10, seed: int = 0) -> Dataset:
    """Two-dimensional imbalanced task.

    Positives come from N([0, 0], 0.2 I); negatives from an equal mixture of
    N([-1, -1], 0.1 I) and N([1, 1], 0.1 I). The positive count is exactly
    ``round(positive_frac * n)``.
    """
    if n < 10:
        raise ValueError("n must be at least 10")
    if not 0.0 < positive_frac < 1.0:
        raise ValueError(f"positive_frac must lie in (0, 1), got {positive_frac}")
    rng = RandomStream(seed).generator()
    n_pos = int(round(positive_frac * n))
    n_neg = n - n_pos
    pos = rng.normal(0.0, math.sqrt(0.2), size=(n_pos, 2))
    centers = np.where(rng.random(n_neg) < 0.5, -1.0, 1.0)[:, None] * np.ones((1, 2))
    neg = centers + rng.normal(0.0, math.sqrt(0.1), size=(n_neg, 2))
    X = np.vstack([pos, neg])
    y = np.concatenate([np.ones(n_pos, dtype=int), -np.ones(n_neg, dtype=int)])
    perm = rng.permutation(n)
    return Dataset(X[perm], y[perm], feature_names=("x1", "x2"))


def _parse_label(raw: str, lineno: int) -> int:
    try:
        v = float(raw)
    except ValueError:
        raise ValueError(f"line {lineno}: cannot parse label {raw!r}") from None
    if v == 1:
        return 1
    if v in (0, -1):
        return -1
    raise ValueError(f"line {lineno}: label {raw!r} is not one of -1/0/1")


def load_csv(
    path,
    label_column: str,
    group_column: Optional[str] = None,
    binary_columns: Sequence[str] = (),
    group_map: Optional[dict] = None,
    exclude_columns: Sequence[str] = (),
) -> Dataset:
    """Read a comma-separated file with a header row.

    Labels may be encoded as {-1, 1} or {0, 1}. Group values are mapped
    through ``group_map`` when given, otherwise parsed as 0/1 integers.
    Every other column (minus ``exclude_columns``) becomes a real feature.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty dataset (no header)") from None
        for col in [label_column, group_column, *binary_columns, *exclude_columns]:
            if col is not None and col not in header:
                raise ValueError(f"{path}: missing column {col!r}")
        skip = {label_column, group_column, *exclude_columns}
        feat_cols = [h for h in header if h not in skip]
        feat_idx = [header.index(h) for h in feat_cols]
        li = header.index(label_column)
        gi = header.index(group_column) if group_column is not None else None

        X, y, g = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}: line {lineno}: expected {len(header)} cells, got {len(row)}")
            y.append(_parse_label(row[li].strip(), lineno))
            try:
                X.append([float(row[i]) for i in feat_idx])
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
            if gi is not None:
                raw = row[gi].strip()
                if group_map is not None:
                    if raw not in group_map:
                        raise ValueError(f"{path}: line {lineno}: unmapped group value {raw!r}")
                    g.append(int(group_map[raw]))
                else:
                    try:
                        g.append(int(float(raw)))
                    except ValueError:
                        raise ValueError(f"{path}: line {lineno}: cannot parse group {raw!r}") from None
    if not y:
        raise ValueError(f"{path}: empty dataset")
    mask = np.array([h in set(binary_columns) for h in feat_cols], dtype=bool)
    return Dataset(
        np.array(X, dtype=float).reshape(len(y), len(feat_cols)),
        np.array(y),
        np.array(g) if gi is not None else None,
        mask,
        feature_names=tuple(feat_cols),
    )


def save_csv(ds: Dataset, path, label_column: str = "label", group_column: str = "group") -> None:
    names = list(ds.feature_names) or [f"x{j + 1}" for j in range(ds.d)]
    header = names + [label_column] + ([group_column] if ds.groups is not None else [])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(ds.n):
            row = [f"{v:.17g}" for v in ds.features[i]] + [str(ds.labels[i])]
            if ds.groups is not None:
                row.append(str(ds.groups[i]))
            w.writerow(row)


def inject_group_noise(
    ds: Dataset,
    target_group: int = 0,
    fraction: float = 0.0,
    flip_prob: float = 0.9,
    seed: int = 0,
) -> Dataset:
    """Corrupt a random ``fraction`` of one group's rows.

    Real columns get additive N(0, s_j^2) noise where s_j is the column's
    standard deviation over the whole input; binary columns are flipped
    independently with probability ``flip_prob``.
    """
    if ds.groups is None:
        raise ValueError("inject_group_noise needs a dataset with groups")
    if not (0.0 <= fraction <= 1.0 and 0.0 <= flip_prob <= 1.0):
        raise ValueError("fraction and flip_prob must lie in [0, 1]")
    members = np.flatnonzero(ds.groups == target_group)
    k = int(math.floor(fraction * members.size))
    if k == 0:
        return ds
    rng = RandomStream(seed).generator()
    rows = np.sort(rng.choice(members, size=k, replace=False))
    X = ds.features.copy()
    real = ~ds.binary_mask
    std = ds.features.std(axis=0)
    noise = rng.standard_normal((k, ds.d)) * std
    X[np.ix_(rows, np.flatnonzero(real))] += noise[:, real]
    flips = rng.random((k, ds.d)) < flip_prob
    bin_cols = np.flatnonzero(ds.binary_mask)
    block = X[np.ix_(rows, bin_cols)]
    X[np.ix_(rows, bin_cols)] = np.where(flips[:, ds.binary_mask], 1.0 - block, block)
    return replace(ds, features=X)


def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    n = ds.n
    if n < 3:
        raise ValueError("need at least 3 examples to split")
    n_tr = int(math.floor(spec.train_frac * n + 1e-9))
    n_va = int(math.floor(spec.val_frac * n + 1e-9))
    n_te = n - n_tr - n_va
    if min(n_tr, n_va, n_te) < 1:
        raise ValueError(f"split of n={n} leaves an empty part: {(n_tr, n_va, n_te)}")
    perm = RandomStream(spec.seed, 7).generator().permutation(n)
    return (
        ds.subset(perm[:n_tr]),
        ds.subset(perm[n_tr:n_tr + n_va]),
        ds.subset(perm[n_tr + n_va:]),
    )


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Index sets used by :func:`split` for an ``n``-example dataset."""
    probe = Dataset(np.zeros((n, 1)), np.ones(n, dtype=int))
    parts = split(replace(probe, features=np.arange(n, dtype=float)[:, None]), spec)
    return tuple(p.features[:, 0].astype(int) for p in parts)
