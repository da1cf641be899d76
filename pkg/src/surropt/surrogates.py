"""Convex surrogate losses and the profile map ``theta -> (l_1, ..., l_K)``.

Every surrogate is an average of a pointwise loss of the margin ``y * s``
over a fixed example subset (positives, negatives, one group's positives,
...). Evaluation is batched: a stack of score vectors with shape ``(m, n)``
yields ``m`` surrogate values.
"""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data import Dataset
from .model import ModelParams, augment, score

KINDS = ("hinge", "logistic", "sigmoid", "precision_at_recall")
_SUBSET_RE = re.compile(r"^(all|positives|negatives|group([01])_(positives|negatives))$")


@dataclass(frozen=True)
class SurrogateSpec:
    kind: str
    subset: str = "all"
    tau: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown surrogate kind {self.kind!r}; expected one of {KINDS}")
        if not _SUBSET_RE.match(self.subset):
            raise ValueError(f"unknown subset {self.subset!r}")
        if self.kind == "precision_at_recall":
            if self.tau is None or not 0.0 < self.tau < 1.0:
                raise ValueError("precision_at_recall needs tau in (0, 1)")
        elif self.tau is not None:
            raise ValueError(f"tau is only valid for precision_at_recall, not {self.kind}")

    @classmethod
    def parse(cls, text: str) -> "SurrogateSpec":
        """Parse ``kind:subset[:tau]``, e.g. ``hinge:positives``."""
        parts = [p.strip() for p in text.strip().split(":")]
        if len(parts) not in (2, 3):
            raise ValueError(f"surrogate spec {text!r} is not of the form kind:subset[:tau]")
        tau = float(parts[2]) if len(parts) == 3 else None
        return cls(parts[0], parts[1], tau)

    def __str__(self) -> str:
        return f"{self.kind}:{self.subset}" + (f":{self.tau:g}" if self.tau is not None else "")

    @property
    def group(self) -> Optional[int]:
        m = _SUBSET_RE.match(self.subset)
        return int(m.group(2)) if m.group(2) is not None else None

    @property
    def label_side(self) -> Optional[int]:
        """+1 / -1 if the subset is restricted to one class, else None."""
        side = self.subset.rsplit("_", 1)[-1]
        return {"positives": 1, "negatives": -1}.get(side)

    @property
    def convex(self) -> bool:
        return self.kind in ("hinge", "logistic")


def parse_specs(items: Sequence) -> list[SurrogateSpec]:
    specs = [s if isinstance(s, SurrogateSpec) else SurrogateSpec.parse(s) for s in items]
    if not specs:
        raise ValueError("need at least one surrogate")
    if any(s.kind == "sigmoid" for s in specs):
        warnings.warn("sigmoid surrogates are non-convex; the projection step is no longer a convex problem",
                      stacklevel=2)
    return specs


def subset_mask(spec: SurrogateSpec, ds: Dataset) -> np.ndarray:
    mask = np.ones(ds.n, dtype=bool)
    if spec.label_side is not None:
        mask &= ds.labels == spec.label_side
    if spec.group is not None:
        if ds.groups is None:
            raise ValueError(f"surrogate {spec} needs group ids but the dataset has none")
        mask &= ds.groups == spec.group
    if not mask.any():
        raise ValueError(f"surrogate {spec}: subset {spec.subset!r} is empty on this dataset")
    if spec.kind == "precision_at_recall":
        y = ds.labels[mask]
        if not ((y == 1).any() and (y == -1).any()):
            raise ValueError(f"surrogate {spec}: subset {spec.subset!r} needs both classes")
    return mask


def subsets_overlap(a: SurrogateSpec, b: SurrogateSpec) -> bool:
    """Whether two subsets can share an example, decided from their names alone."""
    if a.label_side is not None and b.label_side is not None and a.label_side != b.label_side:
        return False
    if a.group is not None and b.group is not None and a.group != b.group:
        return False
    return True


def check_disjoint(specs: Sequence[SurrogateSpec]) -> None:
    for i, a in enumerate(specs):
        for b in specs[i + 1:]:
            if subsets_overlap(a, b):
                raise ValueError(f"surrogates {a} and {b} act on overlapping example subsets")


def _pointwise(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "hinge":
        return np.maximum(0.0, 1.0 - z)
    if kind == "logistic":
        return np.logaddexp(0.0, -z)
    if kind == "sigmoid":
        return 0.5 * (1.0 - np.tanh(0.5 * z))
    raise ValueError(kind)


def _pointwise_deriv(kind: str, z: np.ndarray) -> np.ndarray:
    """d loss / d margin; the hinge kink gets subgradient 0."""
    if kind == "hinge":
        return np.where(z < 1.0, -1.0, 0.0)
    if kind == "logistic":
        return -0.5 * (1.0 - np.tanh(0.5 * z))
    if kind == "sigmoid":
        p = 0.5 * (1.0 - np.tanh(0.5 * z))
        return -p * (1.0 - p)
    raise ValueError(kind)


def _quantile_rank(n_pos: int, tau: float) -> int:
    # 0-indexed rank of the (1 - tau) empirical quantile of the positive scores
    return max(1, math.ceil((1.0 - tau) * n_pos)) - 1


def eval_batch(spec: SurrogateSpec, S, ds: Dataset, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Surrogate values for each row of the score stack ``S`` (shape ``(m, n)``)."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape[1] != ds.n:
        raise ValueError(f"score vectors have length {S.shape[1]}, dataset has {ds.n} examples")
    if mask is None:
        mask = subset_mask(spec, ds)
    y = ds.labels[mask]
    Ss = S[:, mask]
    if spec.kind != "precision_at_recall":
        return _pointwise(spec.kind, Ss * y).mean(axis=1)
    pos, neg = Ss[:, y == 1], Ss[:, y == -1]
    t = np.sort(pos, axis=1)[:, _quantile_rank(pos.shape[1], spec.tau)][:, None]
    return (np.maximum(0.0, 1.0 + neg - t).mean(axis=1)
            + spec.tau * np.maximum(0.0, 1.0 + t - pos).mean(axis=1))


def eval_surrogate(spec: SurrogateSpec, scores, ds: Dataset) -> float:
    s = np.asarray(scores, dtype=float).reshape(-1)
    if s.size == 0:
        raise ValueError("empty score vector")
    return float(eval_batch(spec, s[None, :], ds)[0])


def profile_batch(specs: Sequence[SurrogateSpec], S, ds: Dataset, masks=None) -> np.ndarray:
    """Profiles for a stack of score vectors, shape ``(m, K)``."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if masks is None:
        masks = [subset_mask(sp, ds) for sp in specs]
    return np.stack([eval_batch(sp, S, ds, mk) for sp, mk in zip(specs, masks)], axis=1)


def eval_profile_from_scores(specs: Sequence[SurrogateSpec], scores, ds: Dataset) -> np.ndarray:
    s = np.asarray(scores, dtype=float).reshape(-1)
    if s.size == 0:
        raise ValueError("empty score vector")
    return profile_batch(specs, s[None, :], ds)[0]


def eval_profile(specs: Sequence[SurrogateSpec], params: ModelParams, ds: Dataset) -> np.ndarray:
    return eval_profile_from_scores(specs, score(params, ds.features), ds)


def score_gradient(spec: SurrogateSpec, scores, ds: Dataset, mask=None) -> np.ndarray:
    """Gradient of one surrogate with respect to the score vector."""
    s = np.asarray(scores, dtype=float).reshape(-1)
    if mask is None:
        mask = subset_mask(spec, ds)
    y = ds.labels
    out = np.zeros(ds.n)
    idx = np.flatnonzero(mask)
    if spec.kind != "precision_at_recall":
        z = y[idx] * s[idx]
        out[idx] = _pointwise_deriv(spec.kind, z) * y[idx] / idx.size
        return out
    pos = idx[y[idx] == 1]
    neg = idx[y[idx] == -1]
    order = np.argsort(s[pos], kind="stable")
    j = pos[order[_quantile_rank(pos.size, spec.tau)]]
    t = s[j]
    a_neg = (1.0 + s[neg] - t > 0) / neg.size
    a_pos = spec.tau * (1.0 + t - s[pos] > 0) / pos.size
    out[neg] += a_neg
    out[pos] -= a_pos
    out[j] += a_pos.sum() - a_neg.sum()
    return out


class ProfileMap:
    """``theta -> l(theta)`` and its Jacobian for fixed specs and data.

    ``theta`` is the flat vector ``[weights..., bias]``.
    """

    def __init__(self, specs: Sequence[SurrogateSpec], ds: Dataset):
        self.specs = list(specs)
        self.ds = ds
        self.Xa = augment(ds.features)
        self.masks = [subset_mask(sp, ds) for sp in self.specs]

    @property
    def K(self) -> int:
        return len(self.specs)

    def scores(self, theta) -> np.ndarray:
        return self.Xa @ np.asarray(theta, dtype=float)

    def __call__(self, theta) -> np.ndarray:
        return profile_batch(self.specs, self.scores(theta)[None, :], self.ds, self.masks)[0]

    def batch(self, thetas) -> np.ndarray:
        """Profiles for a stack of parameter vectors, shape ``(m, K)``."""
        S = np.atleast_2d(thetas) @ self.Xa.T
        return profile_batch(self.specs, S, self.ds, self.masks)

    def value_and_jacobian(self, theta) -> tuple[np.ndarray, np.ndarray]:
        s = self.scores(theta)
        u = profile_batch(self.specs, s[None, :], self.ds, self.masks)[0]
        G = np.stack([score_gradient(sp, s, self.ds, mk) for sp, mk in zip(self.specs, self.masks)])
        return u, G @ self.Xa
