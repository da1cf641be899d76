"""Linear scorer ``f(x) = <w, x> + b`` and its text checkpoint format."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True, eq=False)
class ModelParams:
    weights: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))
        if not (np.all(np.isfinite(w)) and np.isfinite(self.bias)):
            raise ValueError("model parameters must be finite")

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self.bias == other.bias and np.array_equal(self.weights, other.weights)

    __hash__ = None

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def zeros(cls, d: int) -> "ModelParams":
        return cls(np.zeros(d), 0.0)

    @classmethod
    def from_vector(cls, theta) -> "ModelParams":
        """Inverse of :meth:`as_vector`; the bias is the last entry."""
        theta = np.asarray(theta, dtype=float).reshape(-1)
        return cls(theta[:-1], theta[-1])

    def as_vector(self) -> np.ndarray:
        return np.append(self.weights, self.bias)


def augment(features) -> np.ndarray:
    """Append a constant-one column so that ``augment(X) @ theta`` scores."""
    X = np.asarray(features, dtype=float)
    return np.hstack([X, np.ones((X.shape[0], 1))])


def score(params: ModelParams, features) -> np.ndarray:
    X = np.atleast_2d(np.asarray(features, dtype=float))
    if X.shape[1] != params.dim:
        raise ValueError(f"feature width {X.shape[1]} does not match weight length {params.dim}")
    return X @ params.weights + params.bias


def predict(scores) -> np.ndarray:
    """Labels in {-1, +1}; a zero score counts as negative."""
    s = np.asarray(scores, dtype=float)
    return np.where(s > 0, 1, -1)


def save_checkpoint(params: ModelParams, path) -> None:
    lines = [str(params.dim)]
    lines += [f"{w:.17g}" for w in params.weights]
    lines.append(f"{params.bias:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> ModelParams:
    rows = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not rows:
        raise ValueError(f"{path}: empty checkpoint")
    d = int(rows[0])
    if len(rows) != d + 2:
        raise ValueError(f"{path}: expected {d + 2} lines, found {len(rows)}")
    vals = [float(r) for r in rows[1:]]
    return ModelParams(vals[:d], vals[d])
