"""Logistic regression and threshold post-shifting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .metrics import Metric
from .model import ModelParams, augment, score
from .numerics import adagrad_minimize


@dataclass(frozen=True)
class PostShiftResult:
    threshold: float
    achieved_metric: float
    params: ModelParams


def logistic_loss(theta, Xa, y) -> float:
    return float(np.mean(np.logaddexp(0.0, -y * (Xa @ theta))))


def train_logistic_regression(ds: Dataset, step: float = 1.0, iters: int = 1000) -> ModelParams:
    """Mean cross-entropy minimized by Adagrad from the zero model."""
    y = ds.labels
    if not ((y == 1).any() and (y == -1).any()):
        raise ValueError("logistic regression needs both classes")
    Xa = augment(ds.features)

    def grad(theta):
        z = y * (Xa @ theta)
        w = -y * 0.5 * (1.0 - np.tanh(0.5 * z))  # -y * sigmoid(-z)
        return w @ Xa / ds.n

    theta = adagrad_minimize(grad, np.zeros(Xa.shape[1]), step, iters)
    if not np.isfinite(logistic_loss(theta, Xa, y)):
        raise FloatingPointError("logistic regression diverged")
    return ModelParams.from_vector(theta)


def threshold_candidates(scores) -> np.ndarray:
    """Midpoints between consecutive distinct scores plus one threshold on each side.

    The outer thresholds ``min - 1`` and ``max + 1`` stand in for -inf/+inf so
    the shifted model stays finite.
    """
    u = np.unique(np.asarray(scores, dtype=float))
    mids = 0.5 * (u[:-1] + u[1:])
    return np.concatenate([[u[0] - 1.0], mids, [u[-1] + 1.0]])


def sweep_thresholds(metric: Metric, scores, ds: Dataset, thresholds, chunk_cells: int = 4_000_000):
    s = np.asarray(scores, dtype=float)
    thresholds = np.asarray(thresholds, dtype=float)
    rows = max(1, chunk_cells // max(1, s.size))
    out = np.empty(thresholds.size)
    for i in range(0, thresholds.size, rows):
        c = thresholds[i:i + rows]
        out[i:i + rows] = metric.batch(s[None, :] - c[:, None], ds)
    return out


def post_shift(model: ModelParams, tune_ds: Dataset, metric: Metric) -> PostShiftResult:
    """Pick the threshold minimizing ``metric`` on ``tune_ds``; ties go to the smallest."""
    s = score(model, tune_ds.features)
    cands = threshold_candidates(s)
    vals = sweep_thresholds(metric, s, tune_ds, cands)
    best = int(np.argmin(vals))
    c = float(cands[best])
    return PostShiftResult(c, float(vals[best]), ModelParams(model.weights, model.bias - c))
