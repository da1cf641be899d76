"""Evaluation metrics, all expressed as losses in [0, 1] (lower is better).

A metric is any callable ``metric(scores, ds) -> float``; the classes here
also expose ``batch(S, ds)`` for a stack of score vectors of shape
``(m, n)``, which the gradient estimators use.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .data import Dataset
from .surrogates import SurrogateSpec, profile_batch

DISPLAY_COMPLEMENT = {"macro_f", "prbep", "p_at_k"}


@dataclass(frozen=True)
class ConfusionRates:
    tpr: float
    tnr: float
    fpr: float
    fnr: float
    by_group: dict = field(default_factory=dict)


def _rates(pred_pos: np.ndarray, y: np.ndarray, where: str) -> ConfusionRates:
    pos, neg = y == 1, y == -1
    if not pos.any():
        raise ValueError(f"no positive examples in {where}")
    if not neg.any():
        raise ValueError(f"no negative examples in {where}")
    tpr = float(pred_pos[pos].mean())
    tnr = float((~pred_pos[neg]).mean())
    return ConfusionRates(tpr, tnr, 1.0 - tnr, 1.0 - tpr)


def confusion_rates(scores, ds: Dataset) -> ConfusionRates:
    pred = np.asarray(scores, dtype=float) > 0
    overall = _rates(pred, ds.labels, "dataset")
    if ds.groups is None:
        return overall
    groups = {g: _rates(pred[ds.groups == g], ds.labels[ds.groups == g], f"group {g}")
              for g in np.unique(ds.groups)}
    return ConfusionRates(overall.tpr, overall.tnr, overall.fpr, overall.fnr, groups)


class Metric:
    name = "metric"

    def batch(self, S, ds: Dataset) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, scores, ds: Dataset) -> float:
        s = np.asarray(scores, dtype=float).reshape(-1)
        return float(self.batch(s[None, :], ds)[0])

    def display(self, loss: float) -> float:
        return loss


def _stack(S, ds):
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape[1] != ds.n:
        raise ValueError(f"score vectors have length {S.shape[1]}, dataset has {ds.n} examples")
    return S


class ErrorRate(Metric):
    name = "error"

    def batch(self, S, ds):
        S = _stack(S, ds)
        wrong = (np.where(S > 0, 1, -1) != ds.labels).sum(axis=1)
        return wrong / ds.n


class GMeanLoss(Metric):
    """``1 - sqrt(TPR * TNR)``."""

    name = "gmean"

    def batch(self, S, ds):
        S = _stack(S, ds)
        pos, neg = ds.labels == 1, ds.labels == -1
        if not pos.any() or not neg.any():
            raise ValueError("gmean needs both positive and negative examples")
        tp = (S[:, pos] > 0).sum(axis=1)
        tn = (S[:, neg] <= 0).sum(axis=1)
        # integer products keep TPR*TNR a single rounding away from exact
        return 1.0 - np.sqrt((tp * tn) / (int(pos.sum()) * int(neg.sum())))


class MacroFLoss(Metric):
    """One minus the average per-group F1; a group with no true positives scores F1 = 0."""

    name = "macro_f"

    def batch(self, S, ds):
        S = _stack(S, ds)
        if ds.groups is None:
            raise ValueError("macro_f needs group ids")
        tps, dens = [], []
        for g in (0, 1):
            in_g = ds.groups == g
            y = ds.labels[in_g]
            if not (y == 1).any():
                raise ValueError(f"macro_f: group {g} has no positive examples")
            pred = S[:, in_g] > 0
            tp = (pred & (y == 1)).sum(axis=1)
            n_pred = pred.sum(axis=1)
            n_pos = (y == 1).sum()
            # F1 = 2 TP / (predicted + actual); zero when TP = 0
            tps.append(tp)
            dens.append(n_pred + n_pos)
        # 1 - (F0 + F1)/2 as one exact-integer ratio, so the result is correctly rounded
        (t0, t1), (d0, d1) = tps, dens
        return (d0 * d1 - t0 * d1 - t1 * d0) / (d0 * d1)

    def display(self, loss):
        return 1.0 - loss


def _top_k_loss(S, y, k):
    order = np.argsort(-S, axis=1, kind="stable")[:, :k]
    return (y[order] != 1).sum(axis=1) / k


class PrecisionAtKLoss(Metric):
    name = "p_at_k"

    def __init__(self, k: int):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = int(k)

    def batch(self, S, ds):
        S = _stack(S, ds)
        if self.k > ds.n:
            raise ValueError(f"k={self.k} exceeds the number of examples {ds.n}")
        return _top_k_loss(S, ds.labels, self.k)

    def display(self, loss):
        return 1.0 - loss


class PRBEPLoss(Metric):
    """Precision@K with K equal to the number of positives."""

    name = "prbep"

    def batch(self, S, ds):
        S = _stack(S, ds)
        n_pos = int((ds.labels == 1).sum())
        if n_pos == 0:
            raise ValueError("prbep needs at least one positive example")
        return _top_k_loss(S, ds.labels, n_pos)

    def display(self, loss):
        return 1.0 - loss


def error_rate(scores, ds):
    return ErrorRate()(scores, ds)


def gmean_loss(scores, ds):
    return GMeanLoss()(scores, ds)


def macro_f_loss(scores, ds):
    return MacroFLoss()(scores, ds)


def prbep_loss(scores, ds):
    return PRBEPLoss()(scores, ds)


def precision_at_k_loss(scores, ds, k):
    return PrecisionAtKLoss(k)(scores, ds)


# --- synthetic metrics with a known link function ----------------------------

class Link:
    """A monotone link ``psi`` with a known gradient."""

    def value(self, U) -> np.ndarray:
        raise NotImplementedError

    def grad(self, u) -> np.ndarray:
        raise NotImplementedError


class LinearLink(Link):
    def __init__(self, a):
        self.a = np.asarray(a, dtype=float)
        if np.any(self.a < 0):
            raise ValueError("linear link weights must be nonnegative")

    def value(self, U):
        return np.atleast_2d(U) @ self.a

    def grad(self, u):
        return self.a.copy()


class GeometricMeanLink(Link):
    """``(prod_k u_k) ** (1/K)`` on the positive orthant."""

    def value(self, U):
        U = np.atleast_2d(np.asarray(U, dtype=float))
        with np.errstate(invalid="ignore"):
            return np.prod(U, axis=1) ** (1.0 / U.shape[1])

    def grad(self, u):
        u = np.asarray(u, dtype=float)
        return self.value(u[None, :])[0] / (u.size * u)


class SoftMaxLink(Link):
    """Smooth maximum ``t * log(sum_k exp(u_k / t))``."""

    def __init__(self, temperature: float = 0.5):
        self.t = float(temperature)

    def value(self, U):
        U = np.atleast_2d(np.asarray(U, dtype=float))
        return self.t * np.logaddexp.reduce(U / self.t, axis=1)

    def grad(self, u):
        z = np.asarray(u, dtype=float) / self.t
        e = np.exp(z - z.max())
        return e / e.sum()


def sine_slack(eps_bar: float) -> Callable:
    """Bounded slack ``eps_bar * sin(||s||)`` of the score vector."""

    def slack(S):
        return eps_bar * np.sin(np.linalg.norm(np.atleast_2d(S), axis=1))

    return slack


class SyntheticMetric(Metric):
    """``psi(l(scores)) + slack(scores)`` for a known link ``psi``."""

    name = "synthetic"

    def __init__(self, link: Link, specs: Sequence[SurrogateSpec], slack: Optional[Callable] = None):
        self.link = link
        self.specs = list(specs)
        self.slack = slack

    def batch(self, S, ds):
        S = _stack(S, ds)
        out = self.link.value(profile_batch(self.specs, S, ds))
        if self.slack is not None:
            out = out + self.slack(S)
        return out


def synthetic_metric(psi: Link, specs, slack_fn: Optional[Callable] = None) -> SyntheticMetric:
    return SyntheticMetric(psi, specs, slack_fn)


class ConstantMetric(Metric):
    name = "constant"

    def __init__(self, c: float = 0.5):
        self.c = float(c)

    def batch(self, S, ds):
        return np.full(np.atleast_2d(S).shape[0], self.c)


def parse_metric(text: str) -> Metric:
    """``gmean``, ``macro_f``, ``prbep``, ``p_at_k:<k>`` or ``error``."""
    t = text.strip()
    simple = {"gmean": GMeanLoss, "macro_f": MacroFLoss, "prbep": PRBEPLoss, "error": ErrorRate}
    if t in simple:
        return simple[t]()
    if t.startswith("p_at_k:"):
        try:
            return PrecisionAtKLoss(int(t.split(":", 1)[1]))
        except ValueError:
            raise ValueError(f"bad precision@k metric {text!r}") from None
    raise ValueError(f"unknown metric {text!r}; expected gmean, macro_f, prbep, p_at_k:<k> or error")
