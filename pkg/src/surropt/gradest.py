"""Black-box estimates of the link gradient at the current surrogate profile.

Three estimators:

* :func:`fd_estimate` perturbs the *profile* by ``sigma * Z`` (realized
  through score shifts) and averages forward differences of the metric.
* :func:`interp_estimate` perturbs the *parameters* in pairs and fits a
  linear map from surrogate differences to metric differences.
* :func:`two_step_fd_estimate` is the forward-difference estimate of the
  Gaussian-smoothed link, for non-smooth metrics.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .data import Dataset
from .metrics import Metric
from .model import ModelParams, augment, score
from .numerics import RandomStream, least_squares_solve
from .surrogates import (
    SurrogateSpec,
    _pointwise,
    check_disjoint,
    eval_batch,
    profile_batch,
    subset_mask,
)

log = logging.getLogger(__name__)

SHIFT_BOUND = 1e3
SHIFT_TOL = 1e-10
MAX_RESAMPLES = 5


class UnattainablePerturbation(ValueError):
    pass


class EstimatorFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class PerturbationConfig:
    m: int = 1000
    sigma: float = 0.1
    sigma2: Optional[float] = None
    minibatch: Optional[int] = None
    truncation_L: Optional[float] = None
    coord_mask: Optional[tuple] = None
    stream: RandomStream = field(default_factory=lambda: RandomStream(0))

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.sigma2 is not None and not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if self.minibatch is not None and self.minibatch < 1:
            raise ValueError("minibatch must be >= 1")
        if self.truncation_L is not None and not self.truncation_L > 0:
            raise ValueError("truncation_L must be positive")


@dataclass
class GradientEstimate:
    g: np.ndarray
    condition_number: float = math.nan
    residual_norm: float = math.nan
    perturbations_used: int = 0
    skipped: int = 0

    def as_dict(self) -> dict:
        return {
            "g": [float(v) for v in self.g],
            "condition_number": self.condition_number,
            "residual_norm": self.residual_norm,
            "perturbations_used": self.perturbations_used,
            "skipped": self.skipped,
        }


def truncate_gradient(g, L: float) -> np.ndarray:
    """Zero out ``g`` when its norm exceeds ``2 sqrt(K) L``."""
    if not L > 0:
        raise ValueError("L must be positive")
    g = np.asarray(g, dtype=float)
    if np.linalg.norm(g) <= 2.0 * math.sqrt(g.size) * L:
        return g.copy()
    return np.zeros_like(g)


def default_sigma2(sigma1: float, K: int, L: float) -> float:
    return math.sqrt(sigma1 / (K ** 1.5 * L))


# --- score-space perturbations ------------------------------------------------

class _ShiftSolver:
    """Finds per-subset margin shifts that move each surrogate to a target.

    Surrogate ``k`` only sees examples in its subset; shifting those margins
    uniformly by ``delta`` (scores move by ``y_i * delta``) changes the
    surrogate monotonically, so each target is met by bisection.
    """

    def __init__(self, specs: Sequence[SurrogateSpec], scores, ds: Dataset):
        check_disjoint(specs)
        self.specs = list(specs)
        self.ds = ds
        self.scores = np.asarray(scores, dtype=float).reshape(-1)
        if self.scores.size == 0:
            raise ValueError("empty score vector")
        self.masks = [subset_mask(sp, ds) for sp in self.specs]
        self.idx = [np.flatnonzero(mk) for mk in self.masks]
        self.subsets = [ds.subset(ix) for ix in self.idx]
        self.base = profile_batch(self.specs, self.scores[None, :], ds, self.masks)[0]

    def _values(self, k: int, deltas: np.ndarray) -> np.ndarray:
        sp, ix, sub = self.specs[k], self.idx[k], self.subsets[k]
        margins = self.scores[ix] * sub.labels
        if sp.kind != "precision_at_recall":
            return _pointwise(sp.kind, margins[None, :] + deltas[:, None]).mean(axis=1)
        S = self.scores[ix][None, :] + deltas[:, None] * sub.labels[None, :]
        return eval_batch(sp, S, sub, np.ones(sub.n, dtype=bool))

    def solve(self, targets) -> tuple[np.ndarray, np.ndarray]:
        """Shifts ``(m, K)`` for targets ``(m, K)`` and a mask of attainable rows."""
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        m, K = targets.shape
        deltas = np.zeros((m, K))
        ok = np.all(targets >= 0, axis=1) & np.all(np.isfinite(targets), axis=1)
        for k in range(K):
            tgt = targets[:, k]
            lo = np.full(m, -SHIFT_BOUND)  # large surrogate value
            hi = np.full(m, SHIFT_BOUND)   # small surrogate value
            f_lo = self._values(k, lo)
            f_hi = self._values(k, hi)
            ok &= (tgt <= f_lo) & (tgt >= f_hi)
            while np.max(hi - lo) > SHIFT_TOL:
                mid = 0.5 * (lo + hi)
                above = self._values(k, mid) > tgt
                lo = np.where(above, mid, lo)
                hi = np.where(above, hi, mid)
            deltas[:, k] = 0.5 * (lo + hi)
        return deltas, ok

    def perturbed_scores(self, deltas) -> np.ndarray:
        deltas = np.atleast_2d(deltas)
        S = np.repeat(self.scores[None, :], deltas.shape[0], axis=0)
        for k, ix in enumerate(self.idx):
            S[:, ix] += deltas[:, k:k + 1] * self.ds.labels[ix][None, :]
        return S


def solve_score_shift(specs, scores, ds: Dataset, target_profile) -> np.ndarray:
    """Score perturbation ``Delta`` with ``l(scores + Delta) = target_profile``."""
    target = np.asarray(target_profile, dtype=float).reshape(1, -1)
    solver = _ShiftSolver(specs, scores, ds)
    if target.shape[1] != len(solver.specs):
        raise ValueError("target profile length does not match the number of surrogates")
    for k, sp in enumerate(solver.specs):
        if target[0, k] < 0:
            raise UnattainablePerturbation(f"component {k} ({sp}): negative target {target[0, k]:g}")
    deltas, ok = solver.solve(target)
    if not ok[0]:
        achieved = profile_batch(solver.specs, solver.perturbed_scores(deltas), ds, solver.masks)[0]
        bad = [f"{k} ({solver.specs[k]})" for k in range(len(solver.specs))
               if abs(achieved[k] - target[0, k]) > 1e-8]
        raise UnattainablePerturbation(f"target not attainable within |shift| <= {SHIFT_BOUND:g} "
                                       f"for component(s) {', '.join(bad)}")
    return solver.perturbed_scores(deltas)[0] - solver.scores


def _draw_attainable(solver, rng, m, make_targets, n_draws):
    """Draw ``m`` perturbations; unattainable ones are redrawn up to MAX_RESAMPLES times."""
    Z = rng.standard_normal((m, n_draws))
    deltas, ok = solver.solve(make_targets(Z))
    for _ in range(MAX_RESAMPLES):
        bad = np.flatnonzero(~ok)
        if bad.size == 0:
            break
        Z[bad] = rng.standard_normal((bad.size, n_draws))
        d_new, ok_new = solver.solve(make_targets(Z[bad]))
        deltas[bad], ok[bad] = d_new, ok_new
    skipped = int((~ok).sum())
    if skipped > m / 2:
        raise EstimatorFailure(f"{skipped} of {m} perturbations were unattainable")
    return Z[ok], deltas[ok], skipped


def fd_estimate(metric: Metric, specs, params: ModelParams, ds: Dataset,
                cfg: PerturbationConfig) -> GradientEstimate:
    """Forward-difference estimate from Gaussian profile perturbations."""
    if cfg.sigma2 is not None:
        raise ValueError("sigma2 is only used by the two-step estimator")
    scores = score(params, ds.features)
    solver = _ShiftSolver(specs, scores, ds)
    K = len(solver.specs)
    rng = cfg.stream.generator()
    Z, deltas, skipped = _draw_attainable(solver, rng, cfg.m, lambda Z: solver.base + cfg.sigma * Z, K)
    M0 = metric(scores, ds)
    M = metric.batch(solver.perturbed_scores(deltas), ds)
    g = ((M - M0) / cfg.sigma) @ Z / Z.shape[0]
    if cfg.truncation_L is not None:
        g = truncate_gradient(g, cfg.truncation_L)
    return GradientEstimate(g, perturbations_used=Z.shape[0], skipped=skipped)


def two_step_fd_estimate(metric: Metric, specs, params: ModelParams, ds: Dataset,
                         cfg: PerturbationConfig) -> GradientEstimate:
    """Forward differences of the ``sigma``-smoothed link with step ``sigma2``."""
    scores = score(params, ds.features)
    solver = _ShiftSolver(specs, scores, ds)
    K = len(solver.specs)
    s1 = cfg.sigma
    s2 = cfg.sigma2
    if s2 is None:
        if cfg.truncation_L is None:
            raise ValueError("two-step estimator needs sigma2 (or truncation_L to derive it)")
        s2 = default_sigma2(s1, K, cfg.truncation_L)
    rng = cfg.stream.generator()

    def targets(Z):
        # Z stacks [Z1 | Z2]; rows stacked so both perturbations are checked together
        first = solver.base + s1 * Z[:, :K]
        return np.vstack([first, first + s2 * Z[:, K:]])

    class _Pair:
        # adapt the solver to validate the pair of targets as one draw
        def solve(self, T):
            d, ok = solver.solve(T)
            h = T.shape[0] // 2
            return np.hstack([d[:h], d[h:]]), ok[:h] & ok[h:]

    Z, deltas, skipped = _draw_attainable(_Pair(), rng, cfg.m, targets, 2 * K)
    M1 = metric.batch(solver.perturbed_scores(deltas[:, :K]), ds)
    M2 = metric.batch(solver.perturbed_scores(deltas[:, K:]), ds)
    g = ((M2 - M1) / s2) @ Z[:, K:] / Z.shape[0]
    if cfg.truncation_L is not None:
        g = truncate_gradient(g, cfg.truncation_L)
    return GradientEstimate(g, perturbations_used=Z.shape[0], skipped=skipped)


# --- parameter-space perturbations --------------------------------------------

def interp_core(profile_fn: Callable, metric_fn: Callable, theta, cfg: PerturbationConfig,
                rng: Optional[np.random.Generator] = None) -> GradientEstimate:
    """Linear-interpolation estimate for batched black boxes.

    ``profile_fn`` maps a ``(m, p)`` stack of parameter vectors to ``(m, K)``
    profiles and ``metric_fn`` maps it to ``(m,)`` metric values.
    """
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if rng is None:
        rng = cfg.stream.generator()
    m, p = cfg.m, theta.size
    Z1 = rng.standard_normal((m, p))
    Z2 = rng.standard_normal((m, p))
    if cfg.coord_mask is not None:
        keep = np.asarray(cfg.coord_mask, dtype=bool)
        Z1[:, ~keep] = 0.0
        Z2[:, ~keep] = 0.0
    T1 = theta + cfg.sigma * Z1
    T2 = theta + cfg.sigma * Z2
    both = np.vstack([T1, T2])
    P = np.asarray(profile_fn(both), dtype=float)
    Mv = np.asarray(metric_fn(both), dtype=float)
    H = P[:m] - P[m:]
    dM = Mv[:m] - Mv[m:]
    if not (np.all(np.isfinite(H)) and np.all(np.isfinite(dM))):
        raise EstimatorFailure("non-finite surrogate or metric differences")
    K = H.shape[1]
    dead = np.flatnonzero(np.all(H == 0.0, axis=0))
    if dead.size:
        log.warning("surrogate column(s) %s insensitive to every perturbation; ridge fallback", dead.tolist())
    if m < K:
        log.warning("only %d perturbations for %d surrogates; the fit is underdetermined", m, K)
    g, diag = least_squares_solve(H, dM, 0.0)
    if cfg.truncation_L is not None:
        g = truncate_gradient(g, cfg.truncation_L)
    return GradientEstimate(g, diag["condition_number"], diag["residual_norm"], m, 0)


def interp_estimate(metric: Metric, specs, params: ModelParams, ds: Dataset, cfg: PerturbationConfig,
                    metric_ds: Optional[Dataset] = None) -> GradientEstimate:
    """Linear-interpolation estimate; the metric may live on a separate sample.

    Weights and bias are perturbed together. With ``cfg.minibatch`` set, one
    random subsample of each sample is shared by all ``2m`` evaluations.
    """
    if cfg.sigma2 is not None:
        raise ValueError("sigma2 is only used by the two-step estimator")
    rng = cfg.stream.generator()
    metric_ds = ds if metric_ds is None else metric_ds
    same = metric_ds is ds
    if cfg.minibatch is not None:
        if ds.n > cfg.minibatch:
            ds = ds.subset(np.sort(rng.choice(ds.n, cfg.minibatch, replace=False)))
        if same:
            metric_ds = ds
        elif metric_ds.n > cfg.minibatch:
            metric_ds = metric_ds.subset(np.sort(rng.choice(metric_ds.n, cfg.minibatch, replace=False)))
    specs = list(specs)
    masks = [subset_mask(sp, ds) for sp in specs]
    Xa = augment(ds.features)
    Xm = Xa if same else augment(metric_ds.features)
    return interp_core(
        lambda T: profile_batch(specs, T @ Xa.T, ds, masks),
        lambda T: metric.batch(T @ Xm.T, metric_ds),
        params.as_vector(),
        cfg,
        rng,
    )
