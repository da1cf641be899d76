"""Projected gradient descent over the surrogate-profile epigraph.

Iterates are pairs ``(theta, u)`` with ``u = l(theta)``. Each outer step
moves ``u`` against an estimated link gradient and maps the result back to
a realizable profile by minimizing ``||(l(theta) - u_tilde)_+||^2`` over
``theta`` with Adagrad.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .data import Dataset
from .gradest import (
    EstimatorFailure,
    GradientEstimate,
    PerturbationConfig,
    UnattainablePerturbation,
    fd_estimate,
    interp_estimate,
    two_step_fd_estimate,
)
from .metrics import Metric
from .model import ModelParams, augment
from .numerics import adagrad_minimize
from .surrogates import ProfileMap, SurrogateSpec, eval_profile

log = logging.getLogger(__name__)

ESTIMATORS = ("fd", "interp", "two_step")


@dataclass(frozen=True)
class PgdConfig:
    T: int = 250
    eta: float = 1.0
    proj_step: float = 1.0
    proj_iters: int = 100
    estimator: str = "interp"
    perturb: PerturbationConfig = field(default_factory=PerturbationConfig)
    init: str = "zero"
    model_selection: Optional[str] = None  # None: best_val_metric with a validation set, else last

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not self.proj_step > 0 or self.proj_iters < 1:
            raise ValueError("projection step must be positive and iterations >= 1")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if self.estimator == "two_step":
            if self.perturb.sigma2 is None and self.perturb.truncation_L is None:
                raise ValueError("the two-step estimator needs sigma2 (or truncation_L to derive it)")
        elif self.perturb.sigma2 is not None:
            raise ValueError("sigma2 is only used by the two-step estimator")
        if self.init not in ("zero", "logreg"):
            raise ValueError("init must be 'zero' or 'logreg'")
        if self.model_selection not in (None, "last", "best_val_metric"):
            raise ValueError("model_selection must be 'last' or 'best_val_metric'")


@dataclass
class TraceRecord:
    t: int
    theta: np.ndarray
    u: np.ndarray
    u_tilde: np.ndarray
    u_next: np.ndarray
    g_hat: GradientEstimate
    train_metric: float
    val_metric: Optional[float]
    proj_objective: float

    def as_dict(self) -> dict:
        return {
            "t": self.t,
            "theta": [float(v) for v in self.theta],
            "u": [float(v) for v in self.u],
            "u_tilde": [float(v) for v in self.u_tilde],
            "u_next": [float(v) for v in self.u_next],
            "g_hat": self.g_hat.as_dict(),
            "train_metric": self.train_metric,
            "val_metric": self.val_metric,
            "proj_objective": self.proj_objective,
        }


@dataclass
class PgdTrace:
    records: list = field(default_factory=list)
    selected_t: int = 0

    def __len__(self):
        return len(self.records)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.as_dict(), sort_keys=True) + "\n" for r in self.records)


# --- projection ---------------------------------------------------------------

def clipped_objective(u, u_tilde) -> float:
    return float(np.sum(np.maximum(np.asarray(u) - u_tilde, 0.0) ** 2))


def project_clipped(value_and_jac: Callable, u_tilde, theta0, step: float = 1.0,
                    iters: int = 100) -> tuple[np.ndarray, np.ndarray, float]:
    """Approximately solve ``min_theta ||(l(theta) - u_tilde)_+||^2``.

    ``value_and_jac(theta)`` returns ``(l(theta), dl/dtheta)`` with the
    Jacobian shaped ``(K, p)``. Returns the best ``theta`` found, its
    profile and the objective there.
    """
    u_tilde = np.asarray(u_tilde, dtype=float)
    if not np.all(np.isfinite(u_tilde)):
        raise FloatingPointError(f"non-finite projection target {u_tilde}")
    cache = {}

    def evaluate(theta):
        key = theta.tobytes()
        if key not in cache:
            cache.clear()
            cache[key] = value_and_jac(theta)
        return cache[key]

    def objective(theta):
        return clipped_objective(evaluate(theta)[0], u_tilde)

    def grad(theta):
        u, J = evaluate(theta)
        return 2.0 * np.maximum(u - u_tilde, 0.0) @ J

    theta = adagrad_minimize(grad, np.asarray(theta0, dtype=float), step, iters, objective=objective)
    u, _ = value_and_jac(theta)
    obj = clipped_objective(u, u_tilde)
    if not math.isfinite(obj):
        raise FloatingPointError("non-finite projection objective")
    return theta, np.asarray(u, dtype=float), obj


def project_inexact(specs, ds: Dataset, u_tilde, warm_start: ModelParams, cfg: PgdConfig,
                    profile_map: Optional[ProfileMap] = None):
    """Project ``u_tilde`` back to a realizable profile, starting from ``warm_start``.

    Returns ``(params, profile, objective)``.
    """
    pm = profile_map if profile_map is not None else ProfileMap(specs, ds)
    theta, _, _ = project_clipped(pm.value_and_jacobian, u_tilde, warm_start.as_vector(),
                                  cfg.proj_step, cfg.proj_iters)
    params = ModelParams.from_vector(theta)
    # re-evaluate through the plain scoring path so u matches eval_profile bit for bit
    u = eval_profile(specs, params, ds)
    return params, u, clipped_objective(u, u_tilde)


def complete_exact_projection(u_proj, u_tilde) -> np.ndarray:
    """Exact Euclidean projection onto the epigraph from a clipped-projection solution."""
    u_proj = np.asarray(u_proj, dtype=float)
    u_tilde = np.asarray(u_tilde, dtype=float)
    if u_proj.shape != u_tilde.shape:
        raise ValueError("profile lengths differ")
    return np.maximum(u_tilde, u_proj)


def proximal_form_value(u, u_prev, g_hat, eta: float) -> float:
    """``<g, u> + D`` where D is the one-sided proximal term around ``u_prev``."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    u, u_prev, g = (np.asarray(v, dtype=float) for v in (u, u_prev, g_hat))
    diff = u - u_prev
    D = (diff @ diff
         + np.sum(np.maximum(diff + eta * g, 0.0) ** 2)
         - np.sum(np.maximum(-diff - eta * g, 0.0) ** 2)) / (2.0 * eta)
    return float(g @ u + D)


def proximal_form_objective(specs, ds: Dataset, params: ModelParams, prev: ModelParams, g_hat,
                            eta: float) -> float:
    pm = ProfileMap(specs, ds)
    return proximal_form_value(pm(params.as_vector()), pm(prev.as_vector()), g_hat, eta)


def stationarity_diagnostic(trace: PgdTrace, eta: float) -> np.ndarray:
    """Per-iteration gradient-mapping norm ``||u_t - max(u_tilde, u_next)|| / eta``."""
    if not trace.records:
        raise ValueError("empty trace")
    return np.array([
        np.linalg.norm(r.u - complete_exact_projection(r.u_next, r.u_tilde)) / eta
        for r in trace.records
    ])


# --- outer loop ---------------------------------------------------------------

def _estimate(cfg: PgdConfig, metric, specs, params, ds_train, ds_val, pcfg):
    if cfg.estimator == "interp":
        return interp_estimate(metric, specs, params, ds_train, pcfg, metric_ds=ds_val)
    # finite-difference estimators perturb training scores, so the metric is read on the training sample
    if cfg.estimator == "fd":
        return fd_estimate(metric, specs, params, ds_train, pcfg)
    return two_step_fd_estimate(metric, specs, params, ds_train, pcfg)


def surrogate_pgd(metric: Metric, specs: Sequence[SurrogateSpec], ds_train: Dataset,
                  ds_val: Optional[Dataset] = None, cfg: PgdConfig = PgdConfig(),
                  init: Optional[ModelParams] = None) -> tuple[ModelParams, PgdTrace]:
    """Run the surrogate projected gradient descent loop for ``cfg.T`` steps."""
    specs = list(specs)
    if not specs:
        raise ValueError("need at least one surrogate")
    pm = ProfileMap(specs, ds_train)
    Xa_tr = pm.Xa
    Xa_va = augment(ds_val.features) if ds_val is not None else None

    if init is not None:
        params = init
    elif cfg.init == "logreg":
        from .baselines import train_logistic_regression
        params = train_logistic_regression(ds_train)
    else:
        params = ModelParams.zeros(ds_train.d)
    u = pm(params.as_vector())

    selection = cfg.model_selection or ("best_val_metric" if ds_val is not None else "last")
    if selection == "best_val_metric" and ds_val is None:
        raise ValueError("best_val_metric selection needs a validation set")

    def val_of(theta):
        return metric(Xa_va @ theta, ds_val) if ds_val is not None else None

    best_params, best_val, best_t = params, val_of(params.as_vector()), 0
    trace = PgdTrace()
    for t in range(1, cfg.T + 1):
        pcfg = replace(cfg.perturb, stream=cfg.perturb.stream.substream(t))
        try:
            est = _estimate(cfg, metric, specs, params, ds_train, ds_val, pcfg)
        except (EstimatorFailure, UnattainablePerturbation) as exc:
            raise type(exc)(f"iteration {t}: {exc}") from exc
        u_tilde = u - cfg.eta * est.g
        new_params, u_next, obj = project_inexact(specs, ds_train, u_tilde, params, cfg, pm)
        if not np.all(np.isfinite(u_next)):
            raise FloatingPointError(f"iteration {t}: non-finite surrogate profile")
        theta = new_params.as_vector()
        rec = TraceRecord(t, params.as_vector(), u, u_tilde, u_next, est,
                          metric(Xa_tr @ theta, ds_train), val_of(theta), obj)
        trace.records.append(rec)
        if rec.val_metric is not None and rec.val_metric < best_val:
            best_params, best_val, best_t = new_params, rec.val_metric, t
        params, u = new_params, u_next

    if selection == "last":
        trace.selected_t = cfg.T
        return params, trace
    trace.selected_t = best_t
    return best_params, trace
