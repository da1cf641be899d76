"""Random streams, small dense solvers and the Adagrad minimizer."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

log = logging.getLogger(__name__)

ADAGRAD_DELTA = 1e-8


@dataclass(frozen=True)
class RandomStream:
    """A reproducible substream identified by ``(seed, stream_id)``.

    Substreams are derived through :class:`numpy.random.SeedSequence` spawn
    keys, so distinct ``stream_id`` values give independent sequences.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(ss))

    def substream(self, stream_id: int) -> "RandomStream":
        # fold the parent id in so nested substreams do not collide
        return RandomStream(self.seed, self.stream_id * 1_000_003 + stream_id + 1)


def gaussian_vector(rng: np.random.Generator, dim: int) -> np.ndarray:
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    return rng.standard_normal(dim)


def least_squares_solve(H, b, ridge: float = 0.0) -> tuple[np.ndarray, dict]:
    """Minimize ``||H x - b||^2 + ridge * ||x||^2`` via the normal equations.

    Returns the solution and a diagnostics dict with the condition number of
    ``H^T H``, the residual norm and the ridge that was actually applied.
    When the Cholesky factorization fails, a ridge floor of
    ``1e-10 * trace(H^T H) / K`` is added.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    m, K = H.shape
    if m < 1 or K < 1:
        raise ValueError("H must have at least one row and one column")
    if b.shape[0] != m:
        raise ValueError(f"b has length {b.shape[0]}, expected {m}")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")

    A = H.T @ H
    rhs = H.T @ b
    cond = float(np.linalg.cond(A)) if np.all(np.isfinite(A)) else math.inf
    applied = float(ridge)
    try:
        if applied == 0.0 and not cond < 1e14:
            raise np.linalg.LinAlgError("numerically singular")
        L = np.linalg.cholesky(A + applied * np.eye(K))
    except np.linalg.LinAlgError:
        floor = 1e-10 * float(np.trace(A)) / K
        if floor <= 0.0:
            floor = 1e-10
        applied = max(applied, floor)
        log.warning("normal equations singular (cond=%.3g); ridge floor %.3g applied", cond, applied)
        while True:
            try:
                L = np.linalg.cholesky(A + applied * np.eye(K))
                break
            except np.linalg.LinAlgError:
                applied *= 10.0
    y = np.linalg.solve(L, rhs)
    x = np.linalg.solve(L.T, y)
    diag = {
        "condition_number": cond,
        "residual_norm": float(np.linalg.norm(H @ x - b)),
        "ridge": applied,
    }
    return x, diag


def adagrad_minimize(
    grad_fn: Callable[[np.ndarray], np.ndarray],
    theta0,
    step: float = 1.0,
    iters: int = 100,
    objective: Optional[Callable[[np.ndarray], float]] = None,
) -> np.ndarray:
    """Run ``iters`` Adagrad updates from ``theta0``.

    If ``objective`` is given, the best iterate seen (including ``theta0``)
    is returned instead of the last one.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if step <= 0:
        raise ValueError("step must be positive")
    theta = np.array(theta0, dtype=float, copy=True)
    acc = np.zeros_like(theta)

    best, best_val = theta.copy(), math.inf
    if objective is not None:
        best_val = float(objective(theta))

    for it in range(iters):
        g = np.asarray(grad_fn(theta), dtype=float)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient at adagrad iteration {it}: {g}")
        acc += g * g
        theta = theta - step * g / np.sqrt(acc + ADAGRAD_DELTA)
        if objective is not None:
            val = float(objective(theta))
            if not math.isfinite(val):
                raise FloatingPointError(f"non-finite objective at adagrad iteration {it}")
            if val < best_val:
                best, best_val = theta.copy(), val

    return best if objective is not None else theta


def empirical_quantile(values, tau: float) -> float:
    """Value at rank ``ceil(tau * n)`` (1-indexed) of the ascending sort."""
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size == 0:
        raise ValueError("empirical_quantile of an empty vector")
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    rank = max(1, math.ceil(tau * v.size))
    return float(np.sort(v, kind="stable")[rank - 1])
