import json

import numpy as np
import pytest

from conftest import make_ds
from toys import AffineMetric, CountingMetric, quad_pair, quad_pair_epigraph_projection, quad_pair_grid_objective
from surropt.gradest import EstimatorFailure, GradientEstimate, PerturbationConfig
from surropt.metrics import ConstantMetric, LinearLink, SoftMaxLink, synthetic_metric
from surropt.model import ModelParams, score
from surropt.numerics import RandomStream
from surropt.optimizer import (
    PgdConfig,
    PgdTrace,
    TraceRecord,
    clipped_objective,
    complete_exact_projection,
    project_clipped,
    project_inexact,
    proximal_form_objective,
    proximal_form_value,
    stationarity_diagnostic,
    surrogate_pgd,
)
from surropt.surrogates import SurrogateSpec, eval_profile

HP = SurrogateSpec("hinge", "positives")
HN = SurrogateSpec("hinge", "negatives")


# --- projection ------------------------------------------------------------------

def test_feasible_target_keeps_warm_start():
    theta, u, obj = project_clipped(quad_pair, np.array([5.0, 5.0]), np.array([0.3]))
    assert obj == 0.0
    assert theta[0] == 0.3


def test_single_quadratic():
    vj = lambda t: (np.array([t[0] ** 2]), np.array([[2 * t[0]]]))
    theta, u, obj = project_clipped(vj, np.array([4.0]), np.array([3.0]))
    assert max(theta[0] ** 2 - 4.0, 0.0) ** 2 <= 1e-4
    assert obj == clipped_objective(u, [4.0])


@pytest.mark.parametrize("warm", [2.0, -2.0, 0.5])
def test_two_quadratics_reach_grid_optimum(warm):
    u_tilde = np.array([0.5, 0.5])
    _, _, obj = project_clipped(quad_pair, u_tilde, np.array([warm]))
    assert obj <= quad_pair_grid_objective(u_tilde) + 1e-3


def test_projection_rejects_nonfinite_target():
    with pytest.raises(FloatingPointError):
        project_clipped(quad_pair, np.array([np.nan, 0.0]), np.array([0.0]))


def test_project_inexact_feasible(separable_2d):
    ds = separable_2d
    warm = ModelParams(np.array([0.2, 0.1]), -0.1)
    u0 = eval_profile([HP, HN], warm, ds)
    p, u, obj = project_inexact([HP, HN], ds, u0 + 0.1, warm, PgdConfig())
    assert obj == 0.0 and p == warm
    np.testing.assert_array_equal(u, u0)


def test_project_inexact_negative_target_components(separable_2d):
    ds = separable_2d
    p, u, obj = project_inexact([HP, HN], ds, np.array([-0.5, 0.2]), ModelParams.zeros(2), PgdConfig())
    assert np.isfinite(obj)
    assert obj < clipped_objective([1.0, 1.0], [-0.5, 0.2])
    np.testing.assert_array_equal(u, eval_profile([HP, HN], p, ds))


# --- exact completion ------------------------------------------------------------

def test_completion_examples():
    np.testing.assert_array_equal(complete_exact_projection([1, 2], [0.5, 3]), [1, 3])
    np.testing.assert_array_equal(complete_exact_projection([1, 2], [0.5, 1]), [1, 2])
    np.testing.assert_array_equal(complete_exact_projection([1, 2], [1.5, 3]), [1.5, 3])
    with pytest.raises(ValueError):
        complete_exact_projection([1, 2], [1, 2, 3])


@pytest.mark.parametrize("u_tilde", [(0.5, 0.5), (0.2, 1.0), (-1.0, 2.0), (3.0, -0.5), (1.0, 1.5), (0.1, 0.1)])
def test_completion_matches_brute_force_projection(u_tilde):
    u_tilde = np.array(u_tilde)
    _, u_proj, _ = project_clipped(quad_pair, u_tilde, np.array([2.0]))
    comp = complete_exact_projection(u_proj, u_tilde)
    assert np.all(u_proj <= comp)
    np.testing.assert_allclose(comp, quad_pair_epigraph_projection(u_tilde), atol=1e-3)


# --- proximal form -----------------------------------------------------------------

def test_proximal_scalar_example():
    assert proximal_form_value([0.5], [0.0], [1.0], 1.0) == pytest.approx(1.75, abs=1e-15)


def test_proximal_at_previous_point():
    g = np.array([0.7, -0.4])
    u = np.array([0.3, 0.9])
    eta = 0.5
    want = g @ u + (np.sum(np.maximum(eta * g, 0) ** 2) - np.sum(np.maximum(-eta * g, 0) ** 2)) / (2 * eta)
    assert proximal_form_value(u, u, g, eta) == pytest.approx(want, abs=1e-14)


def test_proximal_needs_positive_eta():
    with pytest.raises(ValueError):
        proximal_form_value([0.0], [0.0], [1.0], 0.0)


def test_proximal_identity_constant_offset(separable_2d):
    ds = separable_2d
    specs = [HP, HN, SurrogateSpec("logistic", "all")]
    r = np.random.default_rng(0)
    prev = ModelParams(r.standard_normal(2) * 0.3, 0.1)
    g = r.standard_normal(3)
    eta = 0.7
    u_prev = eval_profile(specs, prev, ds)
    u_tilde = u_prev - eta * g
    const = g @ u_prev - eta / 2 * g @ g
    for _ in range(100):
        p = ModelParams(r.standard_normal(2), float(r.standard_normal()))
        u = eval_profile(specs, p, ds)
        diff = proximal_form_objective(specs, ds, p, prev, g, eta) - clipped_objective(u, u_tilde) / eta
        assert diff == pytest.approx(const, rel=1e-9, abs=1e-12)


# --- outer loop ------------------------------------------------------------------

def _pgd(T=10, eta=0.5, m=40, sigma=0.3, estimator="interp", seed=0, **kw):
    return PgdConfig(T=T, eta=eta, estimator=estimator,
                     perturb=PerturbationConfig(m=m, sigma=sigma, stream=RandomStream(seed)), **kw)


def test_defaults():
    c = PgdConfig()
    assert (c.T, c.perturb.m, c.proj_step, c.proj_iters, c.init) == (250, 1000, 1.0, 100, "zero")


@pytest.mark.parametrize("kw", [dict(T=0), dict(eta=0.0), dict(proj_iters=0), dict(estimator="newton"),
                                dict(init="random"), dict(model_selection="first"),
                                dict(estimator="two_step"),
                                dict(perturb=PerturbationConfig(sigma2=0.1))])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        PgdConfig(**kw)


def test_constant_metric_never_moves(separable_2d):
    ds = separable_2d
    params, trace = surrogate_pgd(ConstantMetric(0.3), [HP, HN], ds, None, _pgd(T=5))
    assert params == ModelParams.zeros(2)
    for rec in trace.records:
        np.testing.assert_array_equal(rec.u_tilde, rec.u)
        assert rec.proj_objective == 0.0
    np.testing.assert_array_equal(stationarity_diagnostic(trace, 0.5), 0.0)


def test_trace_invariants(separable_2d):
    ds = separable_2d
    metric = synthetic_metric(LinearLink([1.0, 1.0]), [HP, HN])
    params, trace = surrogate_pgd(metric, [HP, HN], ds, None, _pgd(T=8))
    assert len(trace) == 8
    for rec in trace.records:
        assert np.all(rec.u >= 0)
        assert np.all(complete_exact_projection(rec.u_next, rec.u_tilde) >= rec.u_next)
    np.testing.assert_array_equal(trace.records[-1].u_next, eval_profile([HP, HN], params, ds))
    assert trace.selected_t == 8


def test_realizability_each_step(separable_2d):
    ds = separable_2d
    metric = synthetic_metric(SoftMaxLink(), [HP, HN])
    _, trace = surrogate_pgd(metric, [HP, HN], ds, None, _pgd(T=6))
    for prev, nxt in zip(trace.records, trace.records[1:]):
        np.testing.assert_array_equal(nxt.u, prev.u_next)
        assert nxt.u.tobytes() == eval_profile([HP, HN], ModelParams.from_vector(nxt.theta), ds).tobytes()


def test_descent_on_separable_data(separable_2d):
    ds = separable_2d
    link = LinearLink([1.0, 1.0])
    metric = synthetic_metric(link, [HP, HN])
    params, trace = surrogate_pgd(metric, [HP, HN], ds, None, _pgd(T=50, eta=0.5, m=50, sigma=0.5))
    start = link.value(eval_profile([HP, HN], ModelParams.zeros(2), ds))[0]
    end = link.value(eval_profile([HP, HN], params, ds))[0]
    assert end <= start - 0.1


def test_model_selection(separable_2d):
    ds = separable_2d
    tr, va = ds.subset(np.arange(0, 100, 2)), ds.subset(np.arange(1, 100, 2))
    metric = synthetic_metric(LinearLink([1.0, 1.0]), [HP, HN])
    p_best, t_best = surrogate_pgd(metric, [HP, HN], tr, va, _pgd(T=10))
    vals = [metric(score(ModelParams.zeros(2), va.features), va)] + [r.val_metric for r in t_best.records]
    assert t_best.selected_t == int(np.argmin(vals))
    assert metric(score(p_best, va.features), va) == min(vals)
    p_last, t_last = surrogate_pgd(metric, [HP, HN], tr, va, _pgd(T=10, model_selection="last"))
    assert t_last.selected_t == 10
    with pytest.raises(ValueError):
        surrogate_pgd(metric, [HP, HN], tr, None, _pgd(T=2, model_selection="best_val_metric"))


def test_estimator_failure_names_iteration():
    r = np.random.default_rng(2)
    n = 80
    y = np.where(np.arange(n) % 2 == 0, 1, -1)
    g = (np.arange(n) // 2) % 2
    ds = make_ds((y * 5.0)[:, None] + 0.1 * r.standard_normal((n, 1)), y, g)
    specs = [SurrogateSpec("hinge", f"group{k}_{s}") for k in (0, 1) for s in ("positives", "negatives")]
    metric = synthetic_metric(LinearLink([1.0] * 4), specs)
    with pytest.raises(EstimatorFailure, match="iteration 1"):
        surrogate_pgd(metric, specs, ds, None, _pgd(T=3, estimator="fd", m=200, sigma=0.1),
                      init=ModelParams(np.array([1.0]), 0.0))


def test_nonfinite_metric_aborts(separable_2d):
    metric = CountingMetric(synthetic_metric(LinearLink([1.0, 1.0]), [HP, HN]), fail_after=3)
    with pytest.raises((EstimatorFailure, FloatingPointError)):
        surrogate_pgd(metric, [HP, HN], separable_2d, None, _pgd(T=5))


def test_logreg_init(separable_2d):
    metric = synthetic_metric(LinearLink([1.0, 1.0]), [HP, HN])
    _, trace = surrogate_pgd(metric, [HP, HN], separable_2d, None, _pgd(T=1, init="logreg"))
    assert np.any(trace.records[0].theta != 0)


def test_deterministic(separable_2d):
    metric = synthetic_metric(SoftMaxLink(), [HP, HN])
    a, ta = surrogate_pgd(metric, [HP, HN], separable_2d, None, _pgd(T=5))
    b, tb = surrogate_pgd(metric, [HP, HN], separable_2d, None, _pgd(T=5))
    assert a == b and ta.to_jsonl() == tb.to_jsonl()


def test_trace_jsonl_fields(separable_2d):
    metric = synthetic_metric(LinearLink([1.0, 1.0]), [HP, HN])
    _, trace = surrogate_pgd(metric, [HP, HN], separable_2d, None, _pgd(T=3))
    lines = trace.to_jsonl().splitlines()
    assert len(lines) == 3
    rec = json.loads(lines[0])
    assert {"t", "theta", "u", "u_tilde", "g_hat", "train_metric", "val_metric", "proj_objective"} <= set(rec)
    assert {"condition_number", "residual_norm", "perturbations_used"} <= set(rec["g_hat"])


def test_affine_metric_rescales_fd_and_doubled_step_matches(separable_2d):
    ds = separable_2d
    specs = [HP, HN]
    base = synthetic_metric(SoftMaxLink(), specs)
    _, t1 = surrogate_pgd(base, specs, ds, None, _pgd(T=6, eta=0.5, m=100, sigma=0.1, estimator="fd"))
    _, t2 = surrogate_pgd(AffineMetric(base, 0.5, 0.1), specs, ds, None,
                          _pgd(T=6, eta=1.0, m=100, sigma=0.1, estimator="fd"))
    for a, b in zip(t1.records, t2.records):
        np.testing.assert_allclose(b.g_hat.g, 0.5 * a.g_hat.g, atol=1e-9)
        np.testing.assert_allclose(b.u_tilde, a.u_tilde, atol=1e-9)
        np.testing.assert_allclose(b.u, a.u, atol=1e-9)


def test_stationarity_diagnostic_cases():
    g = GradientEstimate(np.array([0.2, 0.1]))
    u = np.array([1.0, 1.0])
    u_tilde = u - 0.5 * g.g
    rec = TraceRecord(1, np.zeros(2), u, u_tilde, u_tilde - 0.05, g, 0.0, None, 0.0)
    d = stationarity_diagnostic(PgdTrace([rec]), 0.5)
    assert d[0] == pytest.approx(np.linalg.norm(g.g))
    with pytest.raises(ValueError):
        stationarity_diagnostic(PgdTrace(), 0.5)


@pytest.mark.slow
def test_stationarity_min_decreases_with_T(separable_2d):
    ds = separable_2d
    metric = synthetic_metric(SoftMaxLink(), [HP, HN])
    short, long_ = [], []
    for seed in range(5):
        cfg = _pgd(T=250, eta=0.2, m=30, sigma=0.3, seed=seed, proj_iters=30)
        _, tr = surrogate_pgd(metric, [HP, HN], ds, None, cfg)
        d = stationarity_diagnostic(tr, cfg.eta)
        short.append(d[:50].min())
        long_.append(d.min())
    assert np.mean(long_) <= np.mean(short)
