from types import SimpleNamespace

import numpy as np
import pytest
from scipy import stats
from scipy.linalg import solve_continuous_lyapunov

from ddagossip.analysis import (
    ModelError,
    assumption_checks,
    build_asymptotic_model,
    covariance_report,
    histograms,
    identification_time,
    loglog_slope,
    monte_carlo,
    offmanifold_ratio,
    rate_probe,
    ratio_trend,
    relative_frobenius,
    run_batch,
)
from ddagossip.config import estimation_config
from ddagossip.polyhedron import Polyhedron
from ddagossip.problem import QuadraticEstimationProblem, estimation_problem

P_WORKED = np.array([[0.2, 0.4], [0.4, 0.8]])


def test_worked_instance(unit_problem, triangle):
    model = build_asymptotic_model(unit_problem, triangle)
    assert model.r == 1
    assert np.allclose(model.H, 2 * P_WORKED, atol=1e-14)
    assert np.allclose(model.G, [[2.0]], atol=1e-14)
    assert np.allclose(model.Sigma1, [[1.0]], atol=1e-14)
    assert np.allclose(model.Sigma, P_WORKED, atol=1e-14)
    assert np.allclose(model.Sigma_star, P_WORKED, atol=1e-14)


def test_zero_noise_gives_zero_covariances(triangle):
    prob = QuadraticEstimationProblem([1.0, 2.0], np.eye(2)[None].repeat(3, 0), [0.0, 0.0, 0.0])
    model = build_asymptotic_model(prob, triangle)
    assert not model.Sigma.any() and not model.Sigma_star.any()


def test_unconstrained_reduces_to_sandwich():
    prob = estimation_problem(m=4, rng=8)
    free = Polyhedron(B=[], b=[], d=2)
    model = build_asymptotic_model(prob, free)
    H = prob.hessian_total() / 4
    Sbar = sum(prob.gradient_covariance(j) for j in range(4)) / 16
    Hi = np.linalg.inv(H)
    assert np.allclose(model.Sigma_star, Hi @ Sbar @ Hi, rtol=1e-10)
    assert np.allclose(model.Sigma, solve_continuous_lyapunov(H, Sbar), rtol=1e-10)


def test_covariances_live_on_the_facet(triangle):
    for seed in range(5):
        model = build_asymptotic_model(estimation_problem(m=6, rng=seed, tilt_scale=0.5), triangle)
        for S in (model.Sigma, model.Sigma_star):
            assert np.abs(triangle.B @ S).max() <= 1e-12
            assert np.linalg.eigvalsh(S)[0] >= -1e-12
        assert np.allclose(model.Sigma, model.P_B @ model.Sigma @ model.P_B, atol=1e-14)


def test_model_errors(triangle):
    v = np.array([2.0, -1.0]) / np.sqrt(5)
    flat = QuadraticEstimationProblem([1.0, 2.0], np.outer(v, v)[None], [1.0])
    with pytest.raises(ModelError, match="restricted strong convexity"):
        build_asymptotic_model(flat, triangle)
    off = QuadraticEstimationProblem([3.0, 1.0], np.eye(2)[None], [1.0])
    with pytest.raises(ModelError):
        build_asymptotic_model(off, triangle)
    on_c = QuadraticEstimationProblem([0.0, 0.0], np.eye(2)[None], [1.0])
    with pytest.raises(ModelError):
        build_asymptotic_model(on_c, triangle)


def test_relative_frobenius():
    assert relative_frobenius(np.eye(2), np.eye(2)) == 0.0
    assert relative_frobenius(2 * np.eye(2), np.eye(2)) == pytest.approx(1.0)
    assert relative_frobenius(np.ones((2, 2)), np.zeros((2, 2))) == pytest.approx(2.0)


def test_offmanifold_ratio():
    assert offmanifold_ratio(P_WORKED, P_WORKED) == pytest.approx(0.0, abs=1e-8)
    assert offmanifold_ratio(np.eye(2), P_WORKED) == pytest.approx(1.0)


def test_ks_calibration_on_synthetic_gaussians(unit_problem, triangle):
    model = build_asymptotic_model(unit_problem, triangle)
    rng = np.random.default_rng(21)
    L = model.U.kernel
    pvals = []
    for _ in range(200):
        samples = rng.standard_normal((300, 1)) @ L.T * np.sqrt(model.Sigma1[0, 0])
        rep = covariance_report(model, samples, samples)
        pvals.append(rep.ks_pvalue_active_direction)
        assert rep.offmanifold_std_ratio <= 1e-12
    assert stats.kstest(pvals, "uniform").statistic <= 0.15


def test_report_is_order_independent(unit_problem, triangle):
    model = build_asymptotic_model(unit_problem, triangle)
    rng = np.random.default_rng(0)
    s = rng.standard_normal((50, 2))
    a = covariance_report(model, s, s, keep_samples=False).to_dict()
    perm = rng.permutation(50)
    b = covariance_report(model, s[perm], s[perm], keep_samples=False).to_dict()
    for key in a:
        assert np.allclose(a[key], b[key], rtol=1e-12, atol=1e-14, equal_nan=True) if a[key] is not None \
            else b[key] is None


def test_identification_time(triangle):
    on, off = [1.0, 2.0], [1.0, 1.0]
    traj = SimpleNamespace(k=np.array([1, 2, 3, 4]), xbar=np.array([off, on, off, on]))
    assert identification_time(traj, triangle) == (True, 4)
    traj.xbar = np.array([on, on, on, on])
    assert identification_time(traj, triangle) == (True, 1)
    traj.xbar = np.array([on, on, on, off])
    assert identification_time(traj, triangle) == (False, None)
    # vertex (0, 0): on the B facet but a C row is also tight
    traj.xbar = np.array([on, [0.0, 0.0]] * 2)
    assert identification_time(traj, triangle) == (False, None)
    assert identification_time(SimpleNamespace(k=np.zeros(0), xbar=np.zeros((0, 2))), triangle) == (False, None)


def test_ratio_trend_and_slope():
    k = np.arange(100, 10_001, dtype=float)
    slope, dec = ratio_trend(k, k**-0.3, np.geomspace(100, 10_001, 7))
    assert dec and slope == pytest.approx(-0.3, abs=1e-3)
    slope, dec = ratio_trend(k, np.ones_like(k), np.geomspace(100, 10_001, 7))
    assert not dec
    assert loglog_slope(k, 3.0 / k**1.5, (100, 10_000)) == pytest.approx(-1.5)


def test_rate_probe_precondition():
    cfg = estimation_config(seed=1, steps=500, n_runs=1, problem={"m": 5})
    with pytest.raises(ValueError, match="delta"):
        rate_probe(cfg, delta=0.5)
    with pytest.raises(ValueError):
        rate_probe(cfg, delta=0.0)


def test_rate_probe_noiseless_decreases():
    cfg = estimation_config(seed=1, steps=4000, n_runs=2,
                          problem={"m": 5, "tilt_scale": 0.5, "exact_gradients": True})
    rep = rate_probe(cfg, delta=0.2)
    assert rep.fraction_decreasing == 1.0


def test_monte_carlo_end_to_end_and_parallel_agreement():
    cfg = estimation_config(seed=3, steps=300, n_runs=4, problem={"m": 5, "tilt_scale": 0.5})
    rep = monte_carlo(cfg)
    assert rep.n_runs == 4 and rep.window == 75
    assert rep.empirical_cov_scaled.shape == (2, 2)
    assert 0.0 <= rep.identification_fraction <= 1.0
    serial = run_batch(cfg, 4, n_jobs=1)
    parallel = run_batch(cfg, 4, n_jobs=2)
    for a, b in zip(serial, parallel):
        assert a["run"] == b["run"] and np.array_equal(a["scaled"], b["scaled"])
    rows = histograms(rep, bins=5)
    assert len(rows) == 2 * 2 * 5 and sum(r[4] for r in rows if r[0] == "scaled" and r[1] == 1) == 4
    with pytest.raises(ValueError):
        monte_carlo(cfg, n_runs=1)


def test_assumption_checks():
    names = ["feasibility", "objective function", "weight matrices", "step-size", "sample and sigma-algebra",
             "regularizer", "restricted strong convexity", "constraint qualification",
             "stronger conditions on weight matrix", "stronger conditions on step-size"]
    flat = assumption_checks(estimation_config(seed=0, problem={"m": 5}))
    assert [c.name for c in flat] == names
    cq = flat[names.index("constraint qualification")]
    assert cq.status == "warn" and "degenerate" in cq.message
    tilted = assumption_checks(estimation_config(seed=0, problem={"m": 5, "tilt_scale": 0.5}))
    assert all(c.status == "pass" for c in tilted)
    assert tilted[names.index("constraint qualification")].value == pytest.approx([2.5])
    bc = assumption_checks(estimation_config(seed=0, problem={"m": 5}, scheme={"kind": "broadcast"}))
    assert bc[names.index("stronger conditions on weight matrix")].status == "warn"
