import numpy as np
import pytest

from ddagossip.problem import QuadraticEstimationProblem, facet_tilt, generate_instance, estimation_problem
from oracles import fd_gradient, fd_hessian


def _draws(prob, j, x, n, seed):
    rng = np.random.default_rng(seed)
    return np.array([prob.sample_gradient(j, x, rng) for _ in range(n)])


def test_sampled_gradient_unbiased():
    prob = estimation_problem(m=4, rng=3, tilt_scale=0.5)
    rng = np.random.default_rng(0)
    n = 20_000
    for p in range(20):
        j = int(rng.integers(prob.m))
        x = rng.uniform(-3, 6, size=2)
        G = _draws(prob, j, x, n, seed=100 + p)
        se = G.std(axis=0, ddof=1) / np.sqrt(n)
        assert np.all(np.abs(G.mean(axis=0) - prob.true_gradient(j, x)) <= 4 * se)


def test_gradient_covariance_diag_example(unit_problem):
    # R = I, s = 1: Cov(2 u (u^T e - v)) at e = 0 is 4 I
    assert np.array_equal(unit_problem.gradient_covariance(0), 4.0 * np.eye(2))
    n = 100_000
    G = _draws(unit_problem, 0, unit_problem.x_star, n, seed=1)
    C = np.cov(G, rowvar=False)
    se = np.sqrt(128.0 / n)
    assert np.all(np.abs(C - 4.0 * np.eye(2)) <= 5 * se)


def test_gradient_covariance_general():
    prob = estimation_problem(m=3, rng=5)
    n = 100_000
    G = _draws(prob, 1, prob.x_star, n, seed=2)
    ref = prob.gradient_covariance(1)
    assert np.abs(np.cov(G, rowvar=False) - ref).max() <= 0.05 * np.abs(ref).max() + 0.01


def test_true_gradient_and_hessian_by_finite_differences():
    prob = estimation_problem(m=3, rng=7, tilt_scale=0.5)
    rng = np.random.default_rng(1)
    for _ in range(10):
        x = rng.uniform(-5, 5, size=2)
        for j in range(prob.m):
            assert np.allclose(prob.true_gradient(j, x), fd_gradient(lambda y: prob.objective(j, y), x), atol=1e-6)
        assert np.allclose(prob.total_gradient(x), fd_gradient(prob.total_objective, x), atol=1e-5)
        assert np.allclose(prob.hessian_total(x), fd_hessian(prob.total_objective, x), atol=1e-4)


def test_pinned_noise_gives_exact_gradient_formula(unit_problem):
    rng = np.random.default_rng(4)
    g = unit_problem.sample_gradient(0, unit_problem.x_star, rng, v=0.0)
    assert np.array_equal(g, np.zeros(2))


def test_generate_instance_is_deterministic_and_psd():
    a = generate_instance(6, 3, np.zeros(3), 11)
    b = generate_instance(6, 3, np.zeros(3), 11)
    assert np.array_equal(a.R_u, b.R_u) and np.array_equal(a.sigma_v2, b.sigma_v2)
    for R in a.R_u:
        assert np.allclose(R, R.T) and np.linalg.eigvalsh(R)[0] >= -1e-12
    assert np.all((a.sigma_v2 >= 0.1) & (a.sigma_v2 <= 0.5))


def test_margin_resampling():
    B = np.array([[1.0, 0.0, 0.0]])
    prob = generate_instance(1, 3, np.zeros(3), 0, B=B, min_margin=0.5)
    assert prob.restricted_margin(B) >= 0.5
    with pytest.raises(RuntimeError):
        generate_instance(1, 3, np.zeros(3), 0, B=B, min_margin=1e6, max_tries=5)


def test_facet_tilt_direction():
    t = facet_tilt([[-2.0, 1.0]], 0.5)
    assert np.allclose(t, [1.0, -0.5])
    prob = estimation_problem(m=5, rng=1, tilt_scale=0.5)
    # -grad F(x*) = m * 0.5 * B^T 1 points out of the set through the facet
    assert np.allclose(-prob.total_gradient(prob.x_star), 2.5 * np.array([-2.0, 1.0]))


def test_validation():
    with pytest.raises(ValueError):
        QuadraticEstimationProblem(x_star=[0.0, 0.0], R_u=np.eye(3)[None], sigma_v2=[1.0])
    with pytest.raises(ValueError):
        QuadraticEstimationProblem(x_star=[0.0, 0.0], R_u=-np.eye(2)[None], sigma_v2=[1.0])
    with pytest.raises(ValueError):
        QuadraticEstimationProblem(x_star=[0.0, 0.0], R_u=np.eye(2)[None], sigma_v2=[-1.0])
    with pytest.raises(ValueError):
        QuadraticEstimationProblem(x_star=[0.0, 0.0], R_u=np.array([[[1.0, 1.0], [0.0, 1.0]]]), sigma_v2=[1.0])
