import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddagossip.polyhedron import InfeasibleSetError, Polyhedron, ProjectionError
from oracles import kkt_projection, random_feasible_polyhedron

coord = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
points = st.tuples(coord, coord).map(np.array)


def _kkt_ok(poly, z, res, tol=1e-9):
    x = res.point
    stat = x - z + poly.B.T @ res.lam + poly.C.T @ res.mu
    scale = 1.0 + np.linalg.norm(z)
    assert np.linalg.norm(stat) <= tol * scale
    assert poly.contains(x, tol * scale)
    assert np.all(res.lam >= 0) and np.all(res.mu >= 0)
    if poly.d1:
        assert np.all(np.abs(res.lam * (poly.B @ x - poly.b)) <= tol * scale * (1 + res.lam))
    if poly.d2:
        assert np.all(np.abs(res.mu * (poly.C @ x - poly.c)) <= tol * scale * (1 + res.mu))


def test_interior_point_is_fixed(triangle):
    res = triangle.project([1.0, 1.0])
    assert np.allclose(res.point, [1.0, 1.0])
    assert not res.lam.any() and not res.mu.any()


def test_facet_projection_worked_instance(triangle):
    res = triangle.project([-1.0, 1.0])
    assert np.allclose(res.point, [0.2, 0.4], atol=1e-14)
    assert res.lam == pytest.approx([0.6], abs=1e-14)
    assert np.allclose(res.mu, 0.0)
    x_ref, mult_ref = kkt_projection(np.vstack([triangle.B, triangle.C]), np.r_[triangle.b, triangle.c],
                                     np.array([-1.0, 1.0]))
    assert np.allclose(res.point, x_ref) and np.allclose(np.r_[res.lam, res.mu], mult_ref)


def test_optimum_projects_to_itself(triangle):
    res = triangle.project([1.0, 2.0])
    assert np.allclose(res.point, [1.0, 2.0])
    assert res.lam == pytest.approx([0.0], abs=1e-14)


def test_vertices(triangle):
    res = triangle.project([6.0, 20.0])
    assert np.allclose(res.point, [5.0, 10.0])
    assert res.lam == pytest.approx([10.0]) and res.mu == pytest.approx([21.0, 0.0])
    res = triangle.project([-5.0, -5.0])
    assert np.allclose(res.point, [0.0, 0.0], atol=1e-14)
    _kkt_ok(triangle, np.array([-5.0, -5.0]), res)


def test_contains_and_active_set(triangle):
    assert triangle.contains([1.0, 2.0], 1e-9)
    assert not triangle.contains([0.0, 1.0], 0.0)
    assert triangle.contains([5.0, 10.0], 0.0)
    b, c = triangle.active_set([1.0, 2.0], 1e-6)
    assert b.tolist() == [0] and c.tolist() == []
    b, c = triangle.active_set([3.0, 1.0], 1e-6)
    assert b.size == 0 and c.size == 0
    b, c = triangle.active_set([5.0, 10.0], 1e-6)
    assert b.size + c.size == 2


def test_fenchel_coupling(triangle):
    assert triangle.fenchel_coupling([1.0, 1.0], [1.0, 1.0]) == pytest.approx(0.0, abs=1e-14)
    assert triangle.fenchel_coupling([1.0, 2.0], [1.0, 2.0]) == pytest.approx(0.0, abs=1e-14)
    val = triangle.fenchel_coupling([1.0, 2.0], [-1.0, 1.0])
    assert val >= 0.5 * np.sum((np.array([1.0, 2.0]) - [0.2, 0.4]) ** 2) - 1e-12
    # direct evaluation: psi(x) + <z, q> - psi(q) - <x, z> with q = (0.2, 0.4)
    assert val == pytest.approx(2.5 + (-0.2 + 0.4) - 0.1 - 1.0)
    with pytest.raises(ValueError):
        triangle.fenchel_coupling([0.0, 1.0], [0.0, 0.0])


@given(points, points)
@settings(max_examples=300, deadline=None)
def test_fenchel_lower_bound(x_raw, z):
    poly = Polyhedron(B=[[-2.0, 1.0]], b=[0.0], C=[[1.0, 0.0], [0.0, -1.0]], c=[5.0, 0.0])
    x = poly.project(x_raw).point
    q = poly.project(z).point
    assert poly.fenchel_coupling(x, z, tol=1e-8) >= 0.5 * np.sum((x - q) ** 2) - 1e-8 * (1 + np.sum(z**2))


@given(points)
@settings(max_examples=300, deadline=None)
def test_projection_kkt_and_idempotent(z):
    poly = Polyhedron(B=[[-2.0, 1.0]], b=[0.0], C=[[1.0, 0.0], [0.0, -1.0]], c=[5.0, 0.0])
    res = poly.project(z)
    _kkt_ok(poly, z, res)
    again = poly.project(res.point)
    assert np.allclose(again.point, res.point, atol=1e-12)


def test_nonexpansive_random_pairs(triangle):
    rng = np.random.default_rng(0)
    z1 = rng.uniform(-20, 20, size=(10_000, 2))
    z2 = rng.uniform(-20, 20, size=(10_000, 2))
    for a, b in zip(z1, z2):
        pa, pb = triangle.project(a).point, triangle.project(b).point
        assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-12


def test_warm_start_agrees_with_cold(triangle):
    rng = np.random.default_rng(1)
    prev = triangle.project([0.0, 0.0])
    for z in rng.uniform(-10, 10, size=(2000, 2)):
        cold = triangle.project(z)
        warm = triangle.project(z, warm=prev)
        assert np.allclose(cold.point, warm.point, atol=1e-12)
        assert np.allclose(cold.lam, warm.lam, atol=1e-10) and np.allclose(cold.mu, warm.mu, atol=1e-10)
        prev = warm


def test_oracle_equivalence_random_polyhedra():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        A, a, x0 = random_feasible_polyhedron(rng)
        d1 = int(rng.integers(0, A.shape[0] + 1))
        poly = Polyhedron(A[:d1], a[:d1], A[d1:], a[d1:], d=A.shape[1])
        z = x0 + 3.0 * rng.standard_normal(A.shape[1])
        res = poly.project(z)
        x_ref, mult_ref = kkt_projection(A, a, z)
        assert np.abs(res.point - x_ref).max() <= 1e-8
        assert np.abs(np.r_[res.lam, res.mu] - mult_ref).max() <= 1e-6
        _kkt_ok(poly, z, res, tol=1e-8)


def test_empty_set_rejected():
    with pytest.raises(InfeasibleSetError):
        Polyhedron(B=[[1.0]], b=[0.0], C=[[-1.0]], c=[-1.0])


def test_dimension_checks():
    with pytest.raises(ValueError):
        Polyhedron(B=[[1.0, 0.0]], b=[0.0], C=[[1.0, 0.0, 0.0]], c=[1.0])
    with pytest.raises(ValueError):
        Polyhedron(B=[[1.0, 0.0]], b=[0.0, 1.0])
    with pytest.raises(ValueError):
        Polyhedron(B=[], b=[])


def test_unconstrained_projection_is_identity():
    poly = Polyhedron(B=[], b=[], d=3)
    z = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(poly.project(z).point, z)


def test_iteration_cap_reports_state(triangle):
    capped = Polyhedron(triangle.B, triangle.b, triangle.C, triangle.c, max_iter=1)
    with pytest.raises(ProjectionError) as err:
        capped.project([40.0, -30.0])
    assert err.value.z is not None and err.value.working_set is not None


def test_arrays_are_read_only(triangle):
    with pytest.raises(ValueError):
        triangle.B[0, 0] = 1.0
