"""Distributed dual averaging (DDA), the projected-gradient baseline (DPG), and trajectories.

One DDA round for agent j at step k:

    x_{j,k} = Q(z_{j,k-1})                                  (Euclidean projection)
    z_{j,k} = sum_i [A_k]_{ji} z_{i,k-1} - alpha_k g_{j,k}   (g: sampled gradient at x_{j,k})

with the network reference sequences zbar_k = mean_j z_{j,k} and
xbar_k = Q(zbar_{k-1}). DPG mixes primal iterates instead:
x_{j,k+1} = P_X(sum_i [A_k]_{ji} x_{i,k} - alpha_k g_{j,k}).
"""

import csv
import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .linalg import projection_matrix

CHUNK = 2048


@dataclass(frozen=True)
class StepSizeSchedule:
    """alpha_k = a / k**alpha_exp."""

    a: float
    alpha_exp: float

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("step-size scale a must be positive")

    def value(self, k):
        return self.a / np.power(k, self.alpha_exp, dtype=float)

    @property
    def asymptotic_ok(self):
        """Exponent inside (2/3, 1), the range the normality theory needs."""
        return 2.0 / 3.0 < self.alpha_exp < 1.0

    @property
    def rate_delta_max(self):
        return 1.0 - 1.0 / (2.0 * self.alpha_exp)


def schedule_value(schedule, k):
    if np.any(np.asarray(k) < 1):
        raise ValueError("step index starts at 1")
    return schedule.value(k)


def record_steps(steps, dense_until=2000, stride=10):
    """Recorded iterations: every step up to ``dense_until``, then every ``stride``; always the last."""
    if steps <= 0:
        return np.zeros(0, dtype=np.int64)
    dense = np.arange(1, min(steps, dense_until) + 1)
    sparse = np.arange(dense_until + stride, steps + 1, stride)
    ks = np.union1d(np.union1d(dense, sparse), [steps])
    return ks.astype(np.int64)


@dataclass
class Trajectory:
    """Recorded quantities of one run, indexed by ``k`` (strictly increasing)."""

    algorithm: str
    k: np.ndarray
    x: np.ndarray
    xbar: np.ndarray
    consensus_error: np.ndarray
    multipliers: np.ndarray
    x_star: np.ndarray
    d1: int
    x_final: np.ndarray
    window_start: int
    window_sum: np.ndarray
    duals: np.ndarray = None
    gradients: np.ndarray = None
    active_tol: float = 1e-6
    B: np.ndarray = field(default=None, repr=False)
    b: np.ndarray = field(default=None, repr=False)
    C: np.ndarray = field(default=None, repr=False)
    c: np.ndarray = field(default=None, repr=False)

    @property
    def dist_to_opt(self):
        return np.linalg.norm(self.x - self.x_star, axis=-1)

    @property
    def lam(self):
        return self.multipliers[:, : self.d1]

    @property
    def mu(self):
        return self.multipliers[:, self.d1 :]

    def active_flags(self, tol=None):
        """(active_B, active_C) boolean arrays for xbar at every record."""
        tol = self.active_tol if tol is None else tol
        act_b = np.abs(self.xbar @ self.B.T - self.b) <= tol
        act_c = np.abs(self.xbar @ self.C.T - self.c) <= tol
        return act_b, act_c

    @property
    def window_count(self):
        last = int(self.k[-1]) if self.k.size else 0
        return max(last - self.window_start + 1, 0)

    def state(self, i):
        """DdaState at record i (needs a run with ``store_duals=True``)."""
        if self.duals is None:
            raise ValueError("trajectory was recorded without dual variables")
        return DdaState(k=int(self.k[i]), z=self.duals[i], x=self.x[i])

    def to_csv(self, fh=None):
        """One row per (record, agent). Active flags refer to xbar."""
        m, d = (self.x.shape[1], self.x.shape[2]) if self.x.ndim == 3 else (0, self.x_star.size)
        act_b, act_c = self.active_flags()
        header = (["k", "agent"] + [f"x{i + 1}" for i in range(d)] + [f"xbar{i + 1}" for i in range(d)]
                  + ["consensus_error", "dist_to_opt"]
                  + [f"active_B{i + 1}" for i in range(act_b.shape[1])]
                  + [f"active_C{i + 1}" for i in range(act_c.shape[1])])
        out = fh if fh is not None else io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(header)
        dist = self.dist_to_opt
        for r, k in enumerate(self.k):
            flags = [int(f) for f in act_b[r]] + [int(f) for f in act_c[r]]
            xb = [repr(float(v)) for v in self.xbar[r]]
            for j in range(m):
                w.writerow([int(k), j + 1] + [repr(float(v)) for v in self.x[r, j]] + xb
                           + [repr(float(self.consensus_error[r])), repr(float(dist[r, j]))] + flags)
        return out.getvalue() if fh is None else None


@dataclass(frozen=True)
class DdaState:
    """Duals entering step k (z_{j,k-1}, one row per agent) and primal iterates x_{j,k}."""

    k: int
    z: np.ndarray
    x: np.ndarray

    @property
    def zbar(self):
        return self.z.mean(axis=0)

    def xbar(self, polyhedron):
        return polyhedron.project(self.zbar).point


def initial_points(init, m, d, rng, per_agent=False):
    """Starting points: an explicit vector or a uniform draw from a box ``[(lo, hi), ...]``."""
    init = np.asarray(init, dtype=float)
    if init.shape == (d,):
        return np.tile(init, (m, 1))
    if init.shape == (m, d):
        return init.copy()
    if init.shape != (d, 2):
        raise ValueError(f"init must be a point of length {d}, an (m, d) array, or a box of shape ({d}, 2)")
    lo, hi = init[:, 0], init[:, 1]
    if per_agent:
        return lo + (hi - lo) * rng.random((m, d))
    return np.tile(lo + (hi - lo) * rng.random(d), (m, 1))


def _simulate(algo, problem, polyhedron, scheme, schedule, steps, init, rng, per_agent_init=False,
              record=None, window_start=None, store_duals=False, active_tol=1e-6):
    if problem.m != scheme.m:
        raise ValueError(f"problem has {problem.m} agents, scheme has {scheme.m}")
    if problem.d != polyhedron.d:
        raise ValueError("problem and constraint set dimensions differ")
    if not 2.0 / 3.0 < schedule.alpha_exp < 1.0:
        warnings.warn(f"step-size exponent {schedule.alpha_exp} lies outside (2/3, 1)", stacklevel=3)
    rng = np.random.default_rng(rng)
    m, d = problem.m, problem.d
    steps = int(steps)
    S = initial_points(init, m, d, rng, per_agent_init)
    gossip_rng, noise_rng = rng.spawn(2)

    A, a = polyhedron.A, polyhedron.a
    n_rows = A.shape[0]
    X = np.empty((m, d))
    warm = np.zeros((m, n_rows), dtype=bool)
    for j in range(m):
        res = polyhedron.project(S[j])
        X[j] = res.point
        warm[j] = res.working_set
    if algo == kernels.DPG:
        S = X.copy()
    first = polyhedron.project(S.mean(axis=0))
    xbar = first.point.copy()
    warm_bar = first.working_set.copy()

    rec_k = record_steps(steps) if record is None else np.asarray(record, dtype=np.int64)
    rec_k = rec_k[(rec_k >= 1) & (rec_k <= steps)]
    if rec_k.size > 1 and np.any(np.diff(rec_k) <= 0):
        raise ValueError("record indices must be strictly increasing")
    n_rec = rec_k.size
    rec_x = np.zeros((n_rec, m, d))
    rec_xbar = np.zeros((n_rec, d))
    rec_mult = np.zeros((n_rec, n_rows))
    rec_cons = np.zeros(n_rec)
    rec_s = np.zeros((n_rec if store_duals else 0, m, d))
    rec_g = np.zeros((n_rec if store_duals else 0, m, d))
    win_start = steps + 1 if window_start is None else int(window_start)
    win_sum = np.zeros((m, d))

    Lf, R, sig, tilt, xstar = problem.noise_arrays()
    W = scheme.matrix if scheme.matrix is not None else np.zeros((m, m))
    rec_pos = 0
    k0 = 1
    while k0 <= steps:
        n = min(CHUNK, steps - k0 + 1)
        choices = scheme.draw_choices(gossip_rng, n)
        if problem.exact_gradients:
            eps = np.zeros((n, m, d))
            eta = np.zeros((n, m))
        else:
            eps = noise_rng.standard_normal((n, m, d))
            eta = noise_rng.standard_normal((n, m))
        rec_pos, fail = kernels.simulate_chunk(
            algo, S, X, warm, xbar, warm_bar, A, a, Lf, R, sig, tilt, xstar, problem.exact_gradients,
            scheme.kind_code, scheme.edges, scheme.nbr_ptr, scheme.nbr_idx, float(scheme.mix), W,
            choices, eps, eta, k0, float(schedule.a), float(schedule.alpha_exp),
            rec_k, rec_pos, rec_x, rec_xbar, rec_mult, rec_cons, store_duals, rec_s, rec_g,
            win_start, win_sum, polyhedron.tol, polyhedron.max_iter,
        )
        if fail:
            from .polyhedron import ProjectionError

            raise ProjectionError(f"projection failed at iteration k={fail}")
        k0 += n

    return Trajectory(
        algorithm="dda" if algo == kernels.DDA else "dpg",
        k=rec_k,
        x=rec_x,
        xbar=rec_xbar,
        consensus_error=rec_cons,
        multipliers=rec_mult / polyhedron._norms,
        x_star=problem.x_star.copy(),
        d1=polyhedron.d1,
        x_final=X.copy(),
        window_start=win_start,
        window_sum=win_sum,
        duals=rec_s if store_duals else None,
        gradients=rec_g if store_duals else None,
        active_tol=active_tol,
        B=polyhedron.B,
        b=polyhedron.b,
        C=polyhedron.C,
        c=polyhedron.c,
    )


def dda_run(problem, polyhedron, scheme, schedule, steps, init, rng, **kwargs):
    """Run distributed dual averaging. Duals start at the (common or per-agent) initial points."""
    return _simulate(kernels.DDA, problem, polyhedron, scheme, schedule, steps, init, rng, **kwargs)


def dpg_run(problem, polyhedron, scheme, schedule, steps, init, rng, **kwargs):
    """Run the distributed projected stochastic gradient baseline."""
    return _simulate(kernels.DPG, problem, polyhedron, scheme, schedule, steps, init, rng, **kwargs)


@dataclass(frozen=True)
class Decomposition:
    zeta: np.ndarray
    eta: np.ndarray
    s: np.ndarray
    eps: np.ndarray
    residual: np.ndarray
    delta: np.ndarray
    delta_next: np.ndarray


def error_decomposition(problem, polyhedron, state, next_state, gradients, alpha, scheme=None):
    """Split Delta_{k+1} - Delta_k with Delta_k = P_B(xbar_k - x*).

    Returns the terms of
        Delta_{k+1} = Delta_k - alpha H Delta_k + alpha (zeta + eta + s + eps)
    evaluated from exact gradients, the Hessian at x*, and the C-block
    multipliers of the two xbar projections, together with the residual of
    that identity. Only valid for doubly stochastic mixing.
    """
    if scheme is not None and not scheme.doubly_stochastic:
        raise ValueError("the recursion needs doubly stochastic weight matrices")
    m = problem.m
    x_star = problem.x_star
    P = projection_matrix(polyhedron.B, d=polyhedron.d)
    hess = problem.hessian_total()
    H = P @ hess @ P / m

    res_k = polyhedron.project(state.zbar)
    res_k1 = polyhedron.project(next_state.zbar, warm=res_k)
    xb = res_k.point
    e = xb - x_star
    delta = P @ e
    delta_next = P @ (res_k1.point - x_star)

    zeta = -P @ (problem.total_gradient(xb) - problem.total_gradient(x_star) - hess @ e) / m
    eta = sum(P @ (problem.true_gradient(j, xb) - problem.true_gradient(j, state.x[j])) for j in range(m)) / m
    noise = np.asarray(gradients) - np.stack([problem.true_gradient(j, state.x[j]) for j in range(m)])
    s = -P @ noise.sum(axis=0) / m
    eps = P @ polyhedron.C.T @ (res_k.mu - res_k1.mu) / alpha if polyhedron.d2 else np.zeros_like(delta)
    eps = eps + P @ hess @ (P - np.eye(polyhedron.d)) @ e / m
    predicted = delta - alpha * H @ delta + alpha * (zeta + eta + s + eps)
    return Decomposition(zeta=zeta, eta=eta, s=s, eps=eps, residual=delta_next - predicted,
                         delta=delta, delta_next=delta_next)
