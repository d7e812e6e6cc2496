"""Asymptotic covariance model, Monte Carlo batches and statistical diagnostics."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .algorithms import dda_run, dpg_run
from .linalg import SubspaceBasis, lyapunov_solve, null_space_basis, projection_matrix, pseudo_inverse


class ModelError(ValueError):
    pass


class ReplicationError(RuntimeError):
    def __init__(self, message, run=None, seed=None):
        super().__init__(message)
        self.run = run
        self.seed = seed


@dataclass(frozen=True)
class AsymptoticModel:
    P_B: np.ndarray
    U: SubspaceBasis
    r: int
    H: np.ndarray
    G: np.ndarray
    Sigma_bar: np.ndarray
    Sigma1: np.ndarray
    Sigma: np.ndarray
    Sigma_star: np.ndarray

    @property
    def u1(self):
        """First basis vector of {Bx = 0}: the direction the limit law lives on."""
        return self.U.kernel[:, 0] if self.r else np.zeros(self.P_B.shape[0])

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("P_B", "H", "G", "Sigma_bar", "Sigma1", "Sigma", "Sigma_star")} | {
            "r": self.r, "U": self.U.U.tolist()}


def build_asymptotic_model(problem, polyhedron, x_star=None, tol=1e-8):
    """Sigma (scaled last iterate) and Sigma* (averaged iterates) at the constrained optimum.

    Sigma_bar = (1/m^2) sum_j Cov(grad F_j(x*)), H = P_B hess P_B / m,
    G = U_r^T H U_r. Sigma1 solves G S + S G^T = U_r^T P_B Sigma_bar P_B U_r
    and Sigma = U_r Sigma1 U_r^T; Sigma* = H^+ P_B Sigma_bar P_B H^+.
    """
    x_star = problem.x_star if x_star is None else np.asarray(x_star, dtype=float)
    if polyhedron.d1 and np.max(np.abs(polyhedron.B @ x_star - polyhedron.b)) > tol:
        raise ModelError("B rows must all be active at x_star")
    if polyhedron.d2 and np.max(polyhedron.C @ x_star - polyhedron.c) >= -tol:
        raise ModelError("C rows must all be strictly inactive at x_star")
    m, d = problem.m, problem.d
    P = projection_matrix(polyhedron.B, d=d)
    H = P @ problem.hessian_total(x_star) @ P / m
    H = 0.5 * (H + H.T)
    basis = null_space_basis(polyhedron.B, d=d)
    r = basis.r
    Ur = basis.kernel
    G = Ur.T @ H @ Ur
    if r and np.linalg.eigvalsh(0.5 * (G + G.T))[0] <= tol:
        raise ModelError("restricted strong convexity fails: the Hessian is not positive definite on {Bx = 0}")
    Sbar = sum(problem.gradient_covariance(j, x_star) for j in range(m)) / m**2
    M = Ur.T @ P @ Sbar @ P @ Ur
    Sigma1 = lyapunov_solve(G, M) if r else np.zeros((0, 0))
    Sigma = Ur @ Sigma1 @ Ur.T
    Hp = pseudo_inverse(H)
    Sigma_star = Hp @ P @ Sbar @ P @ Hp
    return AsymptoticModel(P_B=P, U=basis, r=r, H=H, G=G, Sigma_bar=Sbar, Sigma1=Sigma1,
                           Sigma=0.5 * (Sigma + Sigma.T), Sigma_star=0.5 * (Sigma_star + Sigma_star.T))


def relative_frobenius(emp, model):
    """||emp - model||_F / ||model||_F, or the absolute error when the model is zero."""
    den = np.linalg.norm(model)
    err = np.linalg.norm(emp - model)
    return float(err / den) if den > 0 else float(err)


def identification_time(traj, polyhedron, tol=1e-6):
    """(found, K): smallest recorded K after which xbar sits on {Bx = b} with every C row slack."""
    xb = traj.xbar
    if xb.shape[0] == 0:
        return False, None
    on_b = np.all(np.abs(xb @ polyhedron.B.T - polyhedron.b) <= tol, axis=1) if polyhedron.d1 else np.ones(len(xb), bool)
    off_c = np.all(polyhedron.c - xb @ polyhedron.C.T > tol, axis=1) if polyhedron.d2 else np.ones(len(xb), bool)
    good = on_b & off_c
    if not good[-1]:
        return False, None
    bad = np.flatnonzero(~good)
    first = 0 if bad.size == 0 else bad[-1] + 1
    return True, int(traj.k[first])


@dataclass(frozen=True)
class CovarianceReport:
    n_runs: int
    agent: int
    k_final: int
    alpha_final: float
    window: int
    empirical_cov_scaled: np.ndarray
    empirical_cov_averaged: np.ndarray
    mean_scaled: np.ndarray
    mean_averaged: np.ndarray
    Sigma: np.ndarray
    Sigma_star: np.ndarray
    rel_frobenius_error_Sigma: float
    rel_frobenius_error_SigmaStar: float
    ks_statistic: float
    ks_pvalue_active_direction: float
    offmanifold_std_ratio: float
    identification_fraction: float
    median_identification_time: float
    xbar_rel_frobenius_error_Sigma: float = float("nan")
    scaled_samples: np.ndarray = None
    averaged_samples: np.ndarray = None

    def to_dict(self):
        out = {}
        for k, v in self.__dict__.items():
            if k.endswith("_samples"):
                continue
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        for k, v in out.items():
            if isinstance(v, float) and not np.isfinite(v):
                out[k] = None
        return out


def _cov(samples):
    if samples.shape[0] < 2:
        return np.zeros((samples.shape[1], samples.shape[1]))
    return np.atleast_2d(np.cov(samples, rowvar=False))


def ks_along(samples, direction, variance):
    """One-sample KS test of <sample, direction> against N(0, variance)."""
    proj = samples @ direction
    if variance <= 0:
        same = bool(np.all(proj == 0.0))
        return (0.0, 1.0) if same else (1.0, 0.0)
    res = stats.kstest(proj / np.sqrt(variance), "norm")
    return float(res.statistic), float(res.pvalue)


def offmanifold_ratio(cov, P_B):
    """Std of the error off {Bx = 0} over its std on it."""
    on = np.trace(P_B @ cov @ P_B)
    Q = np.eye(P_B.shape[0]) - P_B
    off = np.trace(Q @ cov @ Q)
    if on <= 0:
        return 0.0 if off <= 0 else float("inf")
    return float(np.sqrt(max(off, 0.0) / on))


def covariance_report(model, scaled, averaged, found=None, K=None, agent=1, k_final=0, alpha_final=float("nan"),
                      window=0, xbar_scaled=None, keep_samples=True):
    """Statistics of a batch; the inputs are rows of per-replication samples."""
    scaled = np.asarray(scaled, dtype=float)
    averaged = np.asarray(averaged, dtype=float)
    n = scaled.shape[0]
    C = _cov(scaled)
    Ca = _cov(averaged)
    var1 = float(model.u1 @ model.Sigma @ model.u1)
    ks_stat, ks_p = ks_along(scaled, model.u1, var1)
    found = np.ones(n, bool) if found is None else np.asarray(found, bool)
    times = [k for f, k in zip(found, K if K is not None else [None] * n) if f and k is not None]
    xb_err = relative_frobenius(_cov(np.asarray(xbar_scaled)), model.Sigma) if xbar_scaled is not None else float("nan")
    return CovarianceReport(
        n_runs=n, agent=agent, k_final=int(k_final), alpha_final=float(alpha_final), window=int(window),
        empirical_cov_scaled=C, empirical_cov_averaged=Ca,
        mean_scaled=scaled.mean(axis=0), mean_averaged=averaged.mean(axis=0),
        Sigma=model.Sigma, Sigma_star=model.Sigma_star,
        rel_frobenius_error_Sigma=relative_frobenius(C, model.Sigma),
        rel_frobenius_error_SigmaStar=relative_frobenius(Ca, model.Sigma_star),
        ks_statistic=ks_stat, ks_pvalue_active_direction=ks_p,
        offmanifold_std_ratio=offmanifold_ratio(C, model.P_B),
        identification_fraction=float(found.mean()) if n else 0.0,
        median_identification_time=float(np.median(times)) if times else float("nan"),
        xbar_rel_frobenius_error_Sigma=xb_err,
        scaled_samples=scaled if keep_samples else None,
        averaged_samples=averaged if keep_samples else None,
    )


def _runner(config):
    return dpg_run if config.algorithm == "dpg" else dda_run


def window_start(config):
    """First step of the averaging window: the last ``window_fraction`` of the horizon."""
    length = max(int(round(config.steps * config.analysis["window_fraction"])), 1)
    return config.steps - length + 1


def replicate(config, run, experiment=None):
    """One seeded replication; returns the per-run statistics only."""
    exp = config.build() if experiment is None else experiment
    seed = config.run_seed(run)
    K = config.steps
    w0 = window_start(config)
    traj = _runner(config)(exp.problem, exp.polyhedron, exp.scheme, exp.schedule, K, config.init_spec,
                           np.random.default_rng(seed), per_agent_init=config.init["per_agent"],
                           record=config.record_steps(), window_start=w0,
                           active_tol=config.tolerances["active"])
    j = config.agent - 1
    x_star = exp.problem.x_star
    alpha = exp.schedule.value(K)
    found, Kid = identification_time(traj, exp.polyhedron, config.tolerances["active"])
    count = traj.window_count
    return {
        "run": int(run),
        "scaled": (traj.x[-1, j] - x_star) / np.sqrt(alpha),
        "averaged": (traj.window_sum[j] - count * x_star) / np.sqrt(count),
        "xbar_scaled": (traj.xbar[-1] - x_star) / np.sqrt(alpha),
        "found": found,
        "K": Kid,
    }


def _replicate_safe(args):
    config, run = args
    try:
        return replicate(config, run)
    except Exception as exc:
        seed = config.run_seed(run)
        raise ReplicationError(f"replication {run} (seed entropy={seed.entropy}, spawn_key={seed.spawn_key}) "
                               f"failed: {exc}", run=run, seed=seed) from exc


def run_batch(config, n_runs=None, n_jobs=None):
    """Per-replication results sorted by run id, independent of scheduling."""
    n_runs = config.n_runs if n_runs is None else int(n_runs)
    if n_runs < 1:
        raise ValueError("need at least one replication")
    n_jobs = config.analysis["n_jobs"] if n_jobs is None else n_jobs
    jobs = [(config, r) for r in range(n_runs)]
    if n_jobs and n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_replicate_safe, jobs, chunksize=max(1, n_runs // (4 * n_jobs))))
    else:
        exp = config.build()
        results = []
        for cfg, r in jobs:
            try:
                results.append(replicate(cfg, r, exp))
            except Exception as exc:
                seed = cfg.run_seed(r)
                raise ReplicationError(f"replication {r} (seed entropy={seed.entropy}, spawn_key={seed.spawn_key}) "
                                       f"failed: {exc}", run=r, seed=seed) from exc
    return sorted(results, key=lambda res: res["run"])


def summarize(config, results, model=None, keep_samples=True):
    results = sorted(results, key=lambda res: res["run"])
    if model is None:
        exp = config.build()
        model = build_asymptotic_model(exp.problem, exp.polyhedron)
    schedule = config.build_schedule()
    return covariance_report(
        model,
        np.array([r["scaled"] for r in results]),
        np.array([r["averaged"] for r in results]),
        found=[r["found"] for r in results],
        K=[r["K"] for r in results],
        agent=config.agent,
        k_final=config.steps,
        alpha_final=schedule.value(config.steps) if config.steps else float("nan"),
        window=config.steps - window_start(config) + 1,
        xbar_scaled=np.array([r["xbar_scaled"] for r in results]),
        keep_samples=keep_samples,
    )


def monte_carlo(config, n_runs=None, n_jobs=None):
    """Seeded batch of runs and its covariance report against the asymptotic model."""
    n = config.n_runs if n_runs is None else n_runs
    if n < 2:
        raise ValueError("a Monte Carlo batch needs n_runs >= 2")
    exp = config.build()
    model = build_asymptotic_model(exp.problem, exp.polyhedron)
    return summarize(config, run_batch(config, n, n_jobs), model)


def histograms(report, bins=40):
    """Rows (statistic, component, left, right, count, model_density) for both statistics."""
    rows = []
    for name, samples, cov in (("scaled", report.scaled_samples, report.Sigma),
                               ("averaged", report.averaged_samples, report.Sigma_star)):
        if samples is None:
            continue
        for c in range(samples.shape[1]):
            counts, edges = np.histogram(samples[:, c], bins=bins)
            centers = 0.5 * (edges[:-1] + edges[1:])
            var = cov[c, c]
            dens = stats.norm.pdf(centers, scale=np.sqrt(var)) if var > 0 else np.zeros_like(centers)
            rows.extend((name, c + 1, float(lo), float(hi), int(n), float(p))
                        for lo, hi, n, p in zip(edges[:-1], edges[1:], counts, dens))
    return rows


@dataclass(frozen=True)
class RateReport:
    delta: float
    n_reps: int
    slopes: np.ndarray
    decreasing: np.ndarray
    tail_max: np.ndarray
    window_edges: np.ndarray

    @property
    def fraction_decreasing(self):
        return float(np.mean(self.decreasing)) if self.n_reps else 0.0

    def to_dict(self):
        return {"delta": self.delta, "n_reps": self.n_reps, "fraction_decreasing": self.fraction_decreasing,
                "slopes": self.slopes.tolist(), "decreasing": self.decreasing.tolist(),
                "tail_max": self.tail_max.tolist(), "window_edges": self.window_edges.tolist()}


def ratio_trend(k, ratio, edges):
    """Slope of log(window median) against log(window centre); (slope, decreasing)."""
    meds, centers = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (k >= lo) & (k < hi)
        if np.any(sel):
            meds.append(np.median(ratio[sel]))
            centers.append(np.sqrt(lo * hi))
    meds = np.asarray(meds)
    if meds.size < 2:
        return float("nan"), False
    if meds[-1] == 0.0:
        return float("-inf"), True
    tiny = np.finfo(float).tiny
    slope = np.polyfit(np.log(centers), np.log(np.maximum(meds, tiny)), 1)[0]
    return float(slope), bool(slope < 0)


def rate_probe(config, delta=None, n_reps=None):
    """Trend of ||P_B(xbar_k - x*)|| / alpha_k^delta over geometric windows of the tail."""
    delta = config.analysis["delta"] if delta is None else float(delta)
    exp = config.build()
    a_exp = exp.schedule.alpha_exp
    upper = 1.0 - 1.0 / (2.0 * a_exp)
    if not 0.0 < delta < upper:
        raise ValueError(f"delta must lie in (0, {upper:.4f}) for alpha_exp = {a_exp}")
    n_reps = config.n_runs if n_reps is None else int(n_reps)
    k_min = config.analysis["rate_k_min"]
    if config.steps <= k_min:
        raise ValueError("steps must exceed analysis.rate_k_min")
    edges = np.geomspace(k_min, config.steps + 1, config.analysis["rate_windows"] + 1)
    P = projection_matrix(exp.polyhedron.B, d=exp.problem.d)
    floor = 1e-12 * (1.0 + np.linalg.norm(exp.problem.x_star))
    slopes, dec, tmax = [], [], []
    for r in range(n_reps):
        traj = _runner(config)(exp.problem, exp.polyhedron, exp.scheme, exp.schedule, config.steps,
                               config.init_spec, np.random.default_rng(config.run_seed(r)),
                               per_agent_init=config.init["per_agent"], record=config.record_steps())
        k = traj.k.astype(float)
        err = np.linalg.norm((traj.xbar - exp.problem.x_star) @ P, axis=1)
        # errors at roundoff level are zeros; dividing them by alpha^delta would fake a rising trend
        err[err <= floor] = 0.0
        ratio = err / exp.schedule.value(k) ** delta
        s, ok = ratio_trend(k, ratio, edges)
        slopes.append(s)
        dec.append(ok)
        tmax.append(float(ratio[k >= edges[-2]].max()))
    return RateReport(delta, n_reps, np.array(slopes), np.array(dec, bool), np.array(tmax), edges)


def consensus_curve(config, n_reps=None, k_range=(100, 10_000), n_points=60):
    """Replication-averaged sum_j ||z_j - zbar||^2 on log-spaced steps; returns (k, mean)."""
    exp = config.build()
    n_reps = config.n_runs if n_reps is None else int(n_reps)
    steps = int(k_range[1])
    ks = np.unique(np.geomspace(1, steps, n_points * 3).astype(np.int64))
    acc = np.zeros(ks.size)
    for r in range(n_reps):
        traj = _runner(config)(exp.problem, exp.polyhedron, exp.scheme, exp.schedule, steps, config.init_spec,
                               np.random.default_rng(config.run_seed(r)),
                               per_agent_init=config.init["per_agent"], record=ks)
        acc += traj.consensus_error
    return ks, acc / n_reps


def loglog_slope(k, y, k_range):
    sel = (k >= k_range[0]) & (k <= k_range[1]) & (y > 0)
    return float(np.polyfit(np.log(k[sel]), np.log(y[sel]), 1)[0])


def consensus_slope(config, n_reps=None, k_range=(100, 10_000)):
    k, y = consensus_curve(config, n_reps, k_range)
    return loglog_slope(k, y, k_range)


@dataclass(frozen=True)
class CheckResult:
    name: str
    status: str
    value: object
    message: str

    def line(self):
        return f"{self.status.upper():4s}  {self.name}: {self.message}"


def constraint_qualification(problem, polyhedron, x_star=None, tol=1e-8):
    """Multipliers lambda >= 0 with B^T lambda = -grad f(x*); returns (lam, residual)."""
    x_star = problem.x_star if x_star is None else x_star
    g = problem.total_gradient(x_star)
    if polyhedron.d1 == 0:
        return np.zeros(0), float(np.linalg.norm(g))
    lam, *_ = np.linalg.lstsq(polyhedron.B.T, -g, rcond=None)
    return lam, float(np.linalg.norm(polyhedron.B.T @ lam + g))


def assumption_checks(config, experiment=None, mixing=None):
    """Evaluate each checkable standing assumption; structural failures raise earlier, in the builders."""
    from .network import mixing_report

    exp = config.build() if experiment is None else experiment
    prob, poly, scheme, sched = exp.problem, exp.polyhedron, exp.scheme, exp.schedule
    rep = mixing_report(scheme) if mixing is None else mixing
    out = []

    feas = poly.contains(prob.x_star, 1e-9)
    out.append(CheckResult("feasibility", "pass" if feas else "warn", feas,
                           f"constraint set nonempty; x* {'inside' if feas else 'outside'} X"))
    out.append(CheckResult("objective function", "pass", True,
                           "convex quadratic samples; Gaussian regressors give finite moments of every order on bounded X"))
    ok_w = rep.row_stochastic and rep.column_stochastic_in_mean and rep.rho < 1
    out.append(CheckResult("weight matrices", "pass" if ok_w else "warn", rep.rho,
                           f"rho = {rep.rho:.6g}, row-stochastic = {rep.row_stochastic}, "
                           f"column-stochastic in mean = {rep.column_stochastic_in_mean}"))
    a_exp = sched.alpha_exp
    ok_s = 0.5 < a_exp <= 1.0 and rep.rho < 1
    out.append(CheckResult("step-size", "pass" if ok_s else "warn", a_exp,
                           f"alpha_k = {sched.a}/k^{a_exp}; needs exponent in (0.5, 1] and rho < 1"))
    out.append(CheckResult("sample and sigma-algebra", "pass", True,
                           "independent per-agent noise streams, independent of the gossip stream"))
    out.append(CheckResult("regularizer", "pass", True, "Euclidean psi(x) = |x|^2/2 satisfies reciprocity"))
    try:
        margin = prob.restricted_margin(poly.B)
    except Exception as exc:  # pragma: no cover - defensive
        margin = float("nan")
        out.append(CheckResult("restricted strong convexity", "warn", None, str(exc)))
    else:
        mu = 2.0 * margin
        out.append(CheckResult("restricted strong convexity", "pass" if mu > 0 else "warn", mu,
                               f"smallest eigenvalue of the Hessian on {{Bx = 0}}: mu = {mu:.6g}"))
    lam, res = constraint_qualification(prob, poly)
    B_active = poly.d1 == 0 or np.max(np.abs(poly.B @ prob.x_star - poly.b)) <= 1e-8
    strict = bool(B_active and res <= 1e-8 * max(1.0, np.linalg.norm(prob.total_gradient(prob.x_star)))
                  and np.all(lam > 1e-10))
    if strict:
        msg = f"-grad f(x*) = B^T lambda with lambda = {np.round(lam, 8).tolist()} > 0"
    elif B_active and res <= 1e-8 and np.all(lam >= -1e-10):
        msg = ("degenerate: grad f(x*) = 0 lies on the boundary of the normal cone, not in its relative interior; "
               "enable problem.tilt_scale for a strictly nondegenerate optimum")
    else:
        msg = f"-grad f(x*) is not in the normal cone (residual {res:.3g}, lambda = {np.round(lam, 8).tolist()})"
    out.append(CheckResult("constraint qualification", "pass" if strict else "warn", lam.tolist(), msg))
    ok_ds = rep.doubly_stochastic_always and rep.rho < 1
    out.append(CheckResult("stronger conditions on weight matrix", "pass" if ok_ds else "warn",
                           rep.doubly_stochastic_always,
                           f"doubly stochastic every round = {rep.doubly_stochastic_always}, rho = {rep.rho:.6g}"))
    out.append(CheckResult("stronger conditions on step-size", "pass" if sched.asymptotic_ok else "warn", a_exp,
                           f"exponent {a_exp} {'inside' if sched.asymptotic_ok else 'outside'} (2/3, 1)"))
    return out

