"""Distributed quadratic parameter estimation.

Agent j observes d = u^T x* + v with u ~ N(0, R_j) and v ~ N(0, s_j), and
holds f_j(x) = E[(u^T x - d)^2] + t^T x = (x - x*)^T R_j (x - x*) + s_j + t^T x.
The optional linear tilt t moves the constrained optimum off the degenerate
case grad f(x*) = 0 without changing Hessian or noise covariance.
"""

from dataclasses import dataclass, field

import numpy as np

from .linalg import null_space_basis


def _psd_factor(R):
    w, V = np.linalg.eigh(0.5 * (R + R.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True)
class QuadraticEstimationProblem:
    x_star: np.ndarray
    R_u: np.ndarray
    sigma_v2: np.ndarray
    tilt: np.ndarray = None
    exact_gradients: bool = False
    factors: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        x_star = np.asarray(self.x_star, dtype=float).reshape(-1)
        R = np.asarray(self.R_u, dtype=float)
        if R.ndim == 2:
            R = R[None]
        d = x_star.size
        if R.shape[1:] != (d, d):
            raise ValueError(f"R_u must have shape (m, {d}, {d}), got {R.shape}")
        s = np.broadcast_to(np.asarray(self.sigma_v2, dtype=float), (R.shape[0],)).copy()
        if np.any(s < 0):
            raise ValueError("noise variances must be nonnegative")
        for j, Rj in enumerate(R):
            if not np.allclose(Rj, Rj.T, atol=1e-12):
                raise ValueError(f"R_u[{j}] is not symmetric")
            if np.linalg.eigvalsh(Rj)[0] < -1e-10:
                raise ValueError(f"R_u[{j}] is not positive semidefinite")
        tilt = np.zeros(d) if self.tilt is None else np.asarray(self.tilt, dtype=float).reshape(d)
        object.__setattr__(self, "x_star", x_star)
        object.__setattr__(self, "R_u", R)
        object.__setattr__(self, "sigma_v2", s)
        object.__setattr__(self, "tilt", tilt)
        object.__setattr__(self, "factors", np.stack([_psd_factor(Rj) for Rj in R]))

    @property
    def m(self):
        return self.R_u.shape[0]

    @property
    def d(self):
        return self.x_star.size

    def objective(self, j, x):
        e = np.asarray(x, dtype=float) - self.x_star
        return float(e @ self.R_u[j] @ e + self.sigma_v2[j] + self.tilt @ x)

    def total_objective(self, x):
        return sum(self.objective(j, x) for j in range(self.m))

    def sample_gradient(self, j, x, rng, v=None):
        """2 u (u^T x - d) + t for a fresh draw (u, v); pass ``v`` to pin the noise."""
        x = np.asarray(x, dtype=float)
        u = self.factors[j] @ rng.standard_normal(self.d)
        if v is None:
            v = np.sqrt(self.sigma_v2[j]) * rng.standard_normal()
        return 2.0 * u * (u @ (x - self.x_star) - v) + self.tilt

    def true_gradient(self, j, x):
        return 2.0 * self.R_u[j] @ (np.asarray(x, dtype=float) - self.x_star) + self.tilt

    def total_gradient(self, x):
        return sum(self.true_gradient(j, x) for j in range(self.m))

    def hessian_total(self, x=None):
        return 2.0 * self.R_u.sum(axis=0)

    def gradient_covariance(self, j, x_star=None):
        """Cov of the sampled gradient at the true parameter: 4 s_j R_j."""
        return 4.0 * self.sigma_v2[j] * self.R_u[j]

    def restricted_margin(self, B):
        """Smallest eigenvalue of sum_j R_j on {x : Bx = 0}."""
        basis = null_space_basis(B, d=self.d)
        if basis.r == 0:
            return np.inf
        K = basis.kernel
        return float(np.linalg.eigvalsh(K.T @ self.R_u.sum(axis=0) @ K)[0])

    def noise_arrays(self):
        """Arrays consumed by the simulation kernel."""
        return (
            np.ascontiguousarray(self.factors),
            np.ascontiguousarray(self.R_u),
            np.ascontiguousarray(self.sigma_v2),
            np.ascontiguousarray(self.tilt),
            np.ascontiguousarray(self.x_star),
        )

    def to_dict(self):
        return {
            "x_star": self.x_star.tolist(),
            "R_u": self.R_u.tolist(),
            "sigma_v2": self.sigma_v2.tolist(),
            "tilt": self.tilt.tolist(),
            "exact_gradients": self.exact_gradients,
        }


def facet_tilt(B, scale):
    """Tilt t = -scale * B^T 1, so -grad f(x*) = m * scale * B^T 1 lies in the normal cone interior."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    return -scale * B.sum(axis=0) if B.size else np.zeros(B.shape[1])


def generate_instance(m, d, x_star, rng, sigma_range=(0.1, 0.5), B=None, min_margin=0.1,
                      tilt=None, max_tries=1000):
    """Random R_j = M_j M_j^T / d with standard normal M_j and s_j ~ U(sigma_range).

    With ``B`` given, whole sets {R_j} are redrawn until sum_j R_j restricted
    to {Bx = 0} has smallest eigenvalue at least ``min_margin``.
    """
    if m < 1 or d < 1:
        raise ValueError("need m >= 1 and d >= 1")
    rng = np.random.default_rng(rng)
    lo, hi = sigma_range
    for _ in range(max_tries):
        Ms = rng.standard_normal((m, d, d))
        R = Ms @ np.swapaxes(Ms, 1, 2) / d
        s = rng.uniform(lo, hi, size=m)
        prob = QuadraticEstimationProblem(x_star=x_star, R_u=R, sigma_v2=s, tilt=tilt)
        if B is None or prob.restricted_margin(B) >= min_margin:
            return prob
    raise RuntimeError(f"no instance met the restricted convexity margin {min_margin} in {max_tries} draws")


def estimation_problem(m=50, rng=0, sigma_range=(0.1, 0.5), tilt_scale=0.0):
    """Instance on the triangle {-2x1 + x2 <= 0, x1 <= 5, x2 >= 0} with x* = (1, 2)."""
    B = np.array([[-2.0, 1.0]])
    tilt = facet_tilt(B, tilt_scale) if tilt_scale else None
    return generate_instance(m, 2, np.array([1.0, 2.0]), rng, sigma_range=sigma_range, B=B, tilt=tilt)
