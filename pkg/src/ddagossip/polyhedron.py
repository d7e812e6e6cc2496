"""Polyhedral constraint sets {x : Bx <= b, Cx <= c} and the Euclidean mirror map."""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from . import kernels


class InfeasibleSetError(ValueError):
    pass


class ProjectionError(RuntimeError):
    """The active-set solver hit its iteration cap. Carries the offending input."""

    def __init__(self, message, z=None, working_set=None):
        super().__init__(message)
        self.z = z
        self.working_set = working_set


@dataclass(frozen=True)
class ProjectionResult:
    point: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    active_B: np.ndarray
    active_C: np.ndarray
    iterations: int = 0

    @property
    def working_set(self):
        flags = np.zeros(self.lam.size + self.mu.size, dtype=bool)
        flags[self.active_B] = True
        flags[self.lam.size + self.active_C] = True
        return flags


def _block(M, d, name):
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return np.zeros((0, d))
    M = np.atleast_2d(M)
    if M.shape[1] != d:
        raise ValueError(f"{name} has {M.shape[1]} columns, expected {d}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    return M


class Polyhedron:
    """X = {x : Bx <= b, Cx <= c}.

    The B block holds the constraints expected active at the optimum and the
    C block those expected inactive. Instances are immutable; nonemptiness is
    checked at construction.
    """

    def __init__(self, B, b, C=None, c=None, d=None, tol=1e-10, max_iter=500):
        if d is None:
            for M in (B, C):
                if M is not None and np.asarray(M).size:
                    d = np.atleast_2d(M).shape[1]
                    break
        if d is None:
            raise ValueError("cannot infer the dimension from empty blocks; pass d")
        self.d = int(d)
        self.B = _block(B, self.d, "B")
        self.C = _block(C if C is not None else [], self.d, "C")
        self.b = np.asarray(b if b is not None else [], dtype=float).reshape(-1)
        self.c = np.asarray(c if c is not None else [], dtype=float).reshape(-1)
        if self.b.size != self.B.shape[0] or self.c.size != self.C.shape[0]:
            raise ValueError("right-hand sides do not match the number of rows")
        self.tol = float(tol)
        self.max_iter = int(max_iter)

        A = np.vstack([self.B, self.C])
        a = np.concatenate([self.b, self.c])
        norms = np.linalg.norm(A, axis=1)
        norms[norms == 0.0] = 1.0
        self._norms = norms
        self._A = np.ascontiguousarray(A / norms[:, None])
        self._a = a / norms
        for M in (self.B, self.C, self.b, self.c, self._A, self._a):
            M.setflags(write=False)

        self.feasible_point = self._find_feasible_point()
        origin = self.project(np.zeros(self.d))
        if not self.contains(origin.point, 1e-8):
            raise InfeasibleSetError("projection of the origin is not feasible")

    @property
    def d1(self):
        return self.B.shape[0]

    @property
    def d2(self):
        return self.C.shape[0]

    @property
    def A(self):
        return self._A

    @property
    def a(self):
        return self._a

    def _find_feasible_point(self):
        n = self._A.shape[0]
        if n == 0:
            return np.zeros(self.d)
        # largest common slack s in [0, 1]: an interior point keeps the cold working set small
        obj = np.zeros(self.d + 1)
        obj[-1] = -1.0
        A_ub = np.hstack([self._A, np.ones((n, 1))])
        res = linprog(obj, A_ub=A_ub, b_ub=self._a, bounds=[(None, None)] * self.d + [(0.0, 1.0)], method="highs")
        if res.status != 0 or np.max(self._A @ res.x[:-1] - self._a) > 1e-9:
            raise InfeasibleSetError("constraint set {Bx <= b, Cx <= c} is empty")
        # pull slightly violated rows back exactly onto the boundary
        x = np.asarray(res.x[:-1], dtype=float)
        for _ in range(50):
            viol = self._A @ x - self._a
            i = int(np.argmax(viol))
            if viol[i] <= 0.0:
                break
            x = x - viol[i] * self._A[i]
        return x

    def _split(self, mult, flags, iterations, x):
        mult = mult / self._norms
        d1 = self.d1
        return ProjectionResult(
            point=x,
            lam=mult[:d1],
            mu=mult[d1:],
            active_B=np.flatnonzero(flags[:d1]),
            active_C=np.flatnonzero(flags[d1:]),
            iterations=iterations,
        )

    def project(self, z, warm=None):
        """Euclidean projection of z with KKT multipliers.

        ``warm`` may be a previous ProjectionResult; its point and active set
        seed the solver.
        """
        z = np.asarray(z, dtype=float).reshape(self.d)
        if not np.all(np.isfinite(z)):
            raise ValueError("cannot project a non-finite point")
        if warm is None:
            x0, flags = self.feasible_point, np.zeros(self._A.shape[0], dtype=bool)
        else:
            x0, flags = warm.point, warm.working_set
        x, mult, work, it, status = kernels.project_box_qp(
            self._A, self._a, z, x0, flags, self.tol, self.max_iter
        )
        if status != kernels.STATUS_OK:
            raise ProjectionError(
                f"active-set projection did not converge in {self.max_iter} iterations", z=z, working_set=work
            )
        return self._split(mult, work, it, x)

    def contains(self, x, tol=0.0):
        x = np.asarray(x, dtype=float)
        ok_b = np.all(self.B @ x - self.b <= tol) if self.d1 else True
        ok_c = np.all(self.C @ x - self.c <= tol) if self.d2 else True
        return bool(ok_b and ok_c)

    def active_set(self, x, tol=1e-6):
        """Indices of B rows and C rows with |row x - rhs| <= tol."""
        x = np.asarray(x, dtype=float)
        act_b = np.flatnonzero(np.abs(self.B @ x - self.b) <= tol)
        act_c = np.flatnonzero(np.abs(self.C @ x - self.c) <= tol)
        return act_b, act_c

    def fenchel_coupling(self, x, z, tol=1e-9):
        """psi(x) + psi*(z) - <x, z> for psi = |x|^2 / 2 restricted to this set."""
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        if not self.contains(x, tol):
            raise ValueError("Fenchel coupling needs x inside the constraint set")
        q = self.project(z).point
        conj = z @ q - 0.5 * q @ q
        return float(0.5 * x @ x + conj - x @ z)

    def to_dict(self):
        return {"B": self.B.tolist(), "b": self.b.tolist(), "C": self.C.tolist(), "c": self.c.tolist()}


def triangle_polyhedron():
    """{-2 x1 + x2 <= 0, x1 <= 5, -x2 <= 0}, with the first row active at (1, 2)."""
    return Polyhedron(B=[[-2.0, 1.0]], b=[0.0], C=[[1.0, 0.0], [0.0, -1.0]], c=[5.0, 0.0])
