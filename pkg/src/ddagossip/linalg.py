"""Small dense linear algebra used by the asymptotic analysis.

Everything here works on matrices of size at most a few dozen, so the
routines favour transparency over speed.
"""

from dataclasses import dataclass

import numpy as np


class StabilityError(ValueError):
    """Raised when a Lyapunov solve is requested for a matrix G with -G not Hurwitz."""


@dataclass(frozen=True)
class SubspaceBasis:
    """Orthogonal d x d basis whose first ``r`` columns span ker(B).

    ``rank`` is the numerical rank of B that was actually found, so callers
    expecting a particular dimension can detect degenerate constraint blocks.
    """

    U: np.ndarray
    r: int
    rank: int

    @property
    def kernel(self):
        return self.U[:, : self.r]

    @property
    def complement(self):
        return self.U[:, self.r :]


def _as_matrix(M):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    return M


def _rows(B, d):
    B = np.asarray(B, dtype=float)
    if d is None:
        if B.ndim != 2:
            raise ValueError("pass d explicitly for an empty or 1-d constraint block")
        return B
    return B.reshape(-1, d)


def _svd_threshold(M, s):
    top = s[0] if s.size else 0.0
    # below the smallest normal double 1/s overflows, so such directions count as zero
    return max(max(M.shape) * top * 1e-12, np.finfo(float).tiny)


def pseudo_inverse(M):
    """Moore-Penrose inverse by SVD with truncation at max(rows, cols) * ||M|| * 1e-12."""
    M = _as_matrix(M)
    if M.size == 0:
        return np.zeros((M.shape[1], M.shape[0]))
    u, s, vt = np.linalg.svd(M, full_matrices=False)
    keep = s > _svd_threshold(M, s)
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (vt.T * s_inv) @ u.T


def projection_matrix(B, d=None):
    """Orthogonal projector I - B^T (B B^T)^+ B onto {x : Bx = 0}.

    Evaluated as I - V_r V_r^T from the SVD of B, with the same rank
    decision as null_space_basis and no division by singular values.
    """
    B = _rows(B, d)
    d = B.shape[1]
    if B.shape[0] == 0:
        return np.eye(d)
    B = _as_matrix(B)
    _, s, vt = np.linalg.svd(B, full_matrices=False)
    V = vt[s > _svd_threshold(B, s)].T
    P = np.eye(d) - V @ V.T
    return 0.5 * (P + P.T)


def null_space_basis(B, d=None):
    """Orthonormal basis U = [ker(B) | ker(B)^perp].

    Columns are sign-normalised so that each column's largest-magnitude
    entry is positive, which makes the basis deterministic.
    """
    B = _rows(B, d)
    d = B.shape[1]
    if B.shape[0] == 0:
        return SubspaceBasis(U=np.eye(d), r=d, rank=0)
    B = _as_matrix(B)
    _, s, vt = np.linalg.svd(B, full_matrices=True)
    rank = int(np.sum(s > _svd_threshold(B, s)))
    V = vt.T
    U = np.hstack([V[:, rank:], V[:, :rank]])
    pivots = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[pivots, np.arange(d)])
    signs[signs == 0] = 1.0
    U = U * signs
    return SubspaceBasis(U=U, r=d - rank, rank=rank)


def spectral_norm(M, tol=1e-12, max_iter=100_000):
    """Largest singular value via power iteration on M^T M.

    Falls back to a symmetric eigendecomposition if the iteration does not
    reach a residual of ``tol`` relative to the current eigenvalue estimate.
    """
    M = _as_matrix(M)
    S = M.T @ M
    n = S.shape[0]
    if not np.any(S):
        return 0.0
    v = np.ones(n) + np.linspace(0.0, 0.5, n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = S @ v
        lam = float(v @ w)
        if lam <= 0.0:
            break
        res = np.linalg.norm(w - lam * v)
        if res <= tol * lam:
            return float(np.sqrt(lam))
        v = w / np.linalg.norm(w)
    return float(np.sqrt(max(np.linalg.eigvalsh(0.5 * (S + S.T))[-1], 0.0)))


def lyapunov_solve(G, M):
    """Solve G X + X G^T = M for symmetric X.

    Uses the Kronecker (vectorised) form, adequate for r <= ~10. The unique
    solution equals int_0^inf exp(-G t) M exp(-G^T t) dt when every eigenvalue
    of G has positive real part; otherwise StabilityError is raised.
    """
    G = _as_matrix(G)
    M = _as_matrix(M)
    r = G.shape[0]
    if G.shape != (r, r) or M.shape != (r, r):
        raise ValueError(f"shape mismatch: G {G.shape}, M {M.shape}")
    eig = np.linalg.eigvals(G)
    if np.min(eig.real) <= 0.0:
        raise StabilityError(
            "-G is not stable (min real eigenvalue "
            f"{np.min(eig.real):.3e}); restricted strong convexity fails numerically"
        )
    I = np.eye(r)
    K = np.kron(I, G) + np.kron(G, I)
    x = np.linalg.solve(K, M.reshape(-1, order="F"))
    # one step of iterative refinement keeps the residual near machine precision
    x += np.linalg.solve(K, M.reshape(-1, order="F") - K @ x)
    X = x.reshape(r, r, order="F")
    return 0.5 * (X + X.T)
