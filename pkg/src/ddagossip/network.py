"""Random gossip weight matrices and their mixing diagnostics."""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from . import kernels
from .linalg import spectral_norm

ENUMERATION_LIMIT = 10**6


class GraphError(ValueError):
    pass


class SchemeKind(str, Enum):
    PAIRWISE = "pairwise"
    BROADCAST = "broadcast"
    FIXED = "fixed"


def complete_graph_edges(m):
    return np.array([(i, j) for i in range(m) for j in range(i + 1, m)], dtype=np.int64).reshape(-1, 2)


def parse_graph(spec, m=None):
    """Edge array from ``"complete:m"`` or an explicit list of (i, j) pairs (0-based)."""
    if isinstance(spec, str):
        kind, _, arg = spec.partition(":")
        if kind.strip() != "complete" or not arg.strip().isdigit():
            raise GraphError(f"unknown graph description {spec!r}; use 'complete:m' or an edge list")
        n = int(arg)
        if m is not None and n != m:
            raise GraphError(f"graph has {n} nodes but {m} agents were requested")
        return n, complete_graph_edges(n)
    edges = np.asarray(spec, dtype=np.int64).reshape(-1, 2)
    if m is None:
        m = int(edges.max()) + 1 if edges.size else 1
    if edges.size and (edges.min() < 0 or edges.max() >= m):
        raise GraphError(f"edge endpoints must lie in [0, {m})")
    if np.any(edges[:, 0] == edges[:, 1]):
        raise GraphError("self-loops are not allowed")
    canon = {tuple(sorted(e)) for e in edges.tolist()}
    return m, np.array(sorted(canon), dtype=np.int64).reshape(-1, 2)


def _is_connected(m, edges):
    if m == 1:
        return True
    if edges.size == 0:
        return False
    adj = coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(m, m))
    n_comp, _ = connected_components(adj, directed=False)
    return n_comp == 1


@dataclass(frozen=True)
class GossipScheme:
    """How a single round's weight matrix A_k is drawn.

    PAIRWISE: one edge (i, j) uniformly, both endpoints average.
    BROADCAST: one node i uniformly; each neighbour j moves to
    (1 - mix) z_j + mix z_i. Requires a regular graph.
    FIXED: the same doubly stochastic ``matrix`` every round.
    """

    kind: SchemeKind
    m: int
    edges: np.ndarray
    mix: float = 0.5
    matrix: np.ndarray = None
    nbr_ptr: np.ndarray = field(init=False, repr=False)
    nbr_idx: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        kind = SchemeKind(self.kind)
        object.__setattr__(self, "kind", kind)
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "edges", edges)
        if kind is SchemeKind.FIXED:
            W = np.asarray(self.matrix, dtype=float)
            if W.shape != (self.m, self.m):
                raise GraphError(f"fixed matrix must be {self.m}x{self.m}")
            if np.any(W < 0) or not np.allclose(W.sum(axis=1), 1.0, atol=1e-12):
                raise GraphError("fixed matrix must be nonnegative and row-stochastic")
            object.__setattr__(self, "matrix", W)
            if edges.size == 0:
                rows, cols = np.nonzero((W + W.T) > 0)
                keep = rows < cols
                edges = np.stack([rows[keep], cols[keep]], axis=1).astype(np.int64).reshape(-1, 2)
                object.__setattr__(self, "edges", edges)
        if not _is_connected(self.m, edges):
            raise GraphError("communication graph is disconnected")
        if not 0.0 < self.mix <= 1.0:
            raise GraphError("mix must lie in (0, 1]")
        deg = np.bincount(edges.ravel(), minlength=self.m)
        if kind is SchemeKind.BROADCAST and np.any(deg != deg[0]):
            raise GraphError("broadcast gossip requires a regular graph")
        order = np.argsort(np.concatenate([edges[:, 0], edges[:, 1]]), kind="stable")
        nbrs = np.concatenate([edges[:, 1], edges[:, 0]])[order]
        ptr = np.concatenate([[0], np.cumsum(deg)]).astype(np.int64)
        object.__setattr__(self, "nbr_ptr", ptr)
        object.__setattr__(self, "nbr_idx", nbrs.astype(np.int64))

    @property
    def kind_code(self):
        return {SchemeKind.PAIRWISE: kernels.PAIRWISE, SchemeKind.BROADCAST: kernels.BROADCAST,
                SchemeKind.FIXED: kernels.FIXED}[self.kind]

    @property
    def n_atoms(self):
        """Size of the finite set a single round chooses from."""
        if self.kind is SchemeKind.PAIRWISE:
            return len(self.edges)
        if self.kind is SchemeKind.BROADCAST:
            return self.m
        return 1

    @property
    def doubly_stochastic(self):
        if self.kind is SchemeKind.FIXED:
            return bool(np.allclose(self.matrix.sum(axis=0), 1.0, atol=1e-12))
        return self.kind is SchemeKind.PAIRWISE

    def draw_choices(self, rng, n):
        if self.kind is SchemeKind.FIXED:
            return np.zeros(n, dtype=np.int64)
        return rng.integers(0, self.n_atoms, size=n, dtype=np.int64)

    def matrix_for(self, choice):
        """Weight matrix realised by atom ``choice`` (an edge or a broadcasting node)."""
        if self.kind is SchemeKind.FIXED:
            return self.matrix.copy()
        A = np.eye(self.m)
        if self.kind is SchemeKind.PAIRWISE:
            i, j = self.edges[choice]
            e = np.zeros(self.m)
            e[i], e[j] = 1.0, -1.0
            return A - 0.5 * np.outer(e, e)
        i = int(choice)
        for j in self.nbr_idx[self.nbr_ptr[i] : self.nbr_ptr[i + 1]]:
            A[j, j] = 1.0 - self.mix
            A[j, i] = self.mix
        return A

    def to_dict(self):
        out = {"kind": self.kind.value, "m": self.m, "edges": self.edges.tolist(), "mix": self.mix}
        if self.matrix is not None:
            out["matrix"] = self.matrix.tolist()
        return out


def pairwise_gossip(m, graph=None):
    m, edges = parse_graph(graph if graph is not None else f"complete:{m}", m)
    return GossipScheme(SchemeKind.PAIRWISE, m, edges)


def broadcast_gossip(m, graph=None, mix=0.5):
    m, edges = parse_graph(graph if graph is not None else f"complete:{m}", m)
    return GossipScheme(SchemeKind.BROADCAST, m, edges, mix=mix)


def fixed_scheme(matrix):
    W = np.asarray(matrix, dtype=float)
    return GossipScheme(SchemeKind.FIXED, W.shape[0], np.zeros((0, 2), dtype=np.int64), matrix=W)


def sample_weight_matrix(scheme, rng):
    return scheme.matrix_for(int(scheme.draw_choices(rng, 1)[0]))


@dataclass(frozen=True)
class MixingReport:
    rho: float
    row_stochastic: bool
    column_stochastic_in_mean: bool
    doubly_stochastic_always: bool
    expected_disagreement: np.ndarray
    exact: bool
    n_atoms: int

    def to_dict(self):
        return {
            "rho": self.rho,
            "row_stochastic": self.row_stochastic,
            "column_stochastic_in_mean": self.column_stochastic_in_mean,
            "doubly_stochastic_always": self.doubly_stochastic_always,
            "exact_enumeration": self.exact,
            "n_atoms": self.n_atoms,
            "expected_disagreement": self.expected_disagreement.tolist(),
        }


def mixing_report(scheme, n_samples=100_000, rng=None, tol=1e-12, force_monte_carlo=False):
    """rho = ||E[A^T (I - 11^T/m) A]|| plus stochasticity flags.

    The expectation is exact (uniform average over atoms) when the scheme has
    at most ENUMERATION_LIMIT atoms, otherwise a Monte Carlo mean over
    ``n_samples`` draws.
    """
    m = scheme.m
    J_perp = np.eye(m) - np.ones((m, m)) / m
    exact = scheme.n_atoms <= ENUMERATION_LIMIT and not force_monte_carlo
    if exact:
        mats = (scheme.matrix_for(c) for c in range(scheme.n_atoms))
        count = scheme.n_atoms
    else:
        if n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        rng = np.random.default_rng(rng)
        mats = (scheme.matrix_for(c) for c in scheme.draw_choices(rng, n_samples))
        count = n_samples
    E_dis = np.zeros((m, m))
    E_A = np.zeros((m, m))
    row_ok = True
    col_always = True
    nonneg = True
    for A in mats:
        E_dis += A.T @ J_perp @ A
        E_A += A
        row_ok &= bool(np.all(np.abs(A.sum(axis=1) - 1.0) <= tol))
        col_always &= bool(np.all(np.abs(A.sum(axis=0) - 1.0) <= tol))
        nonneg &= bool(np.all(A >= 0.0))
    E_dis /= count
    E_A /= count
    col_mean = bool(np.all(np.abs(E_A.sum(axis=0) - 1.0) <= (tol if exact else 5.0 / np.sqrt(count))))
    return MixingReport(
        rho=spectral_norm(0.5 * (E_dis + E_dis.T)),
        row_stochastic=row_ok and nonneg,
        column_stochastic_in_mean=col_mean,
        doubly_stochastic_always=col_always and row_ok and nonneg,
        expected_disagreement=E_dis,
        exact=exact,
        n_atoms=scheme.n_atoms,
    )


def check_assumption_stepsize_vs_rho(rho, schedule=None):
    """For i.i.d. weight matrices the step-size/mixing conditions reduce to rho < 1."""
    return bool(rho < 1.0)
