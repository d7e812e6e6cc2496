"""Hot loops: polyhedral projection and the gossip simulation.

Every function here is written in the numpy subset numba understands, so
the same source runs compiled or, with ``DDAGOSSIP_PURE_NUMPY=1``, as plain
Python. Constraint rows passed in are assumed to have unit norm.
"""

import numpy as np

from ._jit import njit

PAIRWISE = 0
BROADCAST = 1
FIXED = 2

DDA = 0
DPG = 1

STATUS_OK = 0
STATUS_ITER_CAP = 1


@njit
def chol_solve(M, rhs):
    """Solve M y = rhs for small SPD M. Returns (ok, y); ok is False on a tiny pivot."""
    n = M.shape[0]
    L = np.zeros((n, n))
    y = np.zeros(n)
    for i in range(n):
        for j in range(i + 1):
            s = M[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if s <= 1e-12 * max(M[i, i], 1e-300):
                    return False, y
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    for i in range(n):
        s = rhs[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= L[k, i] * y[k]
        y[i] = s / L[i, i]
    return True, y


@njit
def _gram(A, idx, nw):
    M = np.empty((nw, nw))
    for p in range(nw):
        for q in range(p + 1):
            v = A[idx[p]] @ A[idx[q]]
            M[p, q] = v
            M[q, p] = v
    return M


@njit
def equality_projection(A, a, z, idx, nw):
    """Project z onto {x : A_W x = a_W}. Returns (ok, x, nu) with x = z - A_W^T nu."""
    x = z.copy()
    nu = np.zeros(nw)
    if nw == 0:
        return True, x, nu
    rhs = np.empty(nw)
    for p in range(nw):
        rhs[p] = A[idx[p]] @ z - a[idx[p]]
    ok, nu = chol_solve(_gram(A, idx, nw), rhs)
    if not ok:
        return False, x, nu
    for p in range(nw):
        x -= nu[p] * A[idx[p]]
    return True, x, nu


@njit
def project_box_qp(A, a, z, x_start, warm, tol, max_iter):
    """Euclidean projection of z onto {x : A x <= a} by a primal active-set method.

    ``x_start`` must be feasible. ``warm`` flags a guessed active set; it is
    tried first with a single equality-constrained solve. Returns
    (x, multipliers, active flags, iterations, status).
    """
    n = A.shape[0]
    scale = 1.0 + np.sqrt(z @ z)
    ftol = tol * scale
    idx = np.zeros(max(n, 1), np.int64)
    mult = np.zeros(n)
    work = np.zeros(n, np.bool_)

    # warm start: accept the guessed active set if it already satisfies KKT
    nw = 0
    for i in range(n):
        if warm[i]:
            idx[nw] = i
            nw += 1
    ok, x, nu = equality_projection(A, a, z, idx, nw)
    if ok:
        good = True
        for p in range(nw):
            if nu[p] < -ftol:
                good = False
        if good:
            for i in range(n):
                if A[i] @ x - a[i] > ftol:
                    good = False
                    break
        if good:
            for p in range(nw):
                mult[idx[p]] = max(nu[p], 0.0)
                work[idx[p]] = True
            return x, mult, work, 0, STATUS_OK

    # cold path from a feasible point; rows active there enter greedily while independent
    x = x_start.copy()
    nw = 0
    for i in range(n):
        if abs(A[i] @ x - a[i]) <= ftol:
            idx[nw] = i
            ok, _ = chol_solve(_gram(A, idx, nw + 1), np.zeros(nw + 1))
            if ok:
                nw += 1
    it = 0
    while it < max_iter:
        it += 1
        g = z - x
        p_dir = g.copy()
        nu = np.zeros(nw)
        gscale = scale + np.sqrt(g @ g)
        if nw > 0:
            rhs = np.empty(nw)
            for q in range(nw):
                rhs[q] = A[idx[q]] @ g
            ok, nu = chol_solve(_gram(A, idx, nw), rhs)
            if not ok:
                it = max_iter
                break
            for q in range(nw):
                p_dir -= nu[q] * A[idx[q]]
                gscale += abs(nu[q])
        # roundoff in p_dir grows with the multipliers, so the zero-step test does too
        if np.sqrt(p_dir @ p_dir) <= 1e-13 * gscale:
            worst = -1
            worst_val = -ftol
            for q in range(nw):
                if nu[q] < worst_val:
                    worst_val = nu[q]
                    worst = q
            if worst < 0:
                break
            for q in range(worst, nw - 1):
                idx[q] = idx[q + 1]
            nw -= 1
            continue
        t = 1.0
        block = -1
        for i in range(n):
            inw = False
            for q in range(nw):
                if idx[q] == i:
                    inw = True
            if inw:
                continue
            ap = A[i] @ p_dir
            if ap > 1e-15 * scale:
                slack = max(a[i] - A[i] @ x, 0.0)
                ratio = slack / ap
                if ratio < t:
                    t = ratio
                    block = i
        x = x + t * p_dir
        if block >= 0:
            idx[nw] = block
            nw += 1
    status = STATUS_OK if it < max_iter else STATUS_ITER_CAP

    # polish: exact projection onto the final working set gives exact stationarity
    ok, xp, nu = equality_projection(A, a, z, idx, nw)
    if ok:
        x = xp
    for q in range(nw):
        mult[idx[q]] = max(nu[q], 0.0)
        work[idx[q]] = True
    return x, mult, work, it, status


@njit
def _mix_rows(S, kind, choice, edges, nbr_ptr, nbr_idx, mix, W):
    if kind == PAIRWISE:
        i = edges[choice, 0]
        j = edges[choice, 1]
        avg = 0.5 * (S[i] + S[j])
        S[i] = avg
        S[j] = avg
    elif kind == BROADCAST:
        i = choice
        for p in range(nbr_ptr[i], nbr_ptr[i + 1]):
            j = nbr_idx[p]
            S[j] = (1.0 - mix) * S[j] + mix * S[i]
    else:
        S[:, :] = W @ S


@njit
def _gradient(j, x, Lf, sig, tilt, xstar, exact, eps_j, eta_j, R):
    if exact:
        return 2.0 * (R[j] @ (x - xstar)) + tilt
    u = Lf[j] @ eps_j
    v = np.sqrt(sig[j]) * eta_j
    return 2.0 * u * (u @ (x - xstar) - v) + tilt


@njit
def simulate_chunk(
    algo, S, X, warm, xbar, warm_bar, A, a, Lf, R, sig, tilt, xstar, exact,
    kind, edges, nbr_ptr, nbr_idx, mix, W, choices, eps, eta, k0, step_a, step_exp,
    rec_k, rec_pos, rec_x, rec_xbar, rec_mult, rec_cons, store_duals, rec_s, rec_g,
    win_start, win_sum, tol, max_iter,
):
    """Advance a DDA (algo=0) or DPG (algo=1) run over one block of steps.

    State arrays are updated in place. For DDA, ``S`` holds the dual
    variables z_{j,k-1}; for DPG it holds the primal iterates x_{j,k}.
    Returns (next record position, failing step or 0).
    """
    m, d = S.shape
    n_steps = choices.shape[0]
    g = np.zeros((m, d))
    Y = np.zeros((m, d))
    for c in range(n_steps):
        k = k0 + c
        alpha = step_a / k ** step_exp
        if algo == DDA:
            for j in range(m):
                xj, _, wj, _, st = project_box_qp(A, a, S[j], X[j], warm[j], tol, max_iter)
                if st != STATUS_OK:
                    return rec_pos, k
                X[j] = xj
                warm[j] = wj
            sbar = np.zeros(d)
            for j in range(m):
                sbar += S[j]
            sbar /= m
            xb, mb, wb, _, st = project_box_qp(A, a, sbar, xbar, warm_bar, tol, max_iter)
            if st != STATUS_OK:
                return rec_pos, k
        else:
            xb = np.zeros(d)
            for j in range(m):
                xb += X[j]
            xb /= m
            mb = np.zeros(A.shape[0])
            wb = warm_bar
        xbar[:] = xb
        warm_bar[:] = wb

        for j in range(m):
            g[j] = _gradient(j, X[j], Lf, sig, tilt, xstar, exact, eps[c, j], eta[c, j], R)

        recording = rec_pos < rec_k.shape[0] and rec_k[rec_pos] == k
        if recording and store_duals:
            rec_s[rec_pos] = S
            rec_g[rec_pos] = g

        if algo == DDA:
            _mix_rows(S, kind, choices[c], edges, nbr_ptr, nbr_idx, mix, W)
            for j in range(m):
                S[j] -= alpha * g[j]
        else:
            Y[:, :] = X
            _mix_rows(Y, kind, choices[c], edges, nbr_ptr, nbr_idx, mix, W)
            for j in range(m):
                Y[j] -= alpha * g[j]

        if k >= win_start:
            win_sum += X

        if recording:
            rec_x[rec_pos] = X
            rec_xbar[rec_pos] = xb
            rec_mult[rec_pos] = mb
            if algo == DDA:
                cbar = np.zeros(d)
                for j in range(m):
                    cbar += S[j]
                cbar /= m
                tot = 0.0
                for j in range(m):
                    diff = S[j] - cbar
                    tot += diff @ diff
            else:
                tot = 0.0
                for j in range(m):
                    diff = X[j] - xb
                    tot += diff @ diff
            rec_cons[rec_pos] = tot
            rec_pos += 1

        if algo == DPG:
            for j in range(m):
                xj, _, wj, _, st = project_box_qp(A, a, Y[j], X[j], warm[j], tol, max_iter)
                if st != STATUS_OK:
                    return rec_pos, k
                X[j] = xj
                warm[j] = wj
            S[:, :] = X
    return rec_pos, 0
