"""Compiled per-matrix kernels for the log-det projection.

Every kernel works on one p x p matrix; the batch drivers loop over the
leading axis. ``sI - W*W`` is a Z-matrix, so it is a nonsingular M-matrix
(equivalently rho(W*W) < s) iff Gauss-Jordan elimination *without* pivoting
meets only positive pivots. One elimination pass therefore yields the
membership test, the log-determinant and the inverse together.
"""

import numpy as np
from numba import config, njit, prange

# try OpenMP first: probing an outdated TBB only produces a warning
config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

# status codes shared with acyclic.py
OK = 0
NOT_MEMBER = 1  # starting point outside W^s
ESCAPED = 2  # every step halving left W^s
INFEASIBLE = 3  # snapped output still above the feasibility tolerance

NEAR_ZERO = 1e-12


@njit(cache=True)
def factor(W, s, inv):
    """Invert ``sI - W*W`` into ``inv``; return (in_ws, logdet)."""
    p = W.shape[0]
    for r in range(p):
        for c in range(p):
            inv[r, c] = -W[r, c] * W[r, c]
        inv[r, r] += s
    logdet = 0.0
    for k in range(p):
        d = inv[k, k]
        if not d > 0.0:
            return False, np.nan
        logdet += np.log(d)
        inv_d = 1.0 / d
        for c in range(p):
            inv[k, c] *= inv_d
        inv[k, k] = inv_d
        for r in range(p):
            if r != k:
                f = inv[r, k]
                if f != 0.0:
                    for c in range(p):
                        inv[r, c] -= f * inv[k, c]
                    inv[r, k] = -f * inv_d
    return True, logdet


@njit(cache=True)
def h_value(W, s, work):
    p = W.shape[0]
    ok, logdet = factor(W, s, work)
    if not ok:
        return False, np.inf
    return True, -logdet + p * np.log(s)


@njit(cache=True)
def objective(W, Wt, mu, s, inv):
    p = W.shape[0]
    ok, logdet = factor(W, s, inv)
    if not ok:
        return False, np.inf
    dist = 0.0
    for r in range(p):
        for c in range(p):
            d = Wt[r, c] - W[r, c]
            dist += d * d
    return True, 0.5 * mu * dist - logdet + p * np.log(s)


@njit(cache=True)
def inner_descent(W, Wt, mu, s, step, tol, max_iters, max_halvings, trace):
    """Fixed-step gradient descent on mu/2 |Wt - W|_F^2 + h_s(W), in place.

    A trial step is halved while it leaves W^s or raises the objective, and
    doubled (up to ``step``) after each accepted move.
    ``trace`` (length >= max_iters + 1) receives the objective sequence.
    Returns (status, iterations, halvings, final objective).
    """
    p = W.shape[0]
    inv = np.empty((p, p))
    inv_new = np.empty((p, p))
    grad = np.empty((p, p))
    trial = np.empty((p, p))
    ok, f = objective(W, Wt, mu, s, inv)
    if not ok:
        return NOT_MEMBER, 0, 0, f
    record = trace.shape[0] > 0
    if record:
        trace[0] = f
    halvings = 0
    eta = step
    it = 0
    while it < max_iters:
        for r in range(p):
            for c in range(p):
                grad[r, c] = mu * (W[r, c] - Wt[r, c]) + 2.0 * inv[c, r] * W[r, c]
            grad[r, r] = 0.0
        accepted = False
        saw_member = False
        f_new = f
        for _ in range(max_halvings + 1):
            for r in range(p):
                for c in range(p):
                    trial[r, c] = W[r, c] - eta * grad[r, c]
            ok, f_new = objective(trial, Wt, mu, s, inv_new)
            if ok:
                saw_member = True
                if f_new <= f:
                    accepted = True
                    break
            eta *= 0.5
            halvings += 1
        if not accepted:
            if saw_member:
                # no descent left at any admissible step: stationary
                break
            return ESCAPED, it, halvings, f
        it += 1
        # let a halved step grow back so one hard region does not stall the solve
        eta = min(2.0 * eta, step)
        decrease = f - f_new
        W[:, :] = trial
        inv[:, :] = inv_new
        f = f_new
        if record:
            trace[it] = f
        if decrease < tol:
            break
    return OK, it, halvings, f


@njit(cache=True)
def snap_support(W, Wt, out):
    """Write Wt restricted to a greedy acyclic support of W into ``out``.

    Entries of W are admitted in decreasing magnitude (row-major order on
    ties) unless they close a cycle with those already admitted. Returns the
    number of admitted edges.
    """
    p = W.shape[0]
    m = p * p
    mags = np.empty(m)
    for r in range(p):
        for c in range(p):
            mags[r * p + c] = -abs(W[r, c]) if r != c else 0.0
    order = np.argsort(mags, kind="mergesort")
    reach = np.zeros((p, p), dtype=np.bool_)
    out[:, :] = 0.0
    edges = 0
    for idx in order:
        if -mags[idx] <= NEAR_ZERO:
            break
        j = idx // p
        k = idx % p
        if reach[k, j] or abs(Wt[j, k]) <= NEAR_ZERO:
            continue
        out[j, k] = Wt[j, k]
        edges += 1
        for a in range(p):
            if a == j or reach[a, j]:
                for b in range(p):
                    if b == k or reach[k, b]:
                        reach[a, b] = True
    return edges


@njit(cache=True)
def project_one(Wt, out, s, mu0, alpha, T, step, tol, max_iters, max_halvings,
                feas_tol):
    """Path-following log-det projection of one matrix into ``out``.

    Returns (status, total inner iterations, final h_s).
    """
    p = Wt.shape[0]
    scale = 1.0
    for r in range(p):
        for c in range(p):
            a = abs(Wt[r, c])
            if a > scale:
                scale = a
    Ws = Wt / scale
    for r in range(p):
        Ws[r, r] = 0.0
    W = np.zeros((p, p))
    work = np.empty((p, p))
    no_trace = np.empty(0)
    mu = mu0
    total = 0
    for _ in range(T):
        st, it, _, _ = inner_descent(W, Ws, mu, s, step, tol, max_iters,
                                     max_halvings, no_trace)
        total += it
        if st != OK:
            return st, total, np.inf
        mu *= alpha
    snap_support(W, Wt, out)
    ok, h = h_value(out, s, work)
    if not ok or h > feas_tol:
        return INFEASIBLE, total, h
    return OK, total, h


@njit(cache=True, parallel=True)
def project_batch(Wt, out, s, mu0, alpha, T, step, tol, max_iters, max_halvings,
                  feas_tol, status, iters, hvals):
    n = Wt.shape[0]
    for i in prange(n):
        st, it, h = project_one(Wt[i], out[i], s, mu0, alpha, T, step, tol,
                                max_iters, max_halvings, feas_tol)
        status[i] = st
        iters[i] = it
        hvals[i] = h


@njit(cache=True, parallel=True)
def h_batch(W, s, ok, h):
    n, p, _ = W.shape
    for i in prange(n):
        work = np.empty((p, p))
        o, v = h_value(W[i], s, work)
        ok[i] = o
        h[i] = v
