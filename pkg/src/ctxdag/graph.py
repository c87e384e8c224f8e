"""Adjacency-matrix helpers: acyclicity, spectral radius, final thresholding.

A weighted adjacency matrix is a dense ``(p, p)`` float array with
``w[j, k]`` the weight of edge ``j -> k``; a batch is ``(n, p, p)``. Binary
graphs are boolean arrays of the same layout.
"""

import numpy as np

from . import _kernels
from .errors import ContractError, SolverError

RADIUS_MAX_ITERS = 10_000
RADIUS_TOL = 1e-8


def as_adjacency(W, name="W"):
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ContractError(f"{name} must be square, got shape {W.shape}")
    if not np.all(np.isfinite(W)):
        raise ContractError(f"{name} has non-finite entries")
    return W


def as_batch(W, name="batch"):
    W = np.asarray(W, dtype=float)
    if W.ndim != 3 or W.shape[1] != W.shape[2]:
        raise ContractError(f"{name} must have shape (n, p, p), got {W.shape}")
    if not np.all(np.isfinite(W)):
        raise ContractError(f"{name} has non-finite entries")
    return W


def support(W):
    """Boolean edge indicator of ``W`` with the diagonal cleared."""
    G = np.asarray(W) != 0
    G = G.copy()
    idx = np.arange(G.shape[-1])
    G[..., idx, idx] = False
    return G


def edges_to_graph(edges, p):
    G = np.zeros((p, p), dtype=bool)
    for j, k in edges:
        if j == k:
            raise ContractError("self-loops are not allowed")
        G[j, k] = True
    return G


def graph_to_edges(G):
    return [(int(j), int(k)) for j, k in zip(*np.nonzero(G))]


def topological_order(G):
    """Kahn elimination; returns a node order, or None if ``G`` has a cycle."""
    G = support(G)
    p = G.shape[0]
    indeg = G.sum(axis=0)
    ready = [j for j in range(p) if indeg[j] == 0]
    order = []
    while ready:
        j = ready.pop(0)
        order.append(j)
        for k in np.flatnonzero(G[j]):
            indeg[k] -= 1
            if indeg[k] == 0:
                ready.append(int(k))
    return order if len(order) == p else None


def is_acyclic(G):
    """True iff the directed graph with adjacency ``G`` has no cycle."""
    G = support(G)
    # peel sources until nothing is left (acyclic) or nothing can be peeled
    alive = np.ones(G.shape[0], dtype=bool)
    while alive.any():
        sub = G[np.ix_(alive, alive)]
        sources = ~sub.any(axis=0)
        if not sources.any():
            return False
        alive[np.flatnonzero(alive)[sources]] = False
    return True


def spectral_radius_squared(W, max_iters=RADIUS_MAX_ITERS, tol=RADIUS_TOL):
    """Spectral radius of ``W * W`` (elementwise square).

    ``sI - W*W`` has positive unpivoted elimination pivots iff the radius is
    below ``s``, so the radius is bracketed by bisection on ``s`` between 0
    and the largest row sum. Acyclic supports are nilpotent and return
    exactly 0.
    """
    W = as_adjacency(W)
    B = W * W
    if not np.diag(B).any() and is_acyclic(B):
        return 0.0
    work = np.empty_like(B)
    lo, hi = 0.0, 2.0 * B.sum(axis=1).max()
    for _ in range(max_iters):
        if hi - lo <= tol * hi:
            return 0.5 * (lo + hi)
        mid = 0.5 * (lo + hi)
        inside, _ = _kernels.factor(W, mid, work)
        if inside:
            hi = mid
        else:
            lo = mid
    raise SolverError(f"spectral radius bracket did not close in {max_iters} steps")


def threshold_to_dag(W):
    """Zero the smallest-magnitude entries until the support is acyclic.

    Returns ``(W_thresholded, t)``: every entry with ``|w| <= t`` is zeroed,
    and ``t`` is the smallest candidate (0 or an entry magnitude) that leaves
    an acyclic support. Acyclicity is monotone in ``t`` so a binary search
    over the sorted distinct magnitudes suffices.
    """
    W = as_adjacency(W)
    A = np.abs(W)
    np.fill_diagonal(A, 0.0)
    if is_acyclic(A > 0):
        out = W.copy()
        np.fill_diagonal(out, 0.0)
        return out, 0.0
    cands = np.unique(A[A > 0])
    lo, hi = 0, len(cands) - 1  # cands[hi] always works (empty graph)
    while lo < hi:
        mid = (lo + hi) // 2
        if is_acyclic(A > cands[mid]):
            hi = mid
        else:
            lo = mid + 1
    t = float(cands[lo])
    out = np.where(A > t, W, 0.0)
    return out, t


def threshold_batch(W):
    """Apply :func:`threshold_to_dag` to each graph of a batch."""
    W = as_batch(W)
    out = np.empty_like(W)
    ts = np.empty(W.shape[0])
    for i in range(W.shape[0]):
        out[i], ts[i] = threshold_to_dag(W[i])
    return out, ts
