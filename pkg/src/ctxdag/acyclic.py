"""Projection onto the log-det acyclicity level set.

The projection follows the path-following scheme: starting from the zero
matrix, repeatedly minimise ``mu/2 |Wt - W|_F^2 + h_s(W)`` by fixed-step
gradient descent and shrink ``mu`` geometrically. The path iterate is then
snapped onto an acyclic support (largest magnitudes first, skipping edges
that close a cycle) and the input weights are restored on that support, so
the returned matrix satisfies ``h_s = 0`` to rounding.
"""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import _kernels
from .errors import ContractError, DomainError, SolverError
from .graph import as_adjacency, as_batch

FEASIBILITY_TOL = 1e-8


@dataclass(frozen=True)
class ProjectionConfig:
    """Solver knobs; ``step_constant=None`` means ``p`` (step size ``1/p``)."""

    s: float = 1.0
    mu0: float = 1.0
    alpha: float = 0.5
    T: int = 10
    step_constant: Optional[float] = None
    inner_tol: float = 1e-9
    inner_max_iters: int = 5000
    max_halvings: int = 30

    def __post_init__(self):
        if not self.s > 0:
            raise ContractError("s must be positive")
        if not self.mu0 > 0:
            raise ContractError("mu0 must be positive")
        if not 0 < self.alpha < 1:
            raise ContractError("alpha must lie in (0, 1)")
        if self.T < 1:
            raise ContractError("T must be at least 1")
        if self.step_constant is not None and not self.step_constant > 0:
            raise ContractError("step_constant must be positive")
        if self.inner_max_iters < 1 or self.max_halvings < 0:
            raise ContractError("iteration caps must be positive")

    def step(self, p):
        return 1.0 / (p if self.step_constant is None else self.step_constant)

    def with_updates(self, **kw):
        return replace(self, **kw)


def conservative_constants(W_tilde, mu):
    """(s, c) for which fixed-step descent provably never increases the objective."""
    W_tilde = as_adjacency(W_tilde)
    p = W_tilde.shape[0]
    A = np.abs(W_tilde)
    s = 1.0 + max(A.sum(axis=0).max(), A.sum(axis=1).max())
    c = max(mu / 2.0, 2.0 * np.sqrt(p) + 4.0 * p * np.linalg.norm(W_tilde))
    return s, c


def h_s(W, s=1.0):
    W = as_adjacency(W)
    inside, val = _kernels.h_value(W, float(s), np.empty_like(W))
    if not inside:
        raise DomainError("W lies outside W^s (rho(W*W) >= s)")
    return float(val)


def grad_h_s(W, s=1.0):
    """Gradient ``2 (sI - W*W)^{-T} * W``."""
    W = as_adjacency(W)
    inv = np.empty_like(W)
    inside, _ = _kernels.factor(W, float(s), inv)
    if not inside:
        raise DomainError("sI - W*W is not a nonsingular M-matrix")
    G = 2.0 * inv.T * W
    np.fill_diagonal(G, 0.0)
    return G


def path_objective(W, W_tilde, mu, s=1.0):
    W = as_adjacency(W)
    return 0.5 * mu * float(np.sum((W_tilde - W) ** 2)) + h_s(W, s)


@dataclass
class DescentResult:
    W: np.ndarray
    iterations: int
    halvings: int
    objective: float
    trace: np.ndarray


def inner_descent(W_init, W_tilde, mu, cfg=ProjectionConfig(), record=False):
    """Minimise the path objective at fixed ``mu`` starting from ``W_init``.

    Returns the final iterate. With ``record=True`` a :class:`DescentResult`
    carrying the objective sequence and the number of step halvings is
    returned instead.
    """
    W = as_adjacency(W_init, "W_init").copy()
    W_tilde = as_adjacency(W_tilde, "W_tilde")
    if W.shape != W_tilde.shape:
        raise ContractError("W_init and W_tilde shapes differ")
    p = W.shape[0]
    trace = np.empty(cfg.inner_max_iters + 1 if record else 0)
    status, iters, halvings, f = _kernels.inner_descent(
        W, W_tilde, float(mu), float(cfg.s), cfg.step(p), float(cfg.inner_tol),
        int(cfg.inner_max_iters), int(cfg.max_halvings), trace)
    if status == _kernels.NOT_MEMBER:
        raise DomainError("W_init lies outside W^s")
    if status == _kernels.ESCAPED:
        raise SolverError(f"iterate left W^s after {cfg.max_halvings} step halvings")
    if record:
        return DescentResult(W, iters, halvings, f, trace[: iters + 1].copy())
    return W


def _raise_status(status, index=None):
    if status == _kernels.ESCAPED:
        raise SolverError("iterate left W^s after all step halvings", index)
    if status == _kernels.INFEASIBLE:
        raise SolverError("projected matrix failed the feasibility check", index)
    if status != _kernels.OK:
        raise SolverError(f"solver status {status}", index)


def project_logdet(W_tilde, cfg=ProjectionConfig()):
    """Project one matrix onto the acyclic set ``{h_s = 0}``."""
    W_tilde = as_adjacency(W_tilde, "W_tilde")
    out = project_logdet_batch(W_tilde[None], cfg)
    return out[0]


def project_logdet_batch(batch, cfg=ProjectionConfig(), return_info=False):
    """Project every matrix of an ``(n, p, p)`` batch independently.

    Items run in parallel over numba threads; the result does not depend on
    the schedule. The first failing item raises :class:`SolverError` carrying
    its batch index.
    """
    batch = as_batch(batch)
    n, p, _ = batch.shape
    Wt = np.ascontiguousarray(batch, dtype=float).copy()
    idx = np.arange(p)
    Wt[:, idx, idx] = 0.0
    out = np.zeros_like(Wt)
    status = np.zeros(n, dtype=np.int64)
    iters = np.zeros(n, dtype=np.int64)
    hvals = np.zeros(n)
    if n:
        _kernels.project_batch(
            Wt, out, float(cfg.s), float(cfg.mu0), float(cfg.alpha), int(cfg.T),
            cfg.step(p), float(cfg.inner_tol), int(cfg.inner_max_iters),
            int(cfg.max_halvings), FEASIBILITY_TOL, status, iters, hvals)
    bad = np.flatnonzero(status != _kernels.OK)
    if bad.size:
        _raise_status(status[bad[0]], int(bad[0]))
    if return_info:
        return out, {"iterations": iters, "h": hvals}
    return out


def h_s_batch(batch, s=1.0):
    batch = as_batch(batch)
    ok = np.zeros(batch.shape[0], dtype=np.bool_)
    h = np.zeros(batch.shape[0])
    if batch.shape[0]:
        _kernels.h_batch(np.ascontiguousarray(batch), float(s), ok, h)
    if not ok.all():
        raise DomainError(f"batch item {int(np.flatnonzero(~ok)[0])} lies outside W^s")
    return h
