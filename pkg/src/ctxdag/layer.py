"""Projection layer: log-det projection then l1 projection, with its Jacobian.

The backward pass needs only the signs of the surviving weights. On the
active set the Jacobian is the identity when the l1 budget is slack, and
``I - s s^T / |A|`` (``s`` the active signs) when it binds; inactive entries
get zero gradient.
"""

from dataclasses import dataclass

import numpy as np

from .acyclic import ProjectionConfig, project_logdet_batch
from .errors import ContractError
from .graph import as_batch
from .l1 import TRAIN, SparsityBudget, project_l1

BINDING_TOL = 1e-12


@dataclass(frozen=True)
class GradientContext:
    active: np.ndarray  # (n, p, p) bool
    signs: np.ndarray  # (n, p, p) in {-1, 0, 1}
    binding: bool
    kappa: float

    @property
    def active_set(self):
        return [tuple(int(v) for v in t) for t in np.argwhere(self.active)]

    @property
    def size(self):
        return int(self.active.sum())


def forward(batch_tilde, cfg=ProjectionConfig(), budget=SparsityBudget(), mode=TRAIN,
            mask=None):
    """Project a batch onto the acyclic set and the averaged l1 ball.

    With ``mask`` (an ``(n, p, p)`` 0/1 array with acyclic supports) the
    log-det step is replaced by multiplication with the mask.
    Returns ``(W_star, ctx)``.
    """
    batch_tilde = as_batch(batch_tilde)
    n, p, _ = batch_tilde.shape
    if mode == TRAIN and budget.lam == 0:
        # the l1 step zeroes everything, so the acyclic step is moot
        W_hat = np.zeros_like(batch_tilde)
    elif mask is not None:
        mask = np.asarray(mask, dtype=float)
        if mask.shape != batch_tilde.shape:
            raise ContractError(f"mask shape {mask.shape} != batch shape {batch_tilde.shape}")
        W_hat = batch_tilde * mask
        idx = np.arange(p)
        W_hat[:, idx, idx] = 0.0
    else:
        W_hat = project_logdet_batch(batch_tilde, cfg)
    if mode == TRAIN and budget.lam == 0:
        W_star, kappa = W_hat, np.inf
    else:
        W_star, kappa = project_l1(W_hat, budget, mode)
    active = W_star != 0
    # kappa is a constant of the layer at inference time, so it never couples entries
    binding = mode == TRAIN and kappa > BINDING_TOL and bool(active.any())
    ctx = GradientContext(active, np.sign(W_star).astype(np.int8), binding, float(kappa))
    return W_star, ctx


def backward(upstream, ctx):
    """Map dL/dW_star to dL/dW_tilde using the active-set Jacobian."""
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != ctx.active.shape:
        raise ContractError(f"upstream shape {upstream.shape} != {ctx.active.shape}")
    g = np.where(ctx.active, upstream, 0.0)
    if ctx.binding:
        s = ctx.signs.astype(float)
        g -= s * (np.sum(s * g) / ctx.size)
    return g
