"""Euclidean projection of a batch onto the averaged l1 ball."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, ContractError

TRAIN = "train"
INFERENCE = "inference"


@dataclass
class SparsityBudget:
    """l1 budget ``lam`` (averaged over the batch) and the cached threshold."""

    lam: float = np.inf
    kappa: Optional[float] = None

    def __post_init__(self):
        if not self.lam >= 0:
            raise ContractError("lambda must be nonnegative")
        if self.kappa is not None and not self.kappa >= 0:
            raise ContractError("kappa must be nonnegative")


def soft_threshold(w, kappa):
    w = np.asarray(w, dtype=float)
    return np.sign(w) * np.maximum(np.abs(w) - kappa, 0.0)


def compute_kappa(batch, lam):
    """Threshold that puts the soft-thresholded batch on the ball of radius ``n*lam``.

    Sort all magnitudes in non-increasing order ``u``; ``k_max`` is the last
    ``k`` with ``u_k > (sum_{j<=k} u_j - n*lam) / k``.
    """
    batch = np.asarray(batch, dtype=float)
    if not lam >= 0:
        raise ContractError("lambda must be nonnegative")
    n = batch.shape[0] if batch.ndim == 3 else 1
    u = np.abs(batch).ravel()
    radius = n * lam
    if u.sum() <= radius:
        return 0.0
    if radius == 0:
        return float(u.max())
    u = np.sort(u)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, u.size + 1)
    k_max = np.flatnonzero(u > (css - radius) / k)[-1] + 1
    return float((css[k_max - 1] - radius) / k_max)


def project_l1(batch, budget, mode=TRAIN):
    """Soft-threshold a batch; returns ``(projected, kappa)``.

    In train mode ``kappa`` is computed from the batch and the averaged l1
    norm of the result is at most ``budget.lam``. In inference mode the cached
    ``budget.kappa`` is applied as is.
    """
    batch = np.asarray(batch, dtype=float)
    if mode == TRAIN:
        kappa = 0.0 if np.isinf(budget.lam) else compute_kappa(batch, budget.lam)
    elif mode == INFERENCE:
        if budget.kappa is None:
            raise ConfigError("inference mode needs a cached kappa")
        kappa = float(budget.kappa)
    else:
        raise ContractError(f"unknown mode {mode!r}")
    if kappa == 0.0:
        return batch.copy(), 0.0
    return soft_threshold(batch, kappa), kappa
