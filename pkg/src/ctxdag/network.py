"""Feedforward map from contextual features to weighted adjacency matrices.

Hidden layers are affine maps followed by ReLU; the output layer is affine
with ``p * (p - 1)`` units that fill the off-diagonal slots of a ``p x p``
matrix in row-major order. Gradients are computed by hand.
"""

import json
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import layer
from .acyclic import ProjectionConfig
from .errors import ContractError
from .graph import is_acyclic
from .l1 import INFERENCE, TRAIN, SparsityBudget

FORMAT_VERSION = 1


def offdiag_index(p):
    """Row-major (rows, cols) of the off-diagonal slots."""
    return np.nonzero(~np.eye(p, dtype=bool))


def unflatten(flat, p):
    flat = np.asarray(flat, dtype=float)
    out = np.zeros(flat.shape[:-1] + (p, p))
    rows, cols = offdiag_index(p)
    out[..., rows, cols] = flat
    return out


def flatten(W):
    W = np.asarray(W)
    rows, cols = offdiag_index(W.shape[-1])
    return W[..., rows, cols]


@dataclass
class DataBatch:
    x: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        if self.z.ndim == 1:
            self.z = self.z[:, None]
        if self.x.ndim != 2 or self.z.ndim != 2:
            raise ContractError("x and z must be 2-D arrays")
        if self.x.shape[0] != self.z.shape[0]:
            raise ContractError("x and z must have the same number of rows")

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    @property
    def m(self):
        return self.z.shape[1]

    def subset(self, idx):
        return DataBatch(self.x[idx], self.z[idx])


@dataclass
class MaskSpec:
    """Binary masks standing in for the acyclicity projection.

    ``fixed_order`` allows ``j -> k`` iff ``j`` precedes ``k`` in ``order``;
    ``per_observation`` carries one ``(p, p)`` mask per row of the data.
    """

    kind: str = "none"
    order: Optional[List[int]] = None
    masks: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("none", "fixed_order", "per_observation"):
            raise ContractError(f"unknown mask kind {self.kind!r}")
        if self.kind == "fixed_order":
            if self.order is None or sorted(self.order) != list(range(len(self.order))):
                raise ContractError("fixed_order needs a permutation")
        if self.kind == "per_observation":
            if self.masks is None:
                raise ContractError("per_observation needs masks")
            self.masks = np.asarray(self.masks, dtype=float)
            for M in self.masks:
                if not is_acyclic(M != 0):
                    raise ContractError("every mask must have an acyclic support")

    def batch(self, n, p):
        if self.kind == "none":
            return None
        if self.kind == "fixed_order":
            return np.broadcast_to(order_mask(self.order), (n, p, p))
        if self.masks.shape != (n, p, p):
            raise ContractError(f"mask batch {self.masks.shape} != {(n, p, p)}")
        return self.masks

    def subset(self, idx):
        if self.kind == "per_observation":
            return MaskSpec("per_observation", masks=self.masks[idx])
        return self


def order_mask(order):
    """0/1 matrix allowing ``j -> k`` iff ``j`` comes before ``k`` in ``order``."""
    p = len(order)
    pos = np.empty(p, dtype=int)
    pos[np.asarray(order)] = np.arange(p)
    return (pos[:, None] < pos[None, :]).astype(float)


@dataclass
class NetworkWeights:
    m: int
    p: int
    hidden: Tuple[int, ...]
    layers: List[Tuple[np.ndarray, np.ndarray]]
    kappa: Optional[float] = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def init(cls, m, p, hidden=(128, 128), rng=None):
        rng = np.random.default_rng(rng)
        sizes = [m, *hidden, p * (p - 1)]
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            gain = 3.0 if last else 6.0  # ReLU layers get the Kaiming factor
            bound = np.sqrt(gain / max(fan_in, 1))
            W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            layers.append((W, np.zeros(fan_out)))
        return cls(m, p, tuple(hidden), layers)

    def copy(self):
        return NetworkWeights(self.m, self.p, self.hidden,
                              [(W.copy(), b.copy()) for W, b in self.layers],
                              self.kappa, dict(self.extra))

    def params(self):
        return [a for pair in self.layers for a in pair]

    def set_params(self, arrays):
        it = iter(arrays)
        self.layers = [(next(it), next(it)) for _ in self.layers]

    def to_dict(self):
        d = {
            "version": FORMAT_VERSION,
            "m": self.m,
            "p": self.p,
            "hidden": list(self.hidden),
            "layers": [{"w": W.tolist(), "b": b.tolist()} for W, b in self.layers],
            "kappa": self.kappa,
        }
        d.update(self.extra)
        return d

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != FORMAT_VERSION:
            raise ContractError(f"unsupported weights version {d.get('version')!r}")
        layers = [(np.array(L["w"], dtype=float).reshape(-1, len(L["b"])),
                   np.array(L["b"], dtype=float)) for L in d["layers"]]
        known = {"version", "m", "p", "hidden", "layers", "kappa"}
        extra = {k: v for k, v in d.items() if k not in known}
        kappa = d.get("kappa")
        net = cls(int(d["m"]), int(d["p"]), tuple(d["hidden"]), layers,
                  None if kappa is None else float(kappa), extra)
        if layers[-1][1].size != net.p * (net.p - 1):
            raise ContractError("final layer width must be p * (p - 1)")
        return net

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def net_forward(weights, z, return_cache=False):
    """Map ``(n, m)`` features to an ``(n, p, p)`` batch with zero diagonals."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 2 or z.shape[1] != weights.m:
        raise ContractError(f"expected z with {weights.m} columns, got shape {z.shape}")
    acts = [z]
    h = z
    for i, (W, b) in enumerate(weights.layers):
        h = h @ W + b
        if i < len(weights.layers) - 1:
            h = np.maximum(h, 0.0)
        acts.append(h)
    out = unflatten(h, weights.p)
    if return_cache:
        return out, acts
    return out


def net_backward(weights, acts, grad_out):
    """Backpropagate ``dL/d(flat output)`` through the layers."""
    grads = []
    g = grad_out
    for i in range(len(weights.layers) - 1, -1, -1):
        W, _ = weights.layers[i]
        a_in = acts[i]
        grads.append((a_in.T @ g, g.sum(axis=0)))
        if i > 0:
            g = (g @ W.T) * (acts[i] > 0)
    grads.reverse()
    return [a for pair in grads for a in pair]


def sem_loss(x, W):
    """Mean squared residual ``(1/n) sum_i |x_i - W_i^T x_i|^2``."""
    R = np.einsum("nj,njk->nk", x, W) - x
    return float(np.mean(np.sum(R * R, axis=1))), R


@dataclass
class ForwardArtifacts:
    W_tilde: np.ndarray
    W_star: np.ndarray
    residual: np.ndarray
    acts: list
    ctx: Optional[layer.GradientContext]


def model_forward(weights, data, cfg=ProjectionConfig(), budget=SparsityBudget(),
                  mask=MaskSpec(), mode=TRAIN, project=True):
    """Network, projection layer and SEM loss in one pass.

    ``project=False`` skips the projection layer entirely (unprojected
    pretraining). Returns ``(W_star, loss, artifacts)``.
    """
    W_tilde, acts = net_forward(weights, data.z, return_cache=True)
    if data.x.shape[1] != weights.p:
        raise ContractError(f"expected x with {weights.p} columns")
    if project:
        W_star, ctx = layer.forward(W_tilde, cfg, budget, mode,
                                    mask=mask.batch(data.n, weights.p))
    else:
        W_star, ctx = W_tilde, None
    loss, R = sem_loss(data.x, W_star)
    return W_star, loss, ForwardArtifacts(W_tilde, W_star, R, acts, ctx)


def model_backward(weights, data, art):
    """Gradient of the loss with respect to every network parameter."""
    n, p = data.x.shape
    gW = (2.0 / n) * np.einsum("nj,nk->njk", data.x, art.residual)
    if art.ctx is not None:
        gW = layer.backward(gW, art.ctx)
    return net_backward(weights, art.acts, flatten(gW))


def predict(weights, z, cfg=ProjectionConfig(), mask=MaskSpec()):
    """Inference-mode graphs for new features using the cached kappa."""
    z = np.asarray(z, dtype=float)
    W_tilde = net_forward(weights, z)
    budget = SparsityBudget(kappa=0.0 if weights.kappa is None else weights.kappa)
    W_star, _ = layer.forward(W_tilde, cfg, budget, INFERENCE,
                              mask=mask.batch(z.shape[0], weights.p))
    return W_star
