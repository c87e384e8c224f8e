"""Pathwise training of the contextual model and the three baselines.

Every fit is full-batch Adam with early stopping on the validation loss and
best-weights checkpointing. The path first fits with no l1 budget, sets the
top of the lambda grid to the mean l1 norm of that fit, then walks the grid
linearly down to zero, warm-starting each fit from the previous one.
"""

import math
import time
from dataclasses import dataclass, field, replace
from typing import List, Tuple

import numpy as np
from sklearn.cluster import KMeans

from . import layer
from .acyclic import ProjectionConfig
from .errors import ConfigError, ContractError, TrainingError
from .evaluation import mean_edges
from .graph import threshold_to_dag, topological_order
from .l1 import INFERENCE, TRAIN, SparsityBudget
from .network import (MaskSpec, NetworkWeights, model_backward, model_forward,
                      net_forward, predict)

LOG_COLUMNS = ["epoch", "lambda", "train_loss", "val_loss", "mean_edges", "wall_time_ms"]

# cheaper solver settings for training loops; the supports it returns are
# acyclic all the same, only the path iterate is less converged
TRAINING_PROJECTION = ProjectionConfig(step_constant=2.0, inner_tol=1e-4,
                                       inner_max_iters=200)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    patience: int = 10
    path_length: int = 20
    max_epochs: int = 1000
    seed: int = 0
    hidden: Tuple[int, ...] = (128, 128)
    pretrain: bool = True
    projection: ProjectionConfig = TRAINING_PROJECTION
    fixed_learning_rate: float = 1e-2
    cluster_size: int = 100
    kmeans_restarts: int = 20
    kmeans_max_iter: int = 100

    def __post_init__(self):
        if self.patience < 1:
            raise ConfigError("patience must be at least 1")
        if self.path_length < 2:
            raise ConfigError("path_length must be at least 2")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be at least 1")
        if not self.learning_rate > 0 or not self.fixed_learning_rate > 0:
            raise ConfigError("learning rates must be positive")
        if self.cluster_size < 1:
            raise ConfigError("cluster_size must be positive")

    def with_updates(self, **kw):
        return replace(self, **kw)


class Adam:
    def __init__(self, params, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class FitTrace:
    epochs: int
    best_epoch: int
    best_val: float
    rows: list


# -- generic early-stopping loop ------------------------------------------------

def _fit(params_of, step_fn, val_fn, cfg, lr, lam, log, copy_fn):
    """Shared loop. ``step_fn`` returns (train_loss, grads, state) at the current
    parameters; ``val_fn(state)`` returns (val_loss, mean_edges)."""
    params = params_of()
    opt = Adam(params, lr)
    best, best_state, best_epoch, wait = np.inf, None, -1, 0
    rows = []
    t0 = time.perf_counter()
    epoch = 0
    for epoch in range(cfg.max_epochs):
        loss, grads, state = step_fn()
        if not np.isfinite(loss):
            raise TrainingError(f"training loss became {loss} at epoch {epoch}")
        val, edges = val_fn(state)
        rows.append([epoch, lam, loss, val, edges, (time.perf_counter() - t0) * 1e3])
        if val < best:
            best, best_state, best_epoch, wait = val, copy_fn(state), epoch, 0
        else:
            wait += 1
            if wait >= cfg.patience:
                break
        opt.step(params_of(), grads)
    if log is not None:
        log.extend(rows)
    return best_state, FitTrace(epoch + 1, best_epoch, best, rows)


# -- contextual network -----------------------------------------------------------

def _net_fit(weights, train, val, cfg, lam, mask_train, mask_val, project, log, lr=None):
    weights = weights.copy()
    pcfg = cfg.projection
    budget = SparsityBudget(lam=lam)

    def step_fn():
        _, loss, art = model_forward(weights, train, pcfg, budget, mask_train, TRAIN, project)
        grads = model_backward(weights, train, art)
        kappa = art.ctx.kappa if art.ctx is not None else None
        return loss, grads, kappa

    def val_fn(kappa):
        if not project:
            W = net_forward(weights, val.z)
            _, loss, _ = _loss_only(W, val)
            return loss, float("nan")
        W, _ = layer.forward(net_forward(weights, val.z), pcfg,
                             SparsityBudget(kappa=kappa), INFERENCE,
                             mask=mask_val.batch(val.n, weights.p))
        _, loss, _ = _loss_only(W, val)
        return loss, mean_edges(W)

    def copy_fn(kappa):
        w = weights.copy()
        w.kappa = kappa
        return w

    best, trace = _fit(weights.params, step_fn, val_fn, cfg,
                       lr or cfg.learning_rate, lam, log, copy_fn)
    return best, trace


def _loss_only(W, data):
    R = np.einsum("nj,njk->nk", data.x, W) - data.x
    return W, float(np.mean(np.sum(R * R, axis=1))) if data.n else 0.0, R


def pretrain_unprojected(train, val=None, cfg=TrainConfig(), log=None):
    """Fit the network on the raw (unprojected) output; returns the weights."""
    val = train if val is None else val
    weights = NetworkWeights.init(train.m, train.p, cfg.hidden, cfg.seed)
    best, _ = _net_fit(weights, train, val, cfg, np.inf, MaskSpec(), MaskSpec(),
                       False, log)
    best.kappa = None
    return best


@dataclass
class PathEntry:
    lam: float
    model: object
    val_loss: float
    mean_edges: float
    epochs: int


@dataclass
class PathResult:
    entries: List[PathEntry]
    log: list = field(default_factory=list)

    @property
    def lambdas(self):
        return [e.lam for e in self.entries]

    @property
    def total_epochs(self):
        return sum(e.epochs for e in self.entries)

    def entry(self, lam):
        for e in self.entries:
            if e.lam == lam:
                return e
        raise ContractError(f"no path entry with lambda {lam}")

    def to_dict(self):
        return {"entries": [{"lambda": e.lam, "val_loss": e.val_loss,
                             "mean_edges": e.mean_edges, "epochs": e.epochs,
                             "model": e.model.to_dict()} for e in self.entries]}


def lambda_grid(lam1, T):
    """``T`` values from ``lam1`` down to 0, linearly spaced."""
    return np.linspace(lam1, 0.0, T)


def _run_path(first_fit, refit, l1_of, T, warm_start=True):
    model, trace, val_loss, edges = first_fit()
    lam1 = l1_of(model)
    entries = [PathEntry(float(lam1), model, val_loss, edges, trace.epochs)]
    start = model
    for lam in lambda_grid(lam1, T)[1:]:
        model, trace, val_loss, edges = refit(start if warm_start else None, float(lam))
        entries.append(PathEntry(float(lam), model, val_loss, edges, trace.epochs))
        start = model
    return entries


class ContextualModel:
    """Network weights plus how masks are supplied at prediction time."""

    method = "contextual"

    def __init__(self, weights, projection=TRAINING_PROJECTION, mask_kind="none", order=None):
        self.weights = weights
        self.projection = projection
        self.mask_kind = mask_kind
        self.order = order
        if mask_kind == "fixed_order":
            self.method = "sorted_fixed"
        elif mask_kind == "truth":
            self.method = "sorted_truth"

    def mask_for(self, n, truth=None):
        if self.mask_kind == "fixed_order":
            return MaskSpec("fixed_order", order=list(self.order))
        if self.mask_kind == "truth":
            if truth is None:
                raise ContractError("the truth-sorted model needs ground-truth orders")
            return truth.mask_spec()
        return MaskSpec()

    def predict(self, z, truth=None):
        z = np.asarray(z, dtype=float)
        return predict(self.weights, z, self.projection, self.mask_for(len(z), truth))

    def to_dict(self):
        d = self.weights.to_dict()
        if self.mask_kind != "none":
            d["mask"] = {"kind": self.mask_kind,
                         "order": None if self.order is None else [int(v) for v in self.order]}
        d["projection"] = _projection_dict(self.projection)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        mask = d.pop("mask", None) or {"kind": "none", "order": None}
        proj = d.pop("projection", None)
        pcfg = ProjectionConfig(**proj) if proj else TRAINING_PROJECTION
        return cls(NetworkWeights.from_dict(d), pcfg, mask["kind"], mask.get("order"))


def _projection_dict(cfg):
    return {k: getattr(cfg, k) for k in ("s", "mu0", "alpha", "T", "step_constant",
                                         "inner_tol", "inner_max_iters", "max_halvings")}


def _mean_l1(weights, data, cfg, mask):
    W = predict(weights, data.z, cfg.projection, mask)
    return float(np.abs(W).sum() / max(data.n, 1))


def fit_path(train, val, cfg=TrainConfig(), mask=None, init=None, log=None,
             warm_start=True, mask_val=None):
    """Contextual (or masked) model over the lambda path.

    ``mask``/``mask_val`` are :class:`MaskSpec` for the two splits; when
    omitted the acyclicity projection is used. ``init`` overrides the
    preliminary unprojected fit.
    """
    mask = MaskSpec() if mask is None else mask
    mask_val = mask if mask_val is None else mask_val
    log = [] if log is None else log
    if init is None:
        init = pretrain_unprojected(train, val, cfg) if cfg.pretrain else \
            NetworkWeights.init(train.m, train.p, cfg.hidden, cfg.seed)

    def one(start, lam):
        start = init if start is None else start.weights
        w, trace = _net_fit(start, train, val, cfg, lam, mask, mask_val, True, log)
        return _wrap(w), trace, trace.best_val, _val_edges(w)

    def _wrap(w):
        kind = mask.kind if mask.kind != "per_observation" else "truth"
        return ContextualModel(w, cfg.projection, kind, mask.order)

    def _val_edges(w):
        return mean_edges(predict(w, val.z, cfg.projection, mask_val))

    entries = _run_path(lambda: one(None, np.inf),
                        one,
                        lambda mdl: _mean_l1(mdl.weights, train, cfg, mask),
                        cfg.path_length, warm_start)
    return PathResult(entries, log)


# -- fixed DAG --------------------------------------------------------------------

class FixedModel:
    method = "fixed"

    def __init__(self, W):
        self.W = np.asarray(W, dtype=float)

    def predict(self, z, truth=None):
        return np.broadcast_to(self.W, (len(z),) + self.W.shape).copy()

    def to_dict(self):
        return {"version": 1, "kind": "fixed", "p": int(self.W.shape[0]), "W": self.W.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["W"], dtype=float))


def least_squares_init(data):
    """Unconstrained zero-diagonal regression of each node on the others."""
    X = data.x
    p = X.shape[1]
    W = np.zeros((p, p))
    for k in range(p):
        others = [j for j in range(p) if j != k]
        if not others:
            continue
        coef, *_ = np.linalg.lstsq(X[:, others], X[:, k], rcond=None)
        W[others, k] = coef
    return W


def _fixed_fit(W_tilde, train, val, cfg, lam, log):
    W_tilde = np.array(W_tilde, dtype=float)
    n = max(train.n, 1)
    S = train.x.T @ train.x / n
    budget = SparsityBudget(lam=lam)

    def step_fn():
        W_star, ctx = layer.forward(W_tilde[None], cfg.projection, budget, TRAIN)
        W = W_star[0]
        D = np.eye(train.p) - W
        loss = float(np.trace(D.T @ S @ D)) if train.n else 0.0
        g = 2.0 * (S @ W - S)
        np.fill_diagonal(g, 0.0)
        g = layer.backward(g[None], ctx)[0]
        return loss, [g], W

    def val_fn(W):
        _, loss, _ = _loss_only(W[None].repeat(val.n, 0), val)
        return loss, float(threshold_to_dag(W)[0].astype(bool).sum()) if W.any() else 0.0

    best, trace = _fit(lambda: [W_tilde], step_fn, val_fn, cfg, cfg.fixed_learning_rate,
                       lam, log, lambda W: W.copy())
    return best, trace, W_tilde.copy()


def fit_fixed_dag(train, val=None, cfg=TrainConfig(), lam=np.inf, init=None, log=None):
    """Single weighted DAG for the whole sample at budget ``lam``."""
    val = train if val is None else val
    init = least_squares_init(train) if init is None else init
    W, _, _ = _fixed_fit(init, train, val, cfg, lam, log)
    return W


def fit_fixed_path(train, val, cfg=TrainConfig(), log=None, init=None):
    """Fixed DAG over the same lambda grid construction as the contextual path."""
    log = [] if log is None else log
    init = least_squares_init(train) if init is None else init
    state = {"tilde": init}

    def one(start, lam):
        W, trace, tilde = _fixed_fit(state["tilde"], train, val, cfg, lam, log)
        state["tilde"] = tilde
        return FixedModel(W), trace, trace.best_val, float((threshold_to_dag(W)[0] != 0).sum())

    entries = _run_path(lambda: one(None, np.inf), one,
                        lambda mdl: float(np.abs(mdl.W).sum()), cfg.path_length)
    return PathResult(entries, log)


# -- clustered DAG ----------------------------------------------------------------

class ClusteredModel:
    method = "clustered"

    def __init__(self, centroids, graphs):
        self.centroids = np.asarray(centroids, dtype=float)
        self.graphs = np.asarray(graphs, dtype=float)

    def assign(self, z):
        z = np.asarray(z, dtype=float)
        d = ((z[:, None, :] - self.centroids[None]) ** 2).sum(axis=2)
        return np.argmin(d, axis=1)

    def predict(self, z, truth=None):
        return self.graphs[self.assign(z)]

    def to_dict(self):
        return {"version": 1, "kind": "clustered", "centroids": self.centroids.tolist(),
                "graphs": self.graphs.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["centroids"], d["graphs"])


def n_clusters(n, cluster_size=100):
    return max(1, math.ceil(n / cluster_size))


def fit_clusters(z, cfg=TrainConfig()):
    k = min(n_clusters(len(z), cfg.cluster_size), len(z))
    km = KMeans(n_clusters=k, n_init=cfg.kmeans_restarts, max_iter=cfg.kmeans_max_iter,
                random_state=cfg.seed).fit(z)
    # drop clusters left empty (possible with duplicated z) and relabel densely
    used = np.unique(km.labels_)
    relabel = np.full(k, -1)
    relabel[used] = np.arange(len(used))
    return km.cluster_centers_[used], relabel[km.labels_]


def fit_clustered_path(train, val, cfg=TrainConfig(), log=None):
    """k-means on z, then a fixed-DAG path per cluster.

    Path entry ``t`` combines every cluster's ``t``-th fit; its ``lam`` is the
    fraction of each cluster's top budget (1 down to 0), since the clusters
    have their own grids.
    """
    centroids, labels = fit_clusters(train.z, cfg)
    model0 = ClusteredModel(centroids, np.zeros((len(centroids), train.p, train.p)))
    val_labels = model0.assign(val.z)
    paths = []
    for c in range(len(centroids)):
        tr = train.subset(labels == c)
        va = val.subset(val_labels == c)
        va = tr if va.n == 0 else va
        paths.append(fit_fixed_path(tr, va, cfg, log))
    fracs = lambda_grid(1.0, cfg.path_length)
    entries = []
    for t, frac in enumerate(fracs):
        graphs = np.stack([p.entries[t].model.W for p in paths])
        model = ClusteredModel(centroids, graphs)
        pred = model.predict(val.z)
        _, vloss, _ = _loss_only(pred, val)
        entries.append(PathEntry(float(frac), model, vloss, mean_edges(pred),
                                 sum(p.entries[t].epochs for p in paths)))
    return PathResult(entries, log)


def fit_clustered_dag(train, val=None, cfg=TrainConfig(), lam=np.inf):
    """One fixed DAG per k-means cluster of ``z`` at budget ``lam``."""
    val = train if val is None else val
    centroids, labels = fit_clusters(train.z, cfg)
    graphs = []
    for c in range(len(centroids)):
        tr = train.subset(labels == c)
        graphs.append(fit_fixed_dag(tr, tr, cfg, lam))
    return ClusteredModel(centroids, np.stack(graphs))


# -- sorted DAG -------------------------------------------------------------------

def order_from_fixed(W):
    """Topological order of the thresholded fixed DAG."""
    G, _ = threshold_to_dag(W)
    order = topological_order(G != 0)
    if order is None:
        raise TrainingError("fixed DAG estimate is cyclic after thresholding")
    return order


def fit_sorted_dag(train, val, cfg=TrainConfig(), mask=None, mask_val=None, log=None):
    """Masked contextual path; ``mask`` is a fixed_order or per_observation MaskSpec."""
    if mask is None or mask.kind == "none":
        raise ContractError("sorted DAG needs a fixed_order or per_observation mask")
    return fit_path(train, val, cfg, mask=mask, mask_val=mask_val, log=log)


# -- timing ----------------------------------------------------------------------

def time_epochs(data, hidden=(128, 128), epochs=10, projection=TRAINING_PROJECTION, seed=0):
    """Wall time (s) of ``epochs`` full-batch projected training steps from a fresh network."""
    w = NetworkWeights.init(data.m, data.p, tuple(hidden), seed)
    opt = Adam(w.params())
    t0 = time.perf_counter()
    for _ in range(epochs):
        _, _, art = model_forward(w, data, projection, SparsityBudget())
        opt.step(w.params(), model_backward(w, data, art))
    return time.perf_counter() - t0


# -- model files ------------------------------------------------------------------

def model_from_dict(d):
    kind = d.get("kind")
    if kind == "fixed":
        return FixedModel.from_dict(d)
    if kind == "clustered":
        return ClusteredModel.from_dict(d)
    return ContextualModel.from_dict(d)
