"""Synthetic contextual SEM data.

Each node ``j`` owns a center ``c_j`` in ``[-1, 1]^m``. For a context ``z``
let ``d_j = |z - c_j|``. An undirected skeleton edge ``{j, k}`` becomes
``j -> k`` with weight ``d_j - d_k`` when that gap exceeds ``phi`` (and
``k -> j`` symmetrically); otherwise it is dropped. Nodes farther from ``z``
come first in the causal order, so every graph is acyclic. Observations
follow ``x = W(z)^T x + eps`` with standard normal noise.
"""

import os
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .errors import ContractError
from .io import dump_json, load_json, read_matrix, write_matrix
from .network import DataBatch, MaskSpec, order_mask

SKELETONS = ("erdos_renyi", "scale_free")
CALIBRATION_TOL = 0.05


@dataclass
class GeneratorSpec:
    p: int
    m: int
    skeleton: str = "erdos_renyi"
    n_skeleton_edges: int = 10
    centers: Optional[np.ndarray] = None
    phi: Optional[float] = None
    target_active_edges: float = 5.0
    seed: int = 0
    edges: Optional[List[Tuple[int, int]]] = None

    def __post_init__(self):
        if self.p < 2:
            raise ContractError("p must be at least 2")
        if self.m < 1:
            raise ContractError("m must be positive")
        if self.skeleton not in SKELETONS:
            raise ContractError(f"skeleton must be one of {SKELETONS}")
        if not 0 <= self.n_skeleton_edges <= self.p * (self.p - 1) // 2:
            raise ContractError(f"cannot place {self.n_skeleton_edges} edges on {self.p} nodes")
        if not 0 <= self.target_active_edges <= self.n_skeleton_edges:
            raise ContractError("target_active_edges must lie in [0, n_skeleton_edges]")
        if self.centers is not None:
            self.centers = np.asarray(self.centers, dtype=float)
            if self.centers.shape != (self.p, self.m) or np.abs(self.centers).max() > 1:
                raise ContractError("centers must be p points in [-1, 1]^m")
        if self.phi is not None and not self.phi >= 0:
            raise ContractError("phi must be nonnegative")

    def to_dict(self):
        return {
            "p": self.p, "m": self.m, "skeleton": self.skeleton,
            "n_skeleton_edges": self.n_skeleton_edges,
            "centers": None if self.centers is None else self.centers.tolist(),
            "phi": self.phi, "target_active_edges": self.target_active_edges,
            "seed": self.seed,
            "edges": None if self.edges is None else [list(e) for e in self.edges],
        }


def _structure_rng(seed, tag):
    # structure draws live on their own streams, away from the split seeds
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag]))


def sample_skeleton(spec, rng=None):
    """Exactly ``n_skeleton_edges`` undirected edges as sorted ``(j, k)`` pairs, j < k."""
    rng = _structure_rng(spec.seed, 1) if rng is None else rng
    p, budget = spec.p, spec.n_skeleton_edges
    pairs = [(j, k) for j in range(p) for k in range(j + 1, p)]
    if spec.skeleton == "erdos_renyi":
        pick = rng.choice(len(pairs), size=budget, replace=False)
        return sorted(pairs[i] for i in pick)
    # preferential attachment: each new node links to one existing node
    edges = set()
    deg = np.zeros(p)
    for v in range(1, p):
        w = deg[:v] + 1.0
        u = int(rng.choice(v, p=w / w.sum()))
        edges.add((u, v))
        deg[u] += 1
        deg[v] += 1
    edges = sorted(edges)
    while len(edges) > budget:
        edges.pop(int(rng.integers(len(edges))))
    while len(edges) < budget:
        deg = np.zeros(p)
        for j, k in edges:
            deg[j] += 1
            deg[k] += 1
        free = [e for e in pairs if e not in set(edges)]
        w = np.array([(deg[j] + 1) * (deg[k] + 1) for j, k in free])
        edges.append(free[int(rng.choice(len(free), p=w / w.sum()))])
        edges.sort()
    return edges


def distances(z, centers):
    z = np.atleast_2d(np.asarray(z, dtype=float))
    return np.linalg.norm(z[:, None, :] - centers[None, :, :], axis=2)


def orient_batch(edges, centers, phi, z):
    """Weighted graphs ``(n, p, p)`` for each row of ``z``."""
    d = distances(z, centers)
    n, p = d.shape
    W = np.zeros((n, p, p))
    for j, k in edges:
        gap = d[:, j] - d[:, k]
        fwd = gap > phi
        bwd = -gap > phi
        W[fwd, j, k] = gap[fwd]
        W[bwd, k, j] = -gap[bwd]
    return W


def orient_and_weight(edges, spec, z):
    """Weighted graph for a single context ``z``."""
    z = np.asarray(z, dtype=float).reshape(1, -1)
    return orient_batch(edges, spec.centers, spec.phi, z)[0]


def mean_active(edges, centers, phi, z):
    """Average number of active skeleton edges over the contexts ``z``."""
    return float((orient_batch(edges, centers, phi, z) != 0).sum(axis=(1, 2)).mean())


def calibrate_phi(spec, edges, mc_samples=10_000, rng=None):
    """Bisect ``phi`` until the Monte Carlo mean active edge count is near the target."""
    rng = _structure_rng(spec.seed, 3) if rng is None else rng
    z = rng.uniform(-1, 1, size=(mc_samples, spec.m))
    target = spec.target_active_edges
    if not edges:
        return 0.0
    d = distances(z, spec.centers)
    gaps = np.abs(np.stack([d[:, j] - d[:, k] for j, k in edges], axis=1))
    count = lambda phi: float((gaps > phi).sum(axis=1).mean())
    lo, hi = 0.0, float(gaps.max())
    if count(lo) <= target + CALIBRATION_TOL:
        return lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        c = count(mid)
        if abs(c - target) <= CALIBRATION_TOL and target > 0:
            return mid
        if c > target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    return hi


def make_generator(p, m, skeleton="erdos_renyi", n_skeleton_edges=10,
                   target_active_edges=5.0, seed=0, mc_samples=10_000):
    """Draw skeleton and centers, then calibrate ``phi``."""
    spec = GeneratorSpec(p, m, skeleton, n_skeleton_edges, None, None,
                         target_active_edges, seed)
    spec.edges = sample_skeleton(spec)
    spec.centers = _structure_rng(seed, 2).uniform(-1, 1, size=(p, m))
    spec.phi = calibrate_phi(spec, spec.edges, mc_samples)
    return spec


@dataclass
class GroundTruth:
    W: np.ndarray  # (n, p, p)
    orders: np.ndarray  # (n, p), parents first

    @property
    def graphs(self):
        return self.W != 0

    def masks(self):
        return np.stack([order_mask(o) for o in self.orders]) if len(self.orders) else \
            np.zeros((0,) + self.W.shape[1:])

    def mask_spec(self):
        return MaskSpec("per_observation", masks=self.masks())

    def subset(self, idx):
        return GroundTruth(self.W[idx], self.orders[idx])

    def to_dict(self, spec):
        obs = []
        for Wi, o in zip(self.W, self.orders):
            j, k = np.nonzero(Wi)
            obs.append({"edges": [[int(a), int(b)] for a, b in zip(j, k)],
                        "weights": [float(v) for v in Wi[j, k]],
                        "order": [int(v) for v in o]})
        d = spec.to_dict()
        d["observations"] = obs
        return d

    @classmethod
    def from_dict(cls, d):
        p = int(d["p"])
        obs = d["observations"]
        W = np.zeros((len(obs), p, p))
        orders = np.zeros((len(obs), p), dtype=int)
        for i, o in enumerate(obs):
            for (j, k), w in zip(o["edges"], o["weights"]):
                W[i, j, k] = w
            orders[i] = o["order"]
        return cls(W, orders)


def _sem(W, eps):
    p = W.shape[1]
    A = np.eye(p)[None] - np.transpose(W, (0, 2, 1))
    return np.linalg.solve(A, eps[..., None])[..., 0]


def sample_dataset(spec, n, seed=None):
    """Contexts, observations and per-observation truth for one split."""
    if spec.edges is None or spec.centers is None or spec.phi is None:
        raise ContractError("generator needs edges, centers and phi (see make_generator)")
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    z = rng.uniform(-1, 1, size=(n, spec.m))
    eps = rng.standard_normal(size=(n, spec.p))
    W = orient_batch(spec.edges, spec.centers, spec.phi, z)
    d = distances(z, spec.centers)
    orders = np.argsort(-d, axis=1, kind="stable")
    x = _sem(W, eps) if n else np.zeros((0, spec.p))
    return DataBatch(x, z), GroundTruth(W, orders)


def sample_fixed_dataset(spec, n, seed=None):
    """Like :func:`sample_dataset` but with one graph frozen at a single context draw."""
    if spec.edges is None or spec.centers is None or spec.phi is None:
        raise ContractError("generator needs edges, centers and phi (see make_generator)")
    z0 = _structure_rng(spec.seed, 4).uniform(-1, 1, size=(1, spec.m))
    W0 = orient_batch(spec.edges, spec.centers, spec.phi, z0)[0]
    order0 = np.argsort(-distances(z0, spec.centers)[0], kind="stable")
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    z = rng.uniform(-1, 1, size=(n, spec.m))
    eps = rng.standard_normal(size=(n, spec.p))
    W = np.broadcast_to(W0, (n, spec.p, spec.p)).copy()
    x = _sem(W, eps) if n else np.zeros((0, spec.p))
    return DataBatch(x, z), GroundTruth(W, np.tile(order0, (n, 1)))


def sample_splits(spec, sizes, fixed=False):
    """Independent train/validation/test splits seeded ``seed + {0, 1, 2}``."""
    draw = sample_fixed_dataset if fixed else sample_dataset
    return [draw(spec, n, spec.seed + i) for i, n in enumerate(sizes)]


def dump_split(directory, data, truth, spec, config=None):
    os.makedirs(directory, exist_ok=True)
    write_matrix(os.path.join(directory, "x.csv"), data.x.reshape(data.n, spec.p), "x", config)
    write_matrix(os.path.join(directory, "z.csv"), data.z.reshape(data.n, spec.m), "z", config)
    dump_json(truth.to_dict(spec), os.path.join(directory, "truth.json"))


def load_split(directory):
    x = read_matrix(os.path.join(directory, "x.csv"))
    z = read_matrix(os.path.join(directory, "z.csv"))
    truth_path = os.path.join(directory, "truth.json")
    truth = GroundTruth.from_dict(load_json(truth_path)) if os.path.exists(truth_path) else None
    return DataBatch(x, z), truth
