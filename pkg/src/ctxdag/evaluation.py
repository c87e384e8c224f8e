"""Structure-recovery metrics, lambda selection and report aggregation."""

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .graph import support, threshold_batch
from .io import write_csv

REPORT_COLUMNS = ["method", "n", "p", "m", "skeleton", "seed",
                  "shd_mean", "f1_mean", "edges_mean", "runtime_s"]


def _pair(truth, est):
    truth = support(np.asarray(truth) != 0)
    est = support(np.asarray(est) != 0)
    if truth.shape != est.shape:
        raise ContractError(f"graph shapes differ: {truth.shape} vs {est.shape}")
    return truth, est


def shd(truth, est):
    """Edits (add, delete, reverse; a reversal costs 1) turning ``est`` into ``truth``.

    Every unordered node pair contributes 1 when its edge state differs.
    """
    truth, est = _pair(truth, est)
    differs = (truth != est) | (truth.T != est.T)
    return int(np.triu(differs, 1).sum())


def f1(truth, est):
    """F1 over directed edges; two empty graphs score 1."""
    truth, est = _pair(truth, est)
    tp = int((truth & est).sum())
    n_true, n_est = int(truth.sum()), int(est.sum())
    if n_true == 0 and n_est == 0:
        return 1.0
    if tp == 0:
        return 0.0
    precision = tp / n_est
    recall = tp / n_true
    return 2 * precision * recall / (precision + recall)


def mean_edges(batch):
    """Average thresholded edge count of a batch of weighted graphs."""
    batch = np.asarray(batch, dtype=float)
    if batch.shape[0] == 0:
        return 0.0
    out, _ = threshold_batch(batch)
    return float(support(out).sum(axis=(1, 2)).mean())


def select_lambda(path, target_mean_edges):
    """Path entry whose mean edge count is nearest the target; ties go to the sparser one."""
    entries = list(path.entries if hasattr(path, "entries") else path)
    if not entries:
        raise ContractError("empty path")
    best = min(entries, key=lambda e: (abs(e.mean_edges - target_mean_edges),
                                       e.mean_edges, e.lam))
    return best.lam


@dataclass
class RecoveryReport:
    method: str
    n: int
    p: int
    m: int
    skeleton: str
    seed: int
    shd: np.ndarray
    f1: np.ndarray
    edges: np.ndarray
    runtime_s: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def shd_mean(self):
        return float(np.mean(self.shd)) if len(self.shd) else 0.0

    @property
    def f1_mean(self):
        return float(np.mean(self.f1)) if len(self.f1) else 1.0

    @property
    def edge_count_mean(self):
        return float(np.mean(self.edges)) if len(self.edges) else 0.0

    def standard_error(self, what="f1"):
        v = np.asarray(getattr(self, what), dtype=float)
        return float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0

    def row(self):
        return [self.method, self.n, self.p, self.m, self.skeleton, self.seed,
                self.shd_mean, self.f1_mean, self.edge_count_mean, self.runtime_s]


def evaluate_graphs(pred, truth_W, method="", n=0, m=0, skeleton="", seed=0, runtime_s=0.0):
    """Threshold predicted graphs and score each against its truth."""
    pred = np.asarray(pred, dtype=float)
    truth_W = np.asarray(truth_W, dtype=float)
    if pred.shape != truth_W.shape:
        raise ContractError(f"prediction shape {pred.shape} != truth shape {truth_W.shape}")
    est, _ = threshold_batch(pred) if len(pred) else (pred, None)
    est_G = support(est)
    true_G = support(truth_W)
    shds = np.array([shd(t, e) for t, e in zip(true_G, est_G)], dtype=int)
    f1s = np.array([f1(t, e) for t, e in zip(true_G, est_G)])
    edges = est_G.sum(axis=(1, 2)).astype(int)
    return RecoveryReport(method, int(n), pred.shape[1], int(m), skeleton, int(seed),
                          shds, f1s, edges, float(runtime_s))


def evaluate_method(model, test_data, truth, method=None, n=0, skeleton="", seed=0,
                    runtime_s=0.0):
    """Predict a graph for every test context and score it against the truth."""
    t0 = time.perf_counter()
    pred = model.predict(test_data.z, truth)
    elapsed = runtime_s or (time.perf_counter() - t0)
    return evaluate_graphs(pred, truth.W, method or getattr(model, "method", "model"),
                           n, test_data.m, skeleton, seed, elapsed)


def aggregate(reports):
    """Mean and standard error across seeds of the per-seed mean F1 and SHD."""
    f1s = np.array([r.f1_mean for r in reports])
    shds = np.array([r.shd_mean for r in reports])
    k = len(reports)
    se = lambda v: float(v.std(ddof=1) / np.sqrt(k)) if k > 1 else 0.0
    return {"f1_mean": float(f1s.mean()), "f1_se": se(f1s),
            "shd_mean": float(shds.mean()), "shd_se": se(shds), "seeds": k}


def write_report(path, reports, config=None):
    write_csv(path, REPORT_COLUMNS, [r.row() for r in reports], config)
