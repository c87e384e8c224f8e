import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctxdag.errors import ContractError
from ctxdag.graph import (as_adjacency, edges_to_graph, graph_to_edges, is_acyclic,
                          spectral_radius_squared, support, threshold_batch,
                          threshold_to_dag, topological_order)

from conftest import random_dag


def brute_acyclic(G):
    # a graph is acyclic iff its adjacency matrix is nilpotent
    A = (np.asarray(G) != 0).astype(float)
    return not np.any(np.linalg.matrix_power(A, A.shape[0]) > 0)


def test_contract_errors():
    with pytest.raises(ContractError):
        as_adjacency(np.zeros((2, 3)))
    with pytest.raises(ContractError):
        as_adjacency(np.array([[0, np.nan], [0, 0]]))


def test_edges_round_trip():
    G = edges_to_graph([(0, 1), (2, 0)], 3)
    assert graph_to_edges(G) == [(0, 1), (2, 0)]
    with pytest.raises(ContractError):
        edges_to_graph([(1, 1)], 3)


def test_acyclic_examples():
    assert is_acyclic(np.zeros((3, 3)))
    assert not is_acyclic(np.array([[0, 1], [1, 0]]))
    three = edges_to_graph([(0, 1), (1, 2), (2, 0)], 3)
    assert not is_acyclic(three)
    assert topological_order(three) is None
    assert topological_order(edges_to_graph([(2, 1), (1, 0)], 3)) == [2, 1, 0]


def test_support_ignores_diagonal():
    assert not support(np.eye(3)).any()


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 7), st.floats(0.05, 0.9))
def test_acyclicity_matches_nilpotency(seed, p, density):
    rng = np.random.default_rng(seed)
    G = rng.random((p, p)) < density
    np.fill_diagonal(G, False)
    assert is_acyclic(G) == brute_acyclic(G)
    order = topological_order(G)
    assert (order is not None) == is_acyclic(G)
    if order is not None:
        pos = np.argsort(order)
        j, k = np.nonzero(G)
        assert np.all(pos[j] < pos[k])


def test_spectral_radius_examples():
    assert spectral_radius_squared(np.array([[0, 0.5], [0.5, 0]])) == pytest.approx(0.25, rel=1e-7)
    assert spectral_radius_squared(np.triu(np.ones((4, 4)), 1)) == 0.0
    # a nonzero diagonal is a self-loop, so no nilpotent shortcut
    assert spectral_radius_squared(np.diag([0.3, 0.0])) == pytest.approx(0.09, rel=1e-7)


def test_spectral_radius_matches_eigvals(rng):
    for _ in range(300):
        p = int(rng.integers(2, 9))
        W = rng.normal(size=(p, p)) * (rng.random((p, p)) < 0.6)
        ref = np.max(np.abs(np.linalg.eigvals(W * W)))
        assert spectral_radius_squared(W) == pytest.approx(ref, rel=1e-6, abs=1e-12)


def test_threshold_examples():
    W, t = threshold_to_dag(np.array([[0, 1.0], [0.01, 0]]))
    assert t == 0.01
    assert np.array_equal(W, [[0, 1.0], [0, 0]])
    W, t = threshold_to_dag(np.array([[0, 1.0], [1.0, 0]]))
    assert t == 1.0 and not W.any()
    D = np.array([[0, 0.5, 0], [0, 0, 0.2], [0, 0, 0]])
    W, t = threshold_to_dag(D)
    assert t == 0.0 and np.array_equal(W, D)


def test_threshold_is_minimal(rng):
    for _ in range(100):
        p = int(rng.integers(2, 7))
        A = rng.uniform(-1, 1, size=(p, p))
        np.fill_diagonal(A, 0)
        W, t = threshold_to_dag(A)
        assert is_acyclic(W)
        assert np.all(np.abs(W[W != 0]) > t)
        # any smaller candidate keeps a cycle
        mags = np.unique(np.abs(A[A != 0]))
        smaller = mags[mags < t]
        if len(smaller):
            assert not is_acyclic(np.abs(A) > smaller[-1])
        elif t > 0:
            assert not is_acyclic(A != 0)


def test_threshold_batch(rng):
    B = np.stack([random_dag(rng, 4) for _ in range(3)])
    out, ts = threshold_batch(B)
    assert np.array_equal(out, B) and not ts.any()
