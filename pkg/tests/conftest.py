import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_dag(rng, p, density=0.5, scale=1.0):
    """Weighted DAG with a random topological order."""
    W = np.triu(rng.uniform(-scale, scale, size=(p, p)), 1)
    W *= rng.random((p, p)) < density
    perm = rng.permutation(p)
    return W[np.ix_(perm, perm)]
