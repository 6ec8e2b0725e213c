import numpy as np
import pytest

from burnmap.forest import ForestParams, train
from burnmap.spectral import N_FEATURES


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def toy_forest(n_trees=5, seed=0, n=200):
    """Small forest on random features where feature 0 carries the label."""
    r = np.random.default_rng(seed)
    X = r.uniform(0, 1, size=(n, N_FEATURES))
    y = (X[:, 0] > 0.5).astype(int)
    return train(X, y, ForestParams(n_trees=n_trees, rng_seed=seed))


@pytest.fixture(scope="session")
def small_forest():
    return toy_forest()


def stump(feature, threshold, left_fraction, right_fraction):
    from burnmap.forest import Tree

    return Tree(np.array([feature, -1, -1]), np.array([threshold, 0.0, 0.0]), np.array([1, -1, -1]),
                np.array([2, -1, -1]), np.array([0.0, left_fraction, right_fraction]))


def ramp_forest(n_trees=10, feature=0):
    """Forest whose probability is the share of thresholds (i + 0.5) / n below ``x[feature]``."""
    from burnmap.forest import ForestModel, ForestParams

    trees = [stump(feature, (i + 0.5) / n_trees, 0.0, 1.0) for i in range(n_trees)]
    return ForestModel(trees, ForestParams(n_trees=n_trees), 2, 1)
