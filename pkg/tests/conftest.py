import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from banditrank.data import BanditLog
from banditrank.policy import PolicyParams, init_params


def random_log(n, d, seed, n_queries=5, n_products=4):
    """Random bandit log with repeated (query, product) pairs for grouping.

    Each (query, product) pair keeps one fixed context across repeats, the
    way a real log would.
    """
    rng = np.random.default_rng(seed)
    pair_contexts = rng.standard_normal((n_queries, n_products, d))
    qs = rng.integers(0, n_queries, n)
    ps = rng.integers(0, n_products, n)
    return BanditLog(
        query_ids=[f"q{i}" for i in qs],
        product_ids=[f"p{i}" for i in ps],
        contexts=pair_contexts[qs, ps],
        actions=rng.integers(0, 2, n),
        propensities=rng.uniform(0.1, 1.0, n),
        deltas=rng.integers(0, 2, n),
    )


def identity_policy(d=1):
    """Linear policy whose show-probability is sigmoid of the first feature."""
    w = np.zeros((2, d))
    w[1, 0] = 1.0
    return PolicyParams("linear", [w, np.zeros(2)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
