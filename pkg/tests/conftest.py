import os

import numpy as np
import pytest

from jointrec.data import RatingMatrix, leave_one_out_split


def make_random_matrix(seed=0, num_users=12, num_items=20, min_per_user=3, max_per_user=7):
    """Small unstructured rating matrix for contract tests."""
    rng = np.random.default_rng(seed)
    rows = []
    for u in range(num_users):
        k = int(rng.integers(min_per_user, max_per_user + 1))
        items = rng.choice(num_items, size=k, replace=False)
        for t, i in enumerate(items):
            rows.append((u, int(i), float(rng.integers(1, 6)), 100 * u + t))
    users, items, ratings, ts = zip(*rows)
    return RatingMatrix(num_users, num_items, users, items, ratings, ts)


def make_block_matrix(seed=0, num_users=80, num_items=50, per_user=12):
    """Two-taste-cluster dataset the network can actually learn.

    Users in cluster c rate items of their half highly (4-5) late in time and
    a couple of other-half items poorly (1) early, so the held-out (latest)
    item is always an in-cluster one.
    """
    rng = np.random.default_rng(seed)
    rows = []
    half = num_items // 2
    for u in range(num_users):
        cluster = u % 2
        in_items = np.arange(half) + cluster * half
        out_items = np.arange(half) + (1 - cluster) * half
        for t, i in enumerate(rng.choice(in_items, size=per_user, replace=False)):
            rows.append((u, int(i), float(rng.integers(4, 6)), 1000 + 10 * t))
        for t, i in enumerate(rng.choice(out_items, size=2, replace=False)):
            rows.append((u, int(i), 1.0, 500 + t))
    users, items, ratings, ts = zip(*rows)
    return RatingMatrix(num_users, num_items, users, items, ratings, ts)


@pytest.fixture
def random_matrix():
    return make_random_matrix()


@pytest.fixture
def random_split():
    return leave_one_out_split(make_random_matrix())


@pytest.fixture(scope="session")
def block_split():
    return leave_one_out_split(make_block_matrix())


def ml100k_path():
    """Path to the real MovieLens 100K u.data file, or None.

    Looked up from $JOINTREC_ML100K or data/ml-100k/u.data relative to the
    repository root.
    """
    env = os.environ.get("JOINTREC_ML100K")
    if env and os.path.exists(env):
        return env
    here = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    candidate = os.path.join(here, "data", "ml-100k", "u.data")
    if os.path.exists(candidate):
        return candidate
    return None


requires_ml100k = pytest.mark.skipif(
    ml100k_path() is None,
    reason="MovieLens 100K not available; place u.data at data/ml-100k/ or set JOINTREC_ML100K",
)


def aele_path():
    """Path to the Amazon Electronics ratings CSV, or None."""
    env = os.environ.get("JOINTREC_AELE")
    if env and os.path.exists(env):
        return env
    here = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    candidate = os.path.join(here, "data", "amazon-electronics", "ratings.csv")
    if os.path.exists(candidate):
        return candidate
    return None
