import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from casa import iforest
from casa.iforest import DegenerateFitError, IsolationForest, ITree, c_factor


def test_c_factor_values():
    assert c_factor(2) == pytest.approx(0.15443, abs=1e-5)
    assert c_factor(3) == pytest.approx(1.20739, abs=1e-5)
    assert c_factor(256) > c_factor(64)
    with pytest.raises(ValueError):
        c_factor(1)


def leaf(size):
    return ITree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]),
                 np.array([size]), 0)


def test_score_half_at_average_path():
    # one external node holding psi points: E[h] = c(psi)
    f = IsolationForest([leaf(32)], 32)
    assert f.anomaly_score(np.zeros(3)) == pytest.approx(0.5)
    assert f.decision_function(np.zeros(3)) == pytest.approx(0.0)


def test_two_point_single_tree():
    f = iforest.fit([[0.0], [1.0]], n_trees=1, subsample_size=2, seed=0)
    t = f.trees[0]
    assert t.height_limit == 1 and t.depth() == 1
    assert f.mean_path_length(np.array([[0.0], [1.0]])).tolist() == [1.0, 1.0]
    assert f.anomaly_score(np.array([1.0])) == pytest.approx(2 ** (-1 / c_factor(2)))


def test_duplicates_plus_one_distinct():
    x = np.vstack([np.zeros((50, 3)), [[0.0, 1.0, 0.0]]])
    f = iforest.fit(x, n_trees=20, subsample_size=64, seed=1)
    # only feature 1 has spread, so every root split isolates the odd point
    assert all(t.feature[0] == 1 for t in f.trees)
    assert np.allclose(f.mean_path_length(x[-1]), 1.0)
    assert np.allclose(f.mean_path_length(x[0]), 1.0 + c_factor(50))
    assert f.subsample_size == 51


def test_tree_invariants():
    x = np.random.default_rng(0).standard_normal((100, 4))
    f = iforest.fit(x, n_trees=10, subsample_size=32, seed=3)
    assert f.subsample_size == 32
    for t in f.trees:
        assert t.depth() <= math.ceil(math.log2(32))
        assert t.size[0] == 32


def test_threshold_strictly_inside():
    x = np.random.default_rng(1).standard_normal((20, 2))
    tree = iforest.build_tree(x, 5, np.random.default_rng(0))

    def walk(node, idx):
        f = tree.feature[node]
        if f < 0:
            assert tree.size[node] == len(idx)
            return
        v = x[idx, f]
        assert v.min() < tree.threshold[node] < v.max()
        go = v < tree.threshold[node]
        walk(tree.left[node], idx[go])
        walk(tree.right[node], idx[~go])

    walk(0, np.arange(20))


def test_vectorised_path_matches_per_tree():
    rng = np.random.default_rng(2)
    f = iforest.fit(rng.standard_normal((60, 5)), n_trees=15, subsample_size=16, seed=4)
    q = rng.standard_normal((10, 5)) * 2
    brute = np.array([[t.path_length(v) for t in f.trees] for v in q]).mean(axis=1)
    assert np.allclose(f.mean_path_length(q), brute, atol=1e-12)


def test_inlier_scores_below_outlier():
    rng = np.random.default_rng(5)
    cluster = rng.standard_normal((80, 8)) * 0.1
    f = iforest.fit(cluster, n_trees=100, subsample_size=64, seed=0)
    radius = np.linalg.norm(cluster, axis=1).mean()
    far = np.zeros(8)
    far[0] = 10 * radius
    inlier = f.anomaly_score(np.zeros(8))
    outlier = f.anomaly_score(far)
    assert 0 < inlier < outlier < 1
    assert f.decision_function(np.zeros(8)) > 0 > f.decision_function(np.full(8, 5.0))


def test_determinism_and_round_trip():
    x = np.random.default_rng(6).standard_normal((40, 3))
    a = iforest.fit(x, 10, 16, seed=9)
    b = iforest.fit(x, 10, 16, seed=9)
    c = IsolationForest.from_dict(a.to_dict())
    q = np.random.default_rng(7).standard_normal((5, 3))
    assert a.anomaly_score(q).tolist() == b.anomaly_score(q).tolist() == c.anomaly_score(q).tolist()


def test_degenerate_fit():
    with pytest.raises(DegenerateFitError):
        iforest.fit(np.ones((5, 2)))
    with pytest.raises(DegenerateFitError):
        iforest.fit([[1.0, 2.0]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 40))
def test_score_in_open_unit_interval(seed, n):
    rng = np.random.default_rng(seed)
    f = iforest.fit(rng.standard_normal((n, 3)), n_trees=5, subsample_size=16, seed=seed)
    s = f.anomaly_score(rng.standard_normal((20, 3)) * 3)
    assert np.all((s > 0) & (s < 1))
