import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causal_crm.blackbox import (
    LEAF, RandomForest, Tree, accuracy, dump_forest, gini, load_forest, predict, predict_proba,
    train_forest,
)
from causal_crm.exceptions import DegenerateDataError
from oracles import binomial_gini


def separable(n=100, seed=0):
    x = np.random.default_rng(seed).uniform(-5, 5, size=(n, 1))
    return x, (x[:, 0] >= 0).astype(int)


def leaf(counts):
    return Tree([LEAF], [0.0], [LEAF], [LEAF], [counts])


def forest_of(*trees):
    rf = RandomForest(n_trees=len(trees))
    rf.trees_ = list(trees)
    rf.classes_ = np.array([0, 1])
    rf.n_features_in_ = 1
    return rf


def test_gini_matches_oracle():
    for counts in ([3, 1], [5, 5], [0, 7], [2, 3, 4]):
        assert gini(counts) == pytest.approx(binomial_gini(counts), abs=1e-15)


def test_separable_training_accuracy():
    x, y = separable()
    rf = train_forest(x, y, n_trees=25, seed=1)
    assert accuracy(rf, x, y) == 1.0
    assert predict(rf, np.array([5.0])) == 1


def test_single_class_rejected():
    with pytest.raises(DegenerateDataError):
        RandomForest().fit(np.zeros((5, 2)), np.zeros(5))


def test_empty_rejected():
    with pytest.raises(ValueError):
        RandomForest().fit(np.zeros((0, 2)), np.zeros(0))


def test_deterministic():
    x, y = separable(seed=3)
    a = RandomForest(n_trees=10, seed=4).fit(x, y)
    b = RandomForest(n_trees=10, seed=4).fit(x, y)
    assert a.same_structure(b)
    assert np.array_equal(a.predict(x), b.predict(x))


def test_single_leaf_proba():
    rf = forest_of(leaf([3, 1]))
    np.testing.assert_allclose(predict_proba(rf, np.array([0.0])), [0.75, 0.25])
    assert predict(rf, np.array([0.0])) == 0


def test_two_tree_average_and_tie_goes_low():
    rf = forest_of(leaf([1, 0]), leaf([0, 1]))
    np.testing.assert_allclose(predict_proba(rf, np.array([0.0])), [0.5, 0.5])
    assert predict(rf, np.array([0.0])) == 0


def test_wrong_dimension():
    rf = forest_of(leaf([1, 1]))
    with pytest.raises(ValueError):
        predict_proba(rf, np.array([0.0, 1.0]))


def test_accuracy_extremes():
    x, y = separable()
    rf = train_forest(x, y, n_trees=5, seed=0)
    assert accuracy(rf, x, y) == 1.0
    assert accuracy(rf, x, 1 - y) == 0.0
    with pytest.raises(ValueError):
        accuracy(rf, x[:0], y[:0])


def test_holdout_accuracy():
    x, y = separable(n=400, seed=5)
    rf = train_forest(x[:300], y[:300], seed=6)
    assert accuracy(rf, x[300:], y[300:]) >= 0.95


def test_more_trees_not_worse():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(400, 3))
    y = (x[:, 0] + 0.5 * x[:, 1] >= 0).astype(int)
    one = accuracy(train_forest(x[:300], y[:300], n_trees=1, seed=9), x[300:], y[300:])
    many = accuracy(train_forest(x[:300], y[:300], n_trees=50, seed=9), x[300:], y[300:])
    assert many >= one - 0.02


def test_tree_structure_valid():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(200, 4))
    y = (x[:, 2] > 0.3).astype(int)
    rf = train_forest(x, y, n_trees=8, seed=2)
    for tree in rf.trees_:
        internal = tree.feature != LEAF
        assert np.all(tree.feature[internal] < 4)
        assert np.all(tree.counts[~internal].sum(axis=1) > 0)
        # every node is reached exactly once from the root
        children = np.concatenate([tree.left[internal], tree.right[internal]])
        assert sorted(children.tolist()) == list(range(1, tree.node_count))


def test_packed_traversal_matches_per_tree():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(150, 5))
    y = (x[:, 0] * x[:, 1] > 0).astype(int)
    rf = train_forest(x, y, n_trees=12, seed=0)
    manual = np.mean([t.predict_proba(x) for t in rf.trees_], axis=0)
    np.testing.assert_allclose(rf.predict_proba(x), manual, rtol=0, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_proba_normalized(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(60, 3))
    y = rng.integers(0, 2, size=60)
    y[:2] = [0, 1]
    rf = train_forest(x, y, n_trees=5, max_depth=4, seed=seed)
    p = rf.predict_proba(rng.normal(size=(20, 3)) * 3)
    assert np.all(p >= 0)
    assert np.all(np.abs(p.sum(axis=1) - 1.0) <= 1e-12)


def test_model_roundtrip_bit_exact():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(120, 3))
    y = (x[:, 1] > 0).astype(int)
    rf = train_forest(x, y, n_trees=6, seed=3)
    text = dump_forest(rf)
    back = load_forest(text)
    assert back.same_structure(rf)
    assert back.get_params() == rf.get_params()
    assert np.array_equal(back.predict_proba(x), rf.predict_proba(x))
    assert dump_forest(back) == text
