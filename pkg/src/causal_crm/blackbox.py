"""Random-forest classifier used as the black box that counterfactuals explain.

Trees are grown on bootstrap samples with Gini splits over a random subset of
features at each node; each tree draws from its own RNG stream derived from
``(seed, tree_index)`` so results do not depend on training order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .exceptions import DegenerateDataError, ParseError

MODEL_HEADER = "# causal-crm random forest v1"
LEAF = -1


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat preorder tree.  ``feature[i] == -1`` marks a leaf.

    Internal node ``i`` sends ``x[feature[i]] < threshold[i]`` to ``left[i]``.
    ``counts[i]`` holds the bootstrap class counts that reached node ``i``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        for name in ("feature", "threshold", "left", "right", "counts"):
            arr = np.array(getattr(self, name), copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        leaves = self.feature == LEAF
        if np.any(self.counts[leaves].sum(axis=1) == 0):
            raise ValueError("leaf with no samples")
        object.__setattr__(self, "_proba", self.counts / self.counts.sum(axis=1, keepdims=True))

    @property
    def node_count(self) -> int:
        return len(self.feature)

    def apply(self, X) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] != LEAF
        while np.any(active):
            idx = node[active]
            go_left = X[np.flatnonzero(active), self.feature[idx]] < self.threshold[idx]
            node[active] = np.where(go_left, self.left[idx], self.right[idx])
            active = self.feature[node] != LEAF
        return node

    def predict_proba(self, X) -> np.ndarray:
        return self._proba[self.apply(X)]

    def __eq__(self, other):
        return isinstance(other, Tree) and all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("feature", "threshold", "left", "right", "counts")
        )

    __hash__ = None


def gini(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    return 1.0 - float(np.sum((counts / total) ** 2)) if total else 0.0


def _best_split(x, y_onehot, min_leaf):
    """Lowest weighted Gini split of one feature; ``None`` if no legal split."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    left = np.cumsum(y_onehot[order], axis=0)[:-1]
    m = len(xs)
    n_left = np.arange(1, m, dtype=np.float64)
    n_right = m - n_left
    right = y_onehot.sum(axis=0) - left
    legal = (xs[:-1] < xs[1:]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not np.any(legal):
        return None
    g_left = 1.0 - np.sum((left / n_left[:, None]) ** 2, axis=1)
    g_right = 1.0 - np.sum((right / n_right[:, None]) ** 2, axis=1)
    impurity = np.where(legal, (n_left * g_left + n_right * g_right) / m, np.inf)
    i = int(np.argmin(impurity))
    threshold = 0.5 * (xs[i] + xs[i + 1])
    if not xs[i] < threshold:
        threshold = xs[i + 1]
    return float(impurity[i]), float(threshold)


def _grow_tree(X, y, n_classes, max_depth, min_leaf, n_split_features, rng) -> Tree:
    onehot = np.eye(n_classes)[y]
    feature, threshold, left, right, counts = [], [], [], [], []

    def grow(rows, depth):
        idx = len(feature)
        node_counts = onehot[rows].sum(axis=0)
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        counts.append(node_counts)
        if depth >= max_depth or len(rows) < 2 * min_leaf or np.count_nonzero(node_counts) < 2:
            return idx
        candidates = rng.choice(X.shape[1], size=n_split_features, replace=False)
        best = None
        for f in candidates:
            found = _best_split(X[rows, f], onehot[rows], min_leaf)
            if found is not None and (best is None or found[0] < best[0]):
                best = (found[0], int(f), found[1])
        if best is None:
            return idx
        _, f, thr = best
        mask = X[rows, f] < thr
        feature[idx] = f
        threshold[idx] = thr
        left[idx] = grow(rows[mask], depth + 1)
        right[idx] = grow(rows[~mask], depth + 1)
        return idx

    grow(np.arange(X.shape[0]), 0)
    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(counts, dtype=np.int64),
    )


class RandomForest(ClassifierMixin, BaseEstimator):
    """Bagged Gini decision trees.

    Parameters
    ----------
    n_trees : int
    max_depth : int
    min_leaf : int
        Minimum bootstrap samples on each side of a split.
    features_per_split : int or None
        Features considered per split; ``None`` means ``ceil(sqrt(d))``.
    seed : int
    """

    def __init__(self, n_trees=100, max_depth=8, min_leaf=2, features_per_split=None, seed=0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.features_per_split = features_per_split
        self.seed = seed

    def fit(self, X, y):
        if len(X) == 0:
            raise ValueError("cannot train a forest on empty data")
        X, y = validate_data(self, X, y, dtype=np.float64)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise DegenerateDataError("training labels contain a single class")
        if X.shape[0] < 2:
            raise ValueError("need at least 2 training rows")
        d = X.shape[1]
        m = self.features_per_split or math.ceil(math.sqrt(d))
        m = min(max(int(m), 1), d)
        n = X.shape[0]
        trees = []
        for t in range(self.n_trees):
            rng = np.random.default_rng([self.seed, t])
            boot = rng.integers(0, n, size=n)
            trees.append(_grow_tree(X[boot], y_idx[boot], len(self.classes_), self.max_depth,
                                    self.min_leaf, m, rng))
        self.trees_ = trees
        return self

    def _packed(self):
        # All trees concatenated into one node table; cached per trees_ list.
        cached = getattr(self, "_packed_cache", None)
        if cached is not None and cached[0] is self.trees_:
            return cached[1]
        offsets = np.cumsum([0] + [t.node_count for t in self.trees_])[:-1]
        feature = np.concatenate([t.feature for t in self.trees_])
        threshold = np.concatenate([t.threshold for t in self.trees_])
        left = np.concatenate([t.left + o for t, o in zip(self.trees_, offsets)])
        right = np.concatenate([t.right + o for t, o in zip(self.trees_, offsets)])
        proba = np.concatenate([t._proba for t in self.trees_])
        packed = (offsets, feature, threshold, left, right, proba)
        self._packed_cache = (self.trees_, packed)
        return packed

    def predict_proba(self, X):
        check_is_fitted(self, "trees_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        offsets, feature, threshold, left, right, proba = self._packed()
        node = np.broadcast_to(offsets, (X.shape[0], len(offsets))).copy()
        rows = np.arange(X.shape[0])[:, None]
        while True:
            f = feature[node]
            internal = f != LEAF
            if not internal.any():
                break
            value = X[rows, np.where(internal, f, 0)]
            step = np.where(value < threshold[node], left[node], right[node])
            node = np.where(internal, step, node)
        return proba[node].sum(axis=1) / len(offsets)

    def predict(self, X):
        # argmax returns the first maximum, i.e. ties go to the lower class code
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def same_structure(self, other) -> bool:
        return (
            len(self.trees_) == len(other.trees_)
            and np.array_equal(self.classes_, other.classes_)
            and all(a == b for a, b in zip(self.trees_, other.trees_))
        )


def train_forest(x, y, **params) -> RandomForest:
    return RandomForest(**params).fit(x, y)


def predict_proba(rf: RandomForest, x) -> np.ndarray:
    """Class probabilities for a single feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != rf.n_features_in_:
        raise ValueError(f"expected a vector of {rf.n_features_in_} features, got shape {x.shape}")
    return rf.predict_proba(x[None, :])[0]


def predict(rf: RandomForest, x):
    return rf.classes_[int(np.argmax(predict_proba(rf, x)))]


def accuracy(rf: RandomForest, x_test, y_test) -> float:
    y_test = np.asarray(y_test)
    if len(y_test) == 0:
        raise ValueError("accuracy needs a nonempty test set")
    return float(np.mean(rf.predict(x_test) == y_test))


def dump_forest(rf: RandomForest) -> str:
    check_is_fitted(rf, "trees_")
    params = rf.get_params()
    lines = [
        MODEL_HEADER,
        "params " + " ".join(f"{k}={params[k]!r}" for k in sorted(params)),
        f"n_features {rf.n_features_in_}",
        "classes " + " ".join(repr(c.item() if hasattr(c, "item") else c) for c in rf.classes_),
    ]
    for t, tree in enumerate(rf.trees_):
        lines.append(f"tree {t} {tree.node_count}")
        for i in range(tree.node_count):
            counts = " ".join(str(int(c)) for c in tree.counts[i])
            if tree.feature[i] == LEAF:
                lines.append(f"leaf {counts}")
            else:
                lines.append(f"split {int(tree.feature[i])} {float(tree.threshold[i])!r} {counts}")
    return "\n".join(lines) + "\n"


def _literal(text):
    if text == "None":
        return None
    try:
        return int(text)
    except ValueError:
        return float(text)


def load_forest(text: str) -> RandomForest:
    lines = text.splitlines()
    if not lines or lines[0] != MODEL_HEADER:
        raise ParseError("not a forest model file (bad header)")
    params = dict(item.split("=", 1) for item in lines[1].split()[1:])
    rf = RandomForest(**{k: _literal(v) for k, v in params.items()})
    rf.n_features_in_ = int(lines[2].split()[1])
    rf.classes_ = np.array([_literal(c) for c in lines[3].split()[1:]])
    trees, pos = [], 4
    while pos < len(lines):
        header = lines[pos].split()
        if header[0] != "tree":
            raise ParseError(f"expected tree record at line {pos + 1}")
        size = int(header[2])
        records = [ln.split() for ln in lines[pos + 1 : pos + 1 + size]]
        pos += 1 + size
        feature = np.full(size, LEAF, dtype=np.int64)
        threshold = np.zeros(size)
        left = np.full(size, LEAF, dtype=np.int64)
        right = np.full(size, LEAF, dtype=np.int64)
        counts = np.zeros((size, len(rf.classes_)), dtype=np.int64)
        cursor = 0

        def read():
            nonlocal cursor
            i = cursor
            cursor += 1
            rec = records[i]
            if rec[0] == "leaf":
                counts[i] = [int(c) for c in rec[1:]]
                return i
            feature[i] = int(rec[1])
            threshold[i] = float(rec[2])
            counts[i] = [int(c) for c in rec[3:]]
            left[i] = read()
            right[i] = read()
            return i

        read()
        trees.append(Tree(feature, threshold, left, right, counts))
    rf.trees_ = trees
    return rf
