"""Seeded synthetic data used by the test suite and the ``selftest`` command."""

from __future__ import annotations

import numpy as np
import pandas as pd

from .bayesnet import BayesianNetwork, Cpd
from .dataset import (
    CATEGORICAL, IMMUTABLE, MONOTONE, NUMERIC, TARGET,
    ActionabilityConstraint, ColumnSpec, dataset_from_frame,
)
from .notears import Dag


def linear_sem(weights, n, noise_scale=1.0, seed=0) -> np.ndarray:
    """Sample ``X_j = sum_i X_i W_ij + noise`` for an upper-triangular ``W``."""
    weights = np.asarray(weights, dtype=np.float64)
    rng = np.random.default_rng(seed)
    d = weights.shape[0]
    x = np.zeros((n, d))
    for j in range(d):
        x[:, j] = x @ weights[:, j] + noise_scale * rng.normal(size=n)
    return x


def chain_weights(d=3, coefficient=2.0) -> np.ndarray:
    w = np.zeros((d, d))
    for i in range(d - 1):
        w[i, i + 1] = coefficient
    return w


def chain_data(n=1000, d=3, coefficient=2.0, noise_scale=0.0, seed=0) -> np.ndarray:
    """Chain ``X1 -> X2 -> ...``; with ``noise_scale=0`` only the root is random."""
    rng = np.random.default_rng(seed)
    x = np.zeros((n, d))
    x[:, 0] = rng.normal(size=n)
    for j in range(1, d):
        x[:, j] = coefficient * x[:, j - 1] + noise_scale * rng.normal(size=n)
    return x


def random_dag_weights(d=5, edge_probability=0.5, low=0.5, high=2.0, seed=0) -> np.ndarray:
    """Random weighted DAG with edges only ``i -> j`` for ``i < j``; at least one edge."""
    rng = np.random.default_rng(seed)
    while True:
        mask = np.triu(rng.random((d, d)) < edge_probability, k=1)
        if mask.any():
            return np.where(mask, rng.uniform(low, high, size=(d, d)), 0.0)


def independent_data(n=1000, d=3, seed=0) -> np.ndarray:
    return np.random.default_rng(seed).normal(size=(n, d))


def random_binary_network(n_nodes=4, edge_probability=0.5, seed=0) -> BayesianNetwork:
    rng = np.random.default_rng(seed)
    nodes = tuple(f"V{i}" for i in range(n_nodes))
    edges = [(nodes[i], nodes[j], 1.0) for i in range(n_nodes) for j in range(i + 1, n_nodes)
             if rng.random() < edge_probability]
    dag = Dag(nodes, tuple(edges))
    cpds = {}
    for node in nodes:
        parents = tuple(p for p in nodes if p in dag.parents(node))
        p1 = rng.uniform(0.05, 0.95, size=(2,) * len(parents))
        cpds[node] = Cpd(node, parents, np.stack([1 - p1, p1], axis=-1))
    return BayesianNetwork(dag, cpds, {n: 2 for n in nodes})


def binary_chain_frame(n=2000, d=5, flip=0.1, seed=0) -> pd.DataFrame:
    """Binary Markov chain ``B1 -> ... -> Bd``; each link copies its parent, flipped w.p. ``flip``."""
    rng = np.random.default_rng(seed)
    cols = np.zeros((n, d), dtype=np.int64)
    cols[:, 0] = rng.integers(0, 2, size=n)
    for j in range(1, d):
        cols[:, j] = cols[:, j - 1] ^ (rng.random(n) < flip)
    return pd.DataFrame({f"B{j + 1}": cols[:, j] for j in range(d)})


def binary_chain_schema(d=5) -> tuple:
    cols = [ColumnSpec(f"B{j + 1}", kind=CATEGORICAL) for j in range(d - 1)]
    return tuple(cols) + (ColumnSpec(f"B{d}", kind=CATEGORICAL, role=TARGET),)


def independent_binary_frame(n=2000, d=4, seed=0) -> pd.DataFrame:
    rng = np.random.default_rng(seed)
    return pd.DataFrame({f"I{j + 1}": rng.integers(0, 2, size=n) for j in range(d)})


def independent_binary_schema(d=4) -> tuple:
    cols = [ColumnSpec(f"I{j + 1}", kind=CATEGORICAL) for j in range(d - 1)]
    return tuple(cols) + (ColumnSpec(f"I{d}", kind=CATEGORICAL, role=TARGET),)


def threshold_frame(n=600, seed=0) -> pd.DataFrame:
    """Label is ``SCORE >= 0``; the other columns carry no signal.

    ``AGE`` (monotone) and ``SEX`` (immutable) exercise the constraint filters.
    """
    rng = np.random.default_rng(seed)
    score = np.round(rng.uniform(-1.0, 1.0, size=n), 3)
    return pd.DataFrame({
        "SCORE": score,
        "NOISE1": np.round(rng.normal(size=n), 3),
        "NOISE2": np.round(rng.normal(size=n), 3),
        "AGE": rng.integers(20, 70, size=n),
        "SEX": rng.integers(1, 3, size=n),
        "LABEL": (score >= 0).astype(np.int64),
    })


def threshold_schema() -> tuple:
    return (
        ColumnSpec("SCORE", kind=NUMERIC),
        ColumnSpec("NOISE1", kind=NUMERIC),
        ColumnSpec("NOISE2", kind=NUMERIC),
        ColumnSpec("AGE", kind=NUMERIC, actionability=ActionabilityConstraint(MONOTONE)),
        ColumnSpec("SEX", kind=CATEGORICAL, actionability=ActionabilityConstraint(IMMUTABLE)),
        ColumnSpec("LABEL", kind=CATEGORICAL, role=TARGET),
    )


FIXTURES = {
    "chain": (binary_chain_frame, binary_chain_schema),
    "independent": (independent_binary_frame, independent_binary_schema),
    "threshold": (threshold_frame, threshold_schema),
}


def fixture_dataset(name, seed=0):
    frame_fn, schema_fn = FIXTURES[name]
    return dataset_from_frame(frame_fn(seed=seed), schema_fn())
