import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from causal_crm.dataset import discretize
from causal_crm.exceptions import ConvergenceError
from causal_crm.notears import (
    Dag, NotearsConfig, NotearsStructureLearner, acyclicity_h, dump_dag, export_dot, is_acyclic,
    learn_structure, least_squares_objective, load_dag, notears_linear, structural_hamming_distance,
    soft_threshold, topological_sort,
)
from causal_crm.synthetic import (
    chain_data, chain_weights, fixture_dataset, independent_data, linear_sem, random_dag_weights,
)
from oracles import central_difference, has_cycle, h_series


# -- acyclicity --------------------------------------------------------------

def test_h_zero_matrix():
    h, g = acyclicity_h(np.zeros((3, 3)))
    assert h == 0.0 and not g.any()


def test_h_single_edge_is_zero():
    h, _ = acyclicity_h(np.array([[0.0, 0.9], [0.0, 0.0]]))
    assert abs(h) < 1e-15


def test_h_two_cycle_matches_series():
    w = np.array([[0.0, 1.0], [1.0, 0.0]])
    h, _ = acyclicity_h(w)
    assert h == pytest.approx(2 * math.cosh(1) - 2, abs=1e-12)
    assert h == pytest.approx(h_series(w), abs=1e-12)
    assert h == pytest.approx(1.08616, abs=1e-5)


def test_h_zero_iff_acyclic_support():
    rng = np.random.default_rng(0)
    for _ in range(200):
        w = rng.uniform(-1, 1, size=(5, 5))
        w[np.abs(w) < 0.1] = 0.0
        np.fill_diagonal(w, 0.0)
        w[rng.random((5, 5)) < 0.6] = 0.0
        h, _ = acyclicity_h(w)
        if has_cycle(w):
            assert h > 1e-8
        else:
            assert abs(h) <= 1e-8
        assert is_acyclic(w) == (not has_cycle(w))


def test_h_gradient_finite_difference_4x4():
    rng = np.random.default_rng(1)
    for _ in range(20):
        w = rng.uniform(-1, 1, size=(4, 4))
        _, g = acyclicity_h(w)
        fd = central_difference(lambda m: acyclicity_h(m)[0], w)
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 4), elements=st.floats(-1.5, 1.5)))
def test_h_nonnegative_and_matches_series(w):
    h, _ = acyclicity_h(w)
    assert h >= -1e-12
    assert h == pytest.approx(h_series(w, terms=40), rel=1e-9, abs=1e-9)


# -- loss --------------------------------------------------------------------

def test_loss_at_zero_is_half_mean_column_norm():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(7, 3))
    value, _ = least_squares_objective(np.zeros((3, 3)), x)
    assert value == pytest.approx(np.sum(x**2) / (2 * 7), rel=1e-14)


def test_loss_exact_fit_leaves_only_root_term():
    w = chain_weights(3, 2.0)
    x = chain_data(n=50, d=3, noise_scale=0.0, seed=1)
    value, _ = least_squares_objective(w, x)
    # X2 and X3 are fitted exactly; only the root column remains in the residual
    assert value == pytest.approx(np.sum(x[:, 0] ** 2) / (2 * 50), rel=1e-12)


def test_loss_gradient_finite_difference():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(5, 3))
    w = rng.normal(size=(3, 3))
    _, g = least_squares_objective(w, x)
    fd = central_difference(lambda m: least_squares_objective(m, x)[0], w)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-9)


def test_loss_includes_l1():
    x = np.eye(2)
    w = np.array([[0.0, 0.5], [-0.25, 0.0]])
    base, _ = least_squares_objective(w, x)
    pen, _ = least_squares_objective(w, x, l1_penalty=0.1)
    assert pen - base == pytest.approx(0.075)


def test_loss_shape_mismatch():
    with pytest.raises(ValueError):
        least_squares_objective(np.zeros((3, 3)), np.zeros((4, 2)))


# -- graph utilities ---------------------------------------------------------

def test_is_acyclic_examples():
    assert is_acyclic(np.zeros((2, 2)))
    assert not is_acyclic(np.array([[0, 1], [1, 0]]))
    assert is_acyclic(random_dag_weights(6, seed=4))
    assert topological_sort(np.array([[0, 1], [1, 0]])) is None


def test_dag_validation():
    with pytest.raises(ValueError):
        Dag(("A", "B"), (("A", "B", 1.0), ("B", "A", 1.0)))
    with pytest.raises(ValueError):
        Dag(("A",), (("A", "A", 1.0),))
    with pytest.raises(ValueError):
        Dag(("A", "B"), (("A", "B", 1.0), ("A", "B", 2.0)))
    with pytest.raises(ValueError):
        Dag(("A",), (("A", "Z", 1.0),))


def test_shd():
    truth = Dag(("A", "B", "C"), (("A", "B", 1.0), ("B", "C", 1.0)))
    assert structural_hamming_distance(truth, truth) == 0
    rev = Dag(("A", "B", "C"), (("B", "A", 1.0), ("B", "C", 1.0)))
    assert structural_hamming_distance(rev, truth) == 1
    extra = Dag(("A", "B", "C"), (("A", "B", 1.0), ("B", "C", 1.0), ("A", "C", 1.0)))
    assert structural_hamming_distance(extra, truth) == 1
    empty = Dag(("A", "B", "C"), ())
    assert structural_hamming_distance(empty, truth) == 2


# -- DOT and serialization ---------------------------------------------------

def test_dot_empty_graph():
    text = export_dot(Dag(("A", "B"), ()))
    assert text.count(";") == 2 and "->" not in text


def test_dot_single_edge():
    text = export_dot(Dag(("A", "B"), (("A", "B", 0.5),)))
    edges = [ln for ln in text.splitlines() if "->" in ln]
    assert edges == ['  "A" -> "B" [label="0.500"];']
    assert export_dot(Dag(("A", "B"), (("A", "B", 0.5),))) == text


def test_dag_roundtrip():
    dag = Dag(("X1", "X2", "X3"), (("X1", "X2", 1.2345678901234567), ("X2", "X3", -0.75)),
              {"h": 1e-9, "dual_iterations": 7})
    back = load_dag(dump_dag(dag))
    assert back.nodes == dag.nodes and back.edges == dag.edges
    assert back.metadata["dual_iterations"] == 7


# -- structure learning ------------------------------------------------------

def test_noiseless_chain_recovered_exactly():
    dag = learn_structure(chain_data(n=1000, d=3, coefficient=2.0, noise_scale=0.0, seed=0))
    assert dag.edge_set() == {("X1", "X2"), ("X2", "X3")}
    assert is_acyclic(dag)


def test_independent_columns_give_empty_graph():
    dag = learn_structure(independent_data(n=1000, d=3, seed=0), NotearsConfig(edge_threshold=0.3))
    assert dag.edges == ()


def test_random_dag_recovered():
    w = random_dag_weights(d=5, seed=0)
    x = linear_sem(w, n=1000, noise_scale=0.5, seed=1)
    dag = learn_structure(x)
    truth = Dag.from_matrix(w, dag.nodes)
    assert structural_hamming_distance(dag, truth) <= 1
    assert is_acyclic(dag)


def test_single_column_rejected():
    with pytest.raises(ValueError):
        learn_structure(np.zeros((10, 1)))


def test_few_rows_warns():
    with pytest.warns(UserWarning):
        learn_structure(np.random.default_rng(0).normal(size=(3, 3)))


def test_deterministic_bits():
    x = linear_sem(random_dag_weights(4, seed=2), n=200, noise_scale=1.0, seed=3)
    a, b = learn_structure(x), learn_structure(x)
    assert a.edges == b.edges


def test_h_history_final_not_above_first():
    x = linear_sem(random_dag_weights(4, seed=5), n=300, noise_scale=1.0, seed=6)
    _, meta = notears_linear(x - x.mean(axis=0))
    assert meta["h_history"][-1] <= meta["h_history"][0]
    assert meta["h"] <= 1e-8


def test_convergence_error_carries_h():
    x = linear_sem(random_dag_weights(4, seed=5), n=300, noise_scale=1.0, seed=6)
    with pytest.raises(ConvergenceError) as err:
        notears_linear(x, NotearsConfig(max_dual_iterations=1, l1_penalty=0.0))
    assert err.value.h_value > 1e-8


def test_binary_chain_fixture_has_four_edges():
    dag = learn_structure(discretize(fixture_dataset("chain", seed=0)))
    assert len(dag.edges) == 4
    assert is_acyclic(dag)


def test_config_validation():
    with pytest.raises(ValueError):
        NotearsConfig(max_dual_iterations=0)
    with pytest.raises(ValueError):
        NotearsConfig(l1_penalty=-1)


def test_estimator_wrapper():
    x = chain_data(n=500, d=3, seed=1)
    est = NotearsStructureLearner().fit(x)
    assert est.dag_.edge_set() == {("X1", "X2"), ("X2", "X3")}
    assert est.adjacency_.shape == (3, 3)
    assert "digraph" in est.to_dot()
    assert est.get_params()["edge_threshold"] == 0.3


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 4), elements=st.floats(-2, 2)), st.floats(0, 1))
def test_soft_threshold_never_raises_h(w, amount):
    shrunk = soft_threshold(w, amount)
    assert np.all(np.abs(shrunk) <= np.abs(w))
    assert acyclicity_h(shrunk)[0] <= acyclicity_h(w)[0] + 1e-12


def test_output_always_acyclic_over_seeds():
    for seed in range(5):
        x = linear_sem(random_dag_weights(4, edge_probability=0.7, seed=seed), n=200, noise_scale=1.0, seed=seed)
        assert is_acyclic(learn_structure(x))
