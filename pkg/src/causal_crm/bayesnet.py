"""Discrete Bayesian networks: CPD estimation, exact marginals and do-interventions.

Interventions are distribution valued: ``do(X ~ q)`` deletes X's incoming
edges and replaces its CPD by the marginal ``q`` (truncated factorization).
A point intervention is the degenerate marginal.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import ParseError, SchemaError
from .notears import Dag

BN_HEADER = "# causal-crm bayesian network v1"
SPEC_TOLERANCE = 1e-6


@dataclass(frozen=True, eq=False)
class Cpd:
    """``table[parent codes..., child code]``; the last axis sums to one."""

    child: str
    parents: tuple
    table: np.ndarray

    def __post_init__(self):
        table = np.array(self.table, dtype=np.float64, copy=True)
        if table.ndim != len(self.parents) + 1:
            raise ValueError(f"{self.child}: table rank does not match parent count")
        if np.any(table < 0) or not np.allclose(table.sum(axis=-1), 1.0, atol=1e-9, rtol=0):
            raise ValueError(f"{self.child}: rows must be nonnegative and sum to 1")
        table = table / table.sum(axis=-1, keepdims=True)
        table.setflags(write=False)
        object.__setattr__(self, "parents", tuple(self.parents))
        object.__setattr__(self, "table", table)

    @property
    def cardinality(self) -> int:
        return self.table.shape[-1]

    def row(self, parent_codes=()) -> np.ndarray:
        return self.table[tuple(parent_codes)]

    def rows(self):
        for codes in itertools.product(*(range(k) for k in self.table.shape[:-1])):
            yield codes, self.table[codes]

    def __eq__(self, other):
        return (
            isinstance(other, Cpd)
            and self.child == other.child
            and self.parents == other.parents
            and self.table.shape == other.table.shape
            and bool(np.all(self.table == other.table))
        )

    __hash__ = None


@dataclass(frozen=True)
class Marginal:
    node: str
    probabilities: tuple

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > SPEC_TOLERANCE:
            raise ValueError(f"{self.node}: probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "probabilities", tuple(float(v) for v in p / p.sum()))

    def as_array(self) -> np.ndarray:
        return np.array(self.probabilities)


@dataclass(frozen=True)
class InterventionSpec:
    node: str
    new_marginal: Marginal

    def __post_init__(self):
        if self.new_marginal.node != self.node:
            raise ValueError("intervention marginal names a different node")

    @classmethod
    def parse(cls, text: str) -> "InterventionSpec":
        """Parse ``node=p0,p1,...``."""
        node, sep, probs = text.partition("=")
        if not sep or not node.strip():
            raise ValueError(f"intervention spec must look like node=p0,p1,...; got {text!r}")
        try:
            values = [float(v) for v in probs.split(",")]
        except ValueError:
            raise ValueError(f"non-numeric probability in {text!r}") from None
        if any(v < 0 for v in values) or abs(sum(values) - 1.0) > SPEC_TOLERANCE:
            raise ValueError(f"probabilities in {text!r} must be nonnegative and sum to 1")
        node = node.strip()
        return cls(node, Marginal(node, tuple(values)))

    def __str__(self):
        return f"{self.node}=" + ",".join(f"{p:g}" for p in self.new_marginal.probabilities)


@dataclass(frozen=True, eq=False)
class BayesianNetwork:
    dag: Dag
    cpds: Mapping
    cardinalities: Mapping
    labels: Mapping = None

    def __post_init__(self):
        object.__setattr__(self, "cpds", dict(self.cpds))
        object.__setattr__(self, "cardinalities", {k: int(v) for k, v in self.cardinalities.items()})
        for node in self.dag.nodes:
            cpd = self.cpds.get(node)
            if cpd is None:
                raise SchemaError(f"no CPD for node {node}")
            if set(cpd.parents) != set(self.dag.parents(node)):
                raise SchemaError(f"CPD parents of {node} do not match the DAG")
            expected = tuple(self.cardinalities[p] for p in cpd.parents) + (self.cardinalities[node],)
            if cpd.table.shape != expected:
                raise SchemaError(f"CPD table of {node} has shape {cpd.table.shape}, expected {expected}")

    @property
    def nodes(self) -> tuple:
        return self.dag.nodes

    def label(self, node, code) -> str:
        if self.labels and node in self.labels:
            return str(self.labels[node][code])
        return str(code)


def fit_cpds(dag: Dag, data, smoothing: float = 1.0, cardinalities=None) -> BayesianNetwork:
    """Additively smoothed maximum-likelihood CPDs.

    ``data`` is an encoded dataset (columns matched by short name) or a
    mapping ``node -> code array``.  With ``smoothing=0``, parent
    configurations never observed get the uniform distribution.
    """
    if smoothing < 0 or not np.isfinite(smoothing):
        raise ValueError("smoothing must be finite and >= 0")
    labels = None
    if hasattr(data, "codes"):
        columns = {name: data.codes[:, j] for j, name in enumerate(data.short_names)}
        cards = dict(data.cardinalities)
        labels = {k: v for k, v in data.code_books.items()}
    else:
        columns = {k: np.asarray(v, dtype=np.int64) for k, v in data.items()}
        cards = {}
    if cardinalities:
        cards.update(cardinalities)
    missing = [node for node in dag.nodes if node not in columns]
    if missing:
        raise SchemaError(f"DAG node(s) missing from data: {', '.join(missing)}")
    for node in dag.nodes:
        cards.setdefault(node, int(columns[node].max()) + 1 if len(columns[node]) else 1)
    cpds = {}
    for node in dag.nodes:
        parents = tuple(sorted(dag.parents(node), key=dag.nodes.index))
        shape = tuple(cards[p] for p in parents) + (cards[node],)
        counts = np.zeros(shape)
        np.add.at(counts, tuple(columns[p] for p in parents) + (columns[node],), 1.0)
        totals = counts.sum(axis=-1, keepdims=True)
        denom = totals + smoothing * cards[node]
        with np.errstate(invalid="ignore", divide="ignore"):
            table = np.where(denom > 0, (counts + smoothing) / np.where(denom > 0, denom, 1.0), 1.0 / cards[node])
        cpds[node] = Cpd(node, parents, table)
    keep = {n: cards[n] for n in dag.nodes}
    if labels is not None:
        labels = {n: labels[n] for n in dag.nodes if n in labels}
    return BayesianNetwork(dag, cpds, keep, labels)


class _Factor:
    __slots__ = ("scope", "values")

    def __init__(self, scope, values):
        self.scope = tuple(scope)
        self.values = values

    def __mul__(self, other):
        scope = self.scope + tuple(v for v in other.scope if v not in self.scope)
        ids = {v: i for i, v in enumerate(scope)}
        values = np.einsum(
            self.values, [ids[v] for v in self.scope],
            other.values, [ids[v] for v in other.scope],
            list(range(len(scope))),
        )
        return _Factor(scope, values)

    def sum_out(self, var):
        axis = self.scope.index(var)
        return _Factor(self.scope[:axis] + self.scope[axis + 1 :], self.values.sum(axis=axis))


def _factor(cpd: Cpd) -> _Factor:
    return _Factor(cpd.parents + (cpd.child,), np.asarray(cpd.table))


def _min_degree_pick(factors, candidates, order):
    best, best_key = None, None
    for var in candidates:
        neighbours = set()
        for f in factors:
            if var in f.scope:
                neighbours.update(f.scope)
        key = (len(neighbours) - 1, order[var])
        if best_key is None or key < best_key:
            best, best_key = var, key
    return best


def marginal(bn: BayesianNetwork, node: str) -> Marginal:
    """Exact marginal by variable elimination (min-degree order) over the node's ancestors.

    Non-ancestors are barren for this query and are dropped before elimination.
    """
    if node not in bn.nodes:
        raise KeyError(f"unknown node {node!r}")
    relevant = bn.dag.ancestors(node) | {node}
    order = {name: i for i, name in enumerate(bn.nodes)}
    factors = [_factor(bn.cpds[v]) for v in bn.nodes if v in relevant]
    pending = relevant - {node}
    while pending:
        var = _min_degree_pick(factors, sorted(pending, key=order.get), order)
        pending.discard(var)
        touching = [f for f in factors if var in f.scope]
        factors = [f for f in factors if var not in f.scope]
        product = touching[0]
        for f in touching[1:]:
            product = product * f
        factors.append(product.sum_out(var))
    result = factors[0]
    for f in factors[1:]:
        result = result * f
    p = result.values
    return Marginal(node, tuple(p / p.sum()))


def do_intervene(bn: BayesianNetwork, spec: InterventionSpec) -> BayesianNetwork:
    """Return a new network with ``spec.node``'s in-edges cut and its CPD replaced."""
    if spec.node not in bn.nodes:
        raise KeyError(f"unknown node {spec.node!r}")
    q = spec.new_marginal.as_array()
    if len(q) != bn.cardinalities[spec.node]:
        raise ValueError(
            f"{spec.node} has {bn.cardinalities[spec.node]} categories, intervention gives {len(q)} probabilities"
        )
    cpds = dict(bn.cpds)
    cpds[spec.node] = Cpd(spec.node, (), q)
    return BayesianNetwork(bn.dag.without_parents(spec.node), cpds, bn.cardinalities, bn.labels)


def query_after_intervention(bn: BayesianNetwork, spec: InterventionSpec, target: str) -> Marginal:
    return marginal(do_intervene(bn, spec), target)


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float)).sum())


def dump_network(bn: BayesianNetwork) -> str:
    lines = [BN_HEADER]
    for node in bn.nodes:
        lines.append(f"node\t{node}\t{bn.cardinalities[node]}")
        if bn.labels and node in bn.labels:
            for code, text in enumerate(bn.labels[node]):
                lines.append(f"label\t{node}\t{code}\t{text}")
    for src, dst, weight in bn.dag.edges:
        lines.append(f"edge\t{src}\t{dst}\t{weight!r}")
    for node in bn.nodes:
        cpd = bn.cpds[node]
        lines.append(f"parents\t{node}\t{','.join(cpd.parents) or '-'}")
        for codes, row in cpd.rows():
            key = ",".join(map(str, codes)) or "-"
            lines.append(f"cpt\t{node}\t{key}\t" + " ".join(f"{p:.12g}" for p in row))
    return "\n".join(lines) + "\n"


def load_network(text: str) -> BayesianNetwork:
    lines = text.splitlines()
    if not lines or lines[0] != BN_HEADER:
        raise ParseError("not a bayesian network file (bad header)")
    nodes, cards, edges, parents, rows, labels = [], {}, [], {}, {}, {}
    for ln in lines[1:]:
        if not ln.strip():
            continue
        kind, *rest = ln.split("\t")
        if kind == "node":
            nodes.append(rest[0])
            cards[rest[0]] = int(rest[1])
        elif kind == "label":
            labels.setdefault(rest[0], {})[int(rest[1])] = rest[2]
        elif kind == "edge":
            edges.append((rest[0], rest[1], float(rest[2])))
        elif kind == "parents":
            parents[rest[0]] = () if rest[1] == "-" else tuple(rest[1].split(","))
        elif kind == "cpt":
            key = () if rest[1] == "-" else tuple(int(c) for c in rest[1].split(","))
            rows.setdefault(rest[0], {})[key] = [float(p) for p in rest[2].split()]
        else:
            raise ParseError(f"unknown network record {kind!r}")
    cpds = {}
    for node in nodes:
        shape = tuple(cards[p] for p in parents[node]) + (cards[node],)
        table = np.empty(shape)
        for key, row in rows[node].items():
            table[key] = row
        cpds[node] = Cpd(node, parents[node], table)
    books = {n: tuple(v[i] for i in range(len(v))) for n, v in labels.items()} or None
    return BayesianNetwork(Dag(tuple(nodes), tuple(edges)), cpds, cards, books)


class DiscreteBayesianNetwork(BaseEstimator):
    """Estimator wrapper around :func:`fit_cpds` for a fixed DAG.

    ``fit`` accepts an encoded dataset or an integer array whose columns are
    in ``dag.nodes`` order.
    """

    def __init__(self, dag=None, smoothing=1.0):
        self.dag = dag
        self.smoothing = smoothing

    def fit(self, X, y=None):
        if self.dag is None:
            raise ValueError("DiscreteBayesianNetwork needs a dag")
        if not hasattr(X, "codes"):
            X = np.asarray(X, dtype=np.int64)
            if X.ndim != 2 or X.shape[1] != len(self.dag.nodes):
                raise ValueError("column count does not match dag nodes")
            X = {name: X[:, j] for j, name in enumerate(self.dag.nodes)}
        self.network_ = fit_cpds(self.dag, X, self.smoothing)
        return self

    def marginal(self, node) -> Marginal:
        check_is_fitted(self, "network_")
        return marginal(self.network_, node)

    def query(self, spec: InterventionSpec, target: str) -> Marginal:
        check_is_fitted(self, "network_")
        return query_after_intervention(self.network_, spec, target)
