"""Diverse counterfactual explanations for a black-box classifier.

Candidates are scored with the Wachter loss ``lam * (f(x') - y')^2 + d(x, x')``
where ``d`` is the L1 distance scaled per feature by the median absolute
deviation of a reference set.  A set of ``k`` candidates is scored as

    -sum(loss_i) + proximity_weight * proximity + diversity_weight * det(K)

with ``K_ij = 1 / (1 + d(c_i, c_j))`` and ``proximity = -mean(d(c_i, x))``.
The set is searched with a seeded genetic algorithm because tree ensembles
give no gradient.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dataset import FREE, IMMUTABLE, MONOTONE, ActionabilityConstraint
from .exceptions import CounterfactualExhaustedError

DEGENERATE_MAD = 1.0
SPARSITY_PENALTY = 0.1


def mad(values) -> float:
    """Median absolute deviation from the median."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("MAD of an empty list")
    return float(np.median(np.abs(values - np.median(values))))


def mad_vector(points) -> np.ndarray:
    """Per-feature MAD over a reference set, zeros replaced by ``DEGENERATE_MAD``."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError("reference set must be a nonempty 2-D array")
    med = np.median(points, axis=0)
    mads = np.median(np.abs(points - med), axis=0)
    return np.where(mads > 0, mads, DEGENERATE_MAD)


def _safe(mads) -> np.ndarray:
    mads = np.asarray(mads, dtype=np.float64)
    return np.where(mads > 0, mads, DEGENERATE_MAD)


def distance(x, x_cf, mads) -> float:
    x = np.asarray(x, dtype=np.float64)
    x_cf = np.asarray(x_cf, dtype=np.float64)
    if x.shape != x_cf.shape or x.shape != np.shape(mads):
        raise ValueError(f"shape mismatch: {x.shape}, {x_cf.shape}, {np.shape(mads)}")
    return float(np.sum(np.abs(x - x_cf) / _safe(mads)))


def _prediction_gap(proba, classes, desired_class):
    """Squared gap between the positive-class probability and the desired target."""
    proba = np.atleast_2d(proba)
    if len(classes) == 2:
        target = 1.0 if desired_class == classes[1] else 0.0
        return (proba[:, 1] - target) ** 2
    col = int(np.flatnonzero(np.asarray(classes) == desired_class)[0])
    return (proba[:, col] - 1.0) ** 2


def wachter_loss(x_cf, x, desired_class, lam, model, mads) -> float:
    proba = model.predict_proba(np.asarray(x_cf, dtype=np.float64)[None, :])
    gap = _prediction_gap(proba, model.classes_, desired_class)[0]
    return float(lam * gap + distance(x, x_cf, mads))


def _pairwise(candidates, mads) -> np.ndarray:
    c = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    return np.sum(np.abs(c[:, None, :] - c[None, :, :]) / _safe(mads), axis=-1)


def kernel_matrix(candidates, mads) -> np.ndarray:
    if len(candidates) < 1:
        raise ValueError("kernel needs at least one candidate")
    return 1.0 / (1.0 + _pairwise(candidates, mads))


def dpp_diversity(candidates, mads) -> float:
    # LAPACK getrf: LU with partial pivoting
    return float(np.linalg.det(kernel_matrix(candidates, mads)))


def proximity_score(candidates, x, mads) -> float:
    c = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    if len(c) < 1:
        raise ValueError("proximity needs at least one candidate")
    return -float(np.mean(np.sum(np.abs(c - np.asarray(x, dtype=np.float64)) / _safe(mads), axis=1)))


def sparsity(x, x_cf) -> int:
    return int(np.count_nonzero(np.asarray(x) != np.asarray(x_cf)))


def check_constraints(x, x_cf, constraints, names=None):
    """Return ``(valid, reasons)`` for the change ``x -> x_cf``."""
    reasons = []
    for j, rule in enumerate(constraints):
        if rule is None or rule.permits(x[j], x_cf[j]):
            continue
        name = names[j] if names is not None else f"x{j}"
        if rule.mode == IMMUTABLE:
            reasons.append(f"immutable: {name}")
        elif rule.mode == MONOTONE:
            reasons.append(f"monotone_nondecreasing: {name} decreased {x[j]:g} -> {x_cf[j]:g}")
        else:
            reasons.append(f"transitions: {name} {x[j]:g} -> {x_cf[j]:g} not allowed")
    return not reasons, reasons


@dataclass(frozen=True)
class CfQuery:
    instance: tuple
    desired_class: object
    k: int = 4
    proximity_weight: float = 0.3
    diversity_weight: float = 3.2
    lam: float = 10.0
    sparsity_limit: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.lam > 0:
            raise ValueError("lam must be > 0")
        weights = (self.proximity_weight, self.diversity_weight)
        if not all(np.isfinite(w) for w in weights):
            raise ValueError("weights must be finite")
        object.__setattr__(self, "instance", tuple(float(v) for v in self.instance))


@dataclass(frozen=True)
class Candidate:
    values: tuple
    predicted_class: object
    distance: float
    changed_features: tuple
    valid: bool
    violation_reasons: tuple = ()
    loss: float = 0.0


@dataclass(frozen=True)
class CounterfactualSet:
    query: CfQuery
    candidates: tuple
    diversity: float
    proximity: float
    kernel: np.ndarray = field(compare=False)
    objective: float = 0.0

    def matrix(self) -> np.ndarray:
        return np.array([c.values for c in self.candidates])


@dataclass
class SearchSettings:
    population: int = 50
    generations: int = 200
    elitism: int = 5
    tournament: int = 3
    revert_probability: float = 0.2
    polish: bool = True


class _Search:
    """One genetic search run; all randomness flows through ``self.rng``."""

    def __init__(self, model, points, query, constraints, names, settings):
        self.model = model
        self.q = query
        self.x = np.asarray(query.instance, dtype=np.float64)
        self.d = self.x.shape[0]
        self.points = np.asarray(points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != self.d:
            raise ValueError("reference points and instance disagree on feature count")
        self.mads = mad_vector(self.points)
        self.names = list(names) if names is not None else [f"x{j}" for j in range(self.d)]
        self.constraints = list(constraints) if constraints is not None else [None] * self.d
        if len(self.constraints) != self.d:
            raise ValueError("need one constraint per feature")
        self.s = settings
        self.rng = np.random.default_rng(query.seed)
        self.classes = model.classes_
        self.cache = {}
        self.pools = {}
        for j in range(self.d):
            rule = self.constraints[j] or ActionabilityConstraint(FREE)
            col = self.points[:, j]
            allowed = np.array([v != self.x[j] and rule.permits(self.x[j], v) for v in col], dtype=bool)
            if allowed.any():
                self.pools[j] = col[allowed]
        self.mutable = np.array(sorted(self.pools), dtype=np.int64)

    # -- per-candidate scoring -------------------------------------------------
    def _evaluate(self, rows):
        keys = [r.tobytes() for r in rows]
        fresh = {}
        for key, row in zip(keys, rows):
            if key not in self.cache and key not in fresh:
                fresh[key] = row
        if fresh:
            batch = np.array(list(fresh.values()))
            proba = self.model.predict_proba(batch)
            gaps = _prediction_gap(proba, self.classes, self.q.desired_class)
            preds = self.classes[np.argmax(proba, axis=1)]
            for (key, row), gap, pred in zip(fresh.items(), gaps, preds):
                dist = float(np.sum(np.abs(row - self.x) / self.mads))
                changed = int(np.count_nonzero(row != self.x))
                ok, _ = check_constraints(self.x, row, self.constraints, self.names)
                valid = bool(ok and pred == self.q.desired_class and changed > 0)
                loss = self.q.lam * float(gap) + dist + SPARSITY_PENALTY * max(0, changed - self.q.sparsity_limit)
                self.cache[key] = (loss, valid, pred, dist)
        return keys

    def _score(self, individual):
        keys = self._evaluate(individual)
        losses = np.array([self.cache[k][0] for k in keys])
        distinct_valid = len({k for k in keys if self.cache[k][1]})
        dists = np.array([self.cache[k][3] for k in keys])
        kernel = 1.0 / (1.0 + _pairwise(individual, self.mads))
        objective = (-losses.sum() - self.q.proximity_weight * dists.mean()
                     + self.q.diversity_weight * float(np.linalg.det(kernel)))
        return distinct_valid, objective

    # -- operators -------------------------------------------------------------
    def _mutate(self, cand):
        changed = np.flatnonzero(cand != self.x)
        if len(changed) and self.rng.random() < self.s.revert_probability:
            j = changed[self.rng.integers(len(changed))]
            cand[j] = self.x[j]
            return cand
        count = min(1 + int(self.rng.random() < 0.5), len(self.mutable))
        for j in self.rng.choice(self.mutable, size=count, replace=False):
            pool = self.pools[int(j)]
            cand[j] = pool[self.rng.integers(len(pool))]
        return cand

    def _initial(self):
        ind = np.tile(self.x, (self.q.k, 1))
        for i in range(self.q.k):
            self._mutate(ind[i])
        return ind

    def _tournament(self, size):
        # population is sorted best-first, so the lowest drawn rank wins
        return int(self.rng.integers(size, size=self.s.tournament).min())

    def run(self):
        if len(self.mutable) == 0:
            raise CounterfactualExhaustedError("no feature can change under the given constraints")
        pop = [self._initial() for _ in range(self.s.population)]
        for _ in range(self.s.generations):
            self._evaluate(np.vstack(pop))
            scores = [self._score(ind) for ind in pop]
            order = sorted(range(len(pop)), key=lambda i: (-scores[i][0], -scores[i][1], i))
            pop = [pop[i] for i in order]
            nxt = [ind.copy() for ind in pop[: self.s.elitism]]
            while len(nxt) < self.s.population:
                a = pop[self._tournament(len(pop))]
                b = pop[self._tournament(len(pop))]
                mask = self.rng.random(a.shape) < 0.5
                child = np.where(mask, a, b)
                self._mutate(child[self.rng.integers(self.q.k)])
                nxt.append(child)
            pop = nxt
        self._evaluate(np.vstack(pop))
        scores = [self._score(ind) for ind in pop]
        best = pop[min(range(len(pop)), key=lambda i: (-scores[i][0], -scores[i][1], i))]
        chosen = self._assemble(best)
        if self.s.polish:
            chosen = self._polish(chosen)
        return self._finish(chosen)

    def _assemble(self, best):
        chosen, seen = [], set()
        for row in best:
            key = row.tobytes()
            if self.cache[key][1] and key not in seen:
                chosen.append(row.copy())
                seen.add(key)
        if len(chosen) < self.q.k:
            archive = sorted(
                ((v[0], k) for k, v in self.cache.items() if v[1] and k not in seen),
                key=lambda t: (t[0], t[1]),
            )
            pool = [np.frombuffer(k, dtype=np.float64).copy() for _, k in archive[:200]]
            while len(chosen) < self.q.k and pool:
                best_i = max(range(len(pool)), key=lambda i: (self._score(np.array(chosen + [pool[i]]))[1], -i))
                chosen.append(pool.pop(best_i))
        if len(chosen) < self.q.k:
            invalid = [(v[0], k) for k, v in self.cache.items() if not v[1]]
            best_invalid = np.frombuffer(min(invalid)[1], dtype=np.float64).copy() if invalid else None
            raise CounterfactualExhaustedError(
                f"found {len(chosen)} valid counterfactual(s), needed {self.q.k}",
                best_invalid=best_invalid, found=[tuple(c) for c in chosen],
            )
        return chosen

    def _polish(self, chosen):
        """Greedily revert changed features while the set objective does not drop."""
        chosen = [c.copy() for c in chosen]
        current = self._score(np.array(chosen))
        improved = True
        while improved:
            improved = False
            for i in range(len(chosen)):
                for j in np.flatnonzero(chosen[i] != self.x):
                    trial = [c.copy() for c in chosen]
                    trial[i][j] = self.x[j]
                    score = self._score(np.array(trial))
                    if score[0] == len(chosen) and score[1] >= current[1]:
                        chosen, current, improved = trial, score, True
        return chosen

    def _finish(self, chosen):
        mat = np.array(chosen)
        self._evaluate(mat)
        candidates = []
        for row in mat:
            loss, valid, pred, dist = self.cache[row.tobytes()]
            _, reasons = check_constraints(self.x, row, self.constraints, self.names)
            changed = tuple(self.names[j] for j in np.flatnonzero(row != self.x))
            candidates.append(Candidate(tuple(float(v) for v in row), pred.item() if hasattr(pred, "item") else pred,
                                        dist, changed, valid, tuple(reasons), loss))
        kernel = kernel_matrix(mat, self.mads)
        return CounterfactualSet(
            self.q, tuple(candidates), float(np.linalg.det(kernel)),
            proximity_score(mat, self.x, self.mads), kernel, self._score(mat)[1],
        )


def generate_counterfactuals(model, points, query: CfQuery, constraints=None, names=None,
                             settings: SearchSettings | None = None) -> CounterfactualSet:
    """Search ``query.k`` distinct, valid counterfactuals for ``query.instance``.

    Every returned candidate is predicted as ``query.desired_class`` and
    passes ``check_constraints``; otherwise :class:`CounterfactualExhaustedError`
    is raised carrying the lowest-loss invalid candidate seen.
    """
    return _Search(model, points, query, constraints, names, settings or SearchSettings()).run()


class CounterfactualExplainer(BaseEstimator):
    """Estimator front end: ``fit`` stores the reference set, ``explain`` runs the search."""

    def __init__(self, model=None, constraints=None, feature_names=None, k=4, proximity_weight=0.3,
                 diversity_weight=3.2, lam=10.0, sparsity_limit=3, population=50, generations=200,
                 elitism=5, seed=0):
        self.model = model
        self.constraints = constraints
        self.feature_names = feature_names
        self.k = k
        self.proximity_weight = proximity_weight
        self.diversity_weight = diversity_weight
        self.lam = lam
        self.sparsity_limit = sparsity_limit
        self.population = population
        self.generations = generations
        self.elitism = elitism
        self.seed = seed

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        self.reference_ = X
        self.mads_ = mad_vector(X)
        return self

    def explain(self, x, desired_class=None) -> CounterfactualSet:
        check_is_fitted(self, "reference_")
        x = np.asarray(x, dtype=np.float64)
        if desired_class is None:
            current = self.model.predict(x[None, :])[0]
            others = [c for c in self.model.classes_ if c != current]
            desired_class = others[0]
        query = CfQuery(tuple(x), desired_class, self.k, self.proximity_weight, self.diversity_weight,
                        self.lam, self.sparsity_limit, self.seed)
        settings = SearchSettings(self.population, self.generations, self.elitism)
        return generate_counterfactuals(self.model, self.reference_, query, self.constraints,
                                        self.feature_names, settings)


def report_rows(cfset: CounterfactualSet, names, target_name, original_class, fmt=None, class_fmt=str):
    """Table rows: header, one row per feature, target last; unchanged cells blank."""
    fmt = fmt or (lambda j, v: f"{v:g}")
    x = cfset.query.instance
    header = ["Features", "Original Values"] + [f"CF{i + 1}" for i in range(len(cfset.candidates))]
    rows = [header]
    for j, name in enumerate(names):
        row = [name, fmt(j, x[j])]
        for cand in cfset.candidates:
            row.append(fmt(j, cand.values[j]) if cand.values[j] != x[j] else "")
        rows.append(row)
    rows.append([target_name, class_fmt(original_class)] + [class_fmt(c.predicted_class) for c in cfset.candidates])
    return rows


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def rows_to_text(rows) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows) + "\n"
