"""Tabular dataset loading, category remapping and mean-threshold discretization.

A dataset is described by a schema: one :class:`ColumnSpec` per retained
column.  Columns absent from the schema are ignored at load time, which is
how dropped fields (IDs, timestamps) are expressed.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
import yaml
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .exceptions import DegenerateDataError, KindError, ParseError, SchemaError

NUMERIC = "numeric"
CATEGORICAL = "categorical"
FEATURE = "feature"
TARGET = "target"

FREE = "free"
IMMUTABLE = "immutable"
MONOTONE = "monotone_nondecreasing"
TRANSITIONS = "transitions"
_MODES = (FREE, IMMUTABLE, MONOTONE, TRANSITIONS)

DATA_DIR_ENV = "CAUSAL_CRM_DATA_DIR"


def parse_category(value):
    """Parse a categorical cell: int if possible, then float, else stripped text."""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return int(value) if float(value).is_integer() else float(value)
    text = str(value).strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        number = float(text)
    except ValueError:
        return text
    if math.isfinite(number) and number.is_integer():
        return int(number)
    return number


def category_sort_key(value):
    if isinstance(value, (int, float)):
        return (0, value, "")
    return (1, 0, str(value))


@dataclass(frozen=True)
class ActionabilityConstraint:
    """Rule governing which changes to a feature a counterfactual may make.

    Self-transitions (leaving the value unchanged) are allowed in every mode.
    """

    mode: str = FREE
    allowed_transitions: frozenset = frozenset()

    def __post_init__(self):
        if self.mode not in _MODES:
            raise SchemaError(f"unknown actionability mode {self.mode!r}")
        pairs = frozenset((parse_category(a), parse_category(b)) for a, b in self.allowed_transitions)
        if pairs and self.mode != TRANSITIONS:
            raise SchemaError(f"allowed_transitions given for mode {self.mode!r}")
        object.__setattr__(self, "allowed_transitions", pairs)

    def permits(self, old, new) -> bool:
        if old == new:
            return True
        if self.mode == FREE:
            return True
        if self.mode == IMMUTABLE:
            return False
        if self.mode == MONOTONE:
            return new > old
        return (old, new) in self.allowed_transitions

    def mapped(self, func) -> "ActionabilityConstraint":
        """Return the same rule with transition endpoints passed through ``func``."""
        if self.mode != TRANSITIONS:
            return self
        return ActionabilityConstraint(
            TRANSITIONS, frozenset((func(a), func(b)) for a, b in self.allowed_transitions)
        )


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    short_name: str = ""
    kind: str = CATEGORICAL
    role: str = FEATURE
    category_remap: tuple = ()
    actionability: ActionabilityConstraint = field(default_factory=ActionabilityConstraint)

    def __post_init__(self):
        if not self.name:
            raise SchemaError("column name must be nonempty")
        if not self.short_name:
            object.__setattr__(self, "short_name", self.name)
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise SchemaError(f"{self.name}: unknown kind {self.kind!r}")
        if self.role not in (FEATURE, TARGET):
            raise SchemaError(f"{self.name}: unknown role {self.role!r}")
        remap = tuple((self._parse(a), self._parse(b)) for a, b in self.category_remap)
        for i, (src, _) in enumerate(remap):
            others = {dst for j, (_, dst) in enumerate(remap) if j != i}
            if src in others:
                raise SchemaError(f"{self.name}: remap source {src!r} is also a remap target")
        object.__setattr__(self, "category_remap", remap)

    def _parse(self, value):
        return float(value) if self.kind == NUMERIC else parse_category(value)

    @property
    def is_target(self) -> bool:
        return self.role == TARGET


def validate_schema(schema: Sequence[ColumnSpec]) -> tuple:
    schema = tuple(schema)
    names = [c.name for c in schema]
    shorts = [c.short_name for c in schema]
    for label, values in (("name", names), ("short_name", shorts)):
        dupes = sorted({v for v in values if values.count(v) > 1})
        if dupes:
            raise SchemaError(f"duplicate column {label}: {', '.join(dupes)}")
    targets = [c.name for c in schema if c.is_target]
    if len(targets) != 1:
        raise SchemaError(f"schema needs exactly one target column, found {len(targets)}")
    return schema


def _constraint_from_config(raw) -> ActionabilityConstraint:
    if raw is None:
        return ActionabilityConstraint()
    if isinstance(raw, str):
        return ActionabilityConstraint(raw)
    if isinstance(raw, dict) and "transitions" in raw:
        return ActionabilityConstraint(TRANSITIONS, frozenset(tuple(p) for p in raw["transitions"]))
    if isinstance(raw, dict) and "mode" in raw:
        return ActionabilityConstraint(raw["mode"], frozenset(tuple(p) for p in raw.get("allowed_transitions", ())))
    raise SchemaError(f"cannot read actionability {raw!r}")


def schema_from_config(config: dict) -> tuple:
    """Build a validated schema from a parsed schema document."""
    if not isinstance(config, dict) or "columns" not in config:
        raise SchemaError("schema document needs a 'columns' list")
    columns = []
    for entry in config["columns"]:
        if isinstance(entry, str):
            entry = {"name": entry}
        try:
            columns.append(
                ColumnSpec(
                    name=str(entry["name"]),
                    short_name=str(entry.get("short_name", "")),
                    kind=entry.get("kind", CATEGORICAL),
                    role=entry.get("role", FEATURE),
                    category_remap=tuple(tuple(p) for p in entry.get("remap", ())),
                    actionability=_constraint_from_config(entry.get("actionability")),
                )
            )
        except KeyError as exc:
            raise SchemaError(f"schema column entry missing {exc}") from None
    return validate_schema(columns)


def bundled_schemas() -> list:
    root = resources.files("causal_crm") / "schemas"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_schema(source) -> tuple:
    """Load a schema from a YAML file path or the name of a bundled schema."""
    path = Path(source)
    if path.exists():
        text = path.read_text(encoding="utf-8")
    else:
        resource = resources.files("causal_crm") / "schemas" / f"{source}.yaml"
        if not resource.is_file():
            raise SchemaError(f"no schema file or bundled schema named {source!r}")
        text = resource.read_text(encoding="utf-8")
    return schema_from_config(yaml.safe_load(text))


def resolve_data_path(path) -> Path:
    """Find ``path`` as given, else inside ``$CAUSAL_CRM_DATA_DIR``."""
    path = Path(path)
    if path.exists():
        return path
    base = os.environ.get(DATA_DIR_ENV)
    if base and (Path(base) / path).exists():
        return Path(base) / path
    if base and (Path(base) / path.name).exists():
        return Path(base) / path.name
    raise FileNotFoundError(f"dataset {str(path)!r} not found (also searched ${DATA_DIR_ENV})")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Rows of parsed cells, one frame column per schema entry (schema order)."""

    schema: tuple
    frame: pd.DataFrame

    @property
    def n(self) -> int:
        return len(self.frame)

    @property
    def d(self) -> int:
        return len(self.schema)

    @property
    def target(self) -> ColumnSpec:
        return next(c for c in self.schema if c.is_target)

    @property
    def features(self) -> tuple:
        return tuple(c for c in self.schema if not c.is_target)

    def spec(self, column: str) -> ColumnSpec:
        for c in self.schema:
            if column in (c.name, c.short_name):
                return c
        raise SchemaError(f"unknown column {column!r}")

    def column(self, column: str) -> np.ndarray:
        return self.frame[self.spec(column).name].to_numpy()

    def target_values(self) -> np.ndarray:
        return self.frame[self.target.name].to_numpy()

    def take(self, rows) -> "Dataset":
        return Dataset(self.schema, self.frame.iloc[np.asarray(rows)].reset_index(drop=True))


def dataset_from_frame(frame: pd.DataFrame, schema: Sequence[ColumnSpec]) -> Dataset:
    """Validate and parse an in-memory frame exactly like :func:`load_csv`."""
    schema = validate_schema(schema)
    missing = [c.name for c in schema if c.name not in frame.columns]
    if missing:
        raise SchemaError(f"missing column(s): {', '.join(missing)}")
    parsed = {}
    for spec in schema:
        raw = frame[spec.name].tolist()
        values = []
        for i, cell in enumerate(raw):
            if cell is None or (isinstance(cell, float) and math.isnan(cell)) or str(cell).strip() == "":
                raise ParseError(f"missing value in column {spec.name} at row {i}", row=i, column=spec.name)
            if spec.kind == NUMERIC:
                try:
                    number = float(cell)
                except (TypeError, ValueError):
                    raise ParseError(
                        f"cannot parse {cell!r} as numeric in column {spec.name} at row {i}", row=i, column=spec.name
                    ) from None
                if not math.isfinite(number):
                    raise ParseError(f"non-finite value in column {spec.name} at row {i}", row=i, column=spec.name)
                values.append(number)
            else:
                values.append(parse_category(cell))
        dtype = np.float64 if spec.kind == NUMERIC else object
        parsed[spec.name] = pd.Series(values, dtype=dtype)
    return Dataset(schema, pd.DataFrame(parsed))


def load_csv(path, schema: Sequence[ColumnSpec]) -> Dataset:
    """Read an RFC-4180 CSV with a header row; columns not in the schema are dropped."""
    path = resolve_data_path(path)
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False, encoding="utf-8")
    frame.columns = [c.strip() for c in frame.columns]
    return dataset_from_frame(frame, schema)


def apply_remaps(ds: Dataset) -> Dataset:
    frame = ds.frame.copy()
    for spec in ds.schema:
        if not spec.category_remap:
            continue
        mapping = dict(spec.category_remap)
        frame[spec.name] = frame[spec.name].map(lambda v: mapping.get(v, v)).astype(frame[spec.name].dtype)
    return Dataset(ds.schema, frame)


@dataclass(frozen=True)
class DiscretizationRule:
    """Binarize a numeric column: ``x < threshold -> 0``, ``threshold <= x -> 1``."""

    column: str
    threshold: float
    low_label: str = ""
    high_label: str = ""

    def __post_init__(self):
        if not self.low_label:
            object.__setattr__(self, "low_label", f"{self.column}<{self.threshold:.3f}")
        if not self.high_label:
            object.__setattr__(self, "high_label", f"{self.threshold:.3f}<={self.column}")

    def apply(self, values) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) >= self.threshold).astype(np.int64)


def compute_mean_threshold(ds: Dataset, column: str) -> DiscretizationRule:
    spec = ds.spec(column)
    if spec.kind != NUMERIC:
        raise KindError(f"column {spec.name} is {spec.kind}, not numeric")
    if ds.n < 1:
        raise DegenerateDataError("cannot take the mean of an empty column")
    values = ds.frame[spec.name].to_numpy(dtype=np.float64)
    return DiscretizationRule(spec.short_name, math.fsum(values) / len(values))


def mean_rules(ds: Dataset) -> list:
    return [compute_mean_threshold(ds, c.name) for c in ds.schema if c.kind == NUMERIC]


@dataclass(frozen=True, eq=False)
class EncodedDataset:
    """Integer category codes, features in schema order followed by the target.

    ``code_books[short_name][code]`` is the label the code stands for.
    """

    schema: tuple
    codes: np.ndarray
    code_books: dict
    rules: tuple = ()

    def __post_init__(self):
        codes = np.array(self.codes, dtype=np.int64, copy=True)
        if codes.ndim != 2 or codes.shape[1] != len(self.schema):
            raise SchemaError("code matrix does not match schema width")
        for j, spec in enumerate(self.schema):
            card = len(self.code_books[spec.short_name])
            if codes.shape[0] and (codes[:, j].min() < 0 or codes[:, j].max() >= card):
                raise SchemaError(f"column {spec.short_name} has codes outside its code book")
        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)

    @property
    def n(self) -> int:
        return self.codes.shape[0]

    @property
    def d(self) -> int:
        return self.codes.shape[1]

    @property
    def short_names(self) -> list:
        return [c.short_name for c in self.schema]

    @property
    def target(self) -> ColumnSpec:
        return self.schema[-1]

    @property
    def cardinalities(self) -> dict:
        return {name: len(book) for name, book in self.code_books.items()}

    def index(self, column: str) -> int:
        for j, c in enumerate(self.schema):
            if column in (c.name, c.short_name):
                return j
        raise SchemaError(f"unknown column {column!r}")

    def column(self, column: str) -> np.ndarray:
        return self.codes[:, self.index(column)]

    def target_values(self) -> np.ndarray:
        return self.codes[:, -1]

    def take(self, rows) -> "EncodedDataset":
        return EncodedDataset(self.schema, self.codes[np.asarray(rows, dtype=np.int64)], self.code_books, self.rules)

    def decode(self) -> pd.DataFrame:
        out = {}
        for j, spec in enumerate(self.schema):
            book = self.code_books[spec.short_name]
            out[spec.name] = pd.Series([book[c] for c in self.codes[:, j]], dtype=object)
        return pd.DataFrame(out)


def discretize(ds: Dataset, rules: Iterable[DiscretizationRule] | None = None) -> EncodedDataset:
    """Encode every column as small integer codes.

    Numeric columns are binarized by their rule (mean rules are computed when
    ``rules`` is None); categorical columns get codes in sorted value order.
    """
    if rules is None:
        rules = mean_rules(ds)
    by_column = {}
    for rule in rules:
        spec = ds.spec(rule.column)
        if spec.kind != NUMERIC:
            raise KindError(f"discretization rule for non-numeric column {spec.name}")
        by_column[spec.name] = rule
    order = list(ds.features) + [ds.target]
    codes = np.empty((ds.n, len(order)), dtype=np.int64)
    books = {}
    for j, spec in enumerate(order):
        values = ds.frame[spec.name].to_numpy()
        if spec.kind == NUMERIC:
            if spec.name not in by_column:
                raise SchemaError(f"numeric column {spec.name} has no discretization rule")
            rule = by_column[spec.name]
            codes[:, j] = rule.apply(values)
            books[spec.short_name] = (rule.low_label, rule.high_label)
        else:
            levels = sorted(set(values.tolist()), key=category_sort_key)
            lookup = {v: i for i, v in enumerate(levels)}
            codes[:, j] = [lookup[v] for v in values]
            books[spec.short_name] = tuple(levels)
    kept = tuple(by_column[c.name] for c in order if c.name in by_column)
    return EncodedDataset(tuple(order), codes, books, kept)


def balance_indices(y, seed: int) -> np.ndarray:
    """Row indices that undersample every class down to the minority count."""
    y = np.asarray(y)
    labels, counts = np.unique(y, return_counts=True)
    if len(labels) < 2:
        raise DegenerateDataError("cannot balance a single-class target")
    size = counts.min()
    rng = np.random.default_rng(seed)
    keep = []
    for label, count in zip(labels, counts):
        rows = np.flatnonzero(y == label)
        keep.append(rows if count == size else rng.choice(rows, size=size, replace=False))
    return np.sort(np.concatenate(keep))


def undersample_balance(ds, seed: int):
    """Randomly drop majority-class rows until all class counts are equal."""
    return ds.take(balance_indices(ds.target_values(), seed))


def split_indices(n: int, test_fraction: float, seed: int):
    """``(train, test)`` row indices in seeded shuffle order."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n_test = math.ceil(round(n * test_fraction, 9))
    if n_test >= n:
        raise ValueError(f"test_fraction {test_fraction} leaves no training rows out of {n}")
    perm = np.random.default_rng(seed).permutation(n)
    return perm[n_test:], perm[:n_test]


def train_test_split(ds, test_fraction: float, seed: int):
    """Seeded disjoint partition; returns ``(train, test)`` with ``ceil(n * test_fraction)`` test rows."""
    train, test = split_indices(ds.n, test_fraction, seed)
    return ds.take(train), ds.take(test)


@dataclass(frozen=True)
class FeatureSpace:
    """Real-valued view of the feature columns used by the forest and counterfactual engine.

    Numeric columns keep their values.  Categorical columns keep numeric
    category values and map text categories to their sorted level index.
    """

    columns: tuple
    levels: dict
    target_levels: tuple

    @classmethod
    def from_dataset(cls, ds: Dataset) -> "FeatureSpace":
        levels = {}
        for spec in ds.features:
            if spec.kind == CATEGORICAL:
                values = set(ds.frame[spec.name].tolist())
                if any(isinstance(v, str) for v in values):
                    levels[spec.name] = tuple(sorted(values, key=category_sort_key))
        target_levels = tuple(sorted(set(ds.target_values().tolist()), key=category_sort_key))
        return cls(ds.features, levels, target_levels)

    @property
    def names(self) -> list:
        return [c.name for c in self.columns]

    def encode_value(self, j: int, value) -> float:
        spec = self.columns[j]
        if spec.name in self.levels:
            try:
                return float(self.levels[spec.name].index(parse_category(value)))
            except ValueError:
                raise SchemaError(f"unknown category {value!r} for column {spec.name}") from None
        return float(value)

    def decode_value(self, j: int, value: float):
        spec = self.columns[j]
        if spec.name in self.levels:
            return self.levels[spec.name][int(round(value))]
        if spec.kind == CATEGORICAL:
            return parse_category(value)
        return float(value)

    def matrix(self, ds: Dataset) -> np.ndarray:
        out = np.empty((ds.n, len(self.columns)), dtype=np.float64)
        for j, spec in enumerate(self.columns):
            values = ds.frame[spec.name].tolist()
            out[:, j] = [self.encode_value(j, v) for v in values]
        return out

    def labels(self, ds: Dataset) -> np.ndarray:
        lookup = {v: i for i, v in enumerate(self.target_levels)}
        return np.array([lookup[v] for v in ds.target_values().tolist()], dtype=np.int64)

    def constraints(self) -> list:
        return [c.actionability.mapped(lambda v, j=j: self.encode_value(j, v)) for j, c in enumerate(self.columns)]


class MeanThresholdDiscretizer(TransformerMixin, BaseEstimator):
    """Binarize selected columns of a numeric array at their training-set mean.

    Parameters
    ----------
    columns : list of int or None
        Column indices to binarize; ``None`` binarizes every column.  Other
        columns pass through unchanged.
    """

    def __init__(self, columns=None):
        self.columns = columns

    def fit(self, X, y=None):
        X = validate_data(self, X, dtype=np.float64)
        cols = range(X.shape[1]) if self.columns is None else self.columns
        self.columns_ = np.array(sorted(cols), dtype=np.int64)
        self.thresholds_ = np.array([math.fsum(X[:, j]) / X.shape[0] for j in self.columns_])
        return self

    def transform(self, X):
        check_is_fitted(self, "thresholds_")
        X = validate_data(self, X, dtype=np.float64, reset=False, copy=True)
        X[:, self.columns_] = (X[:, self.columns_] >= self.thresholds_).astype(np.float64)
        return X
