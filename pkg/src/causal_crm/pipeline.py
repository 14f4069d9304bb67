"""End-to-end pipeline: ingest, discretize, learn, fit, intervene, explain.

Every stage draws its seed from the run seed and a fixed stage label, so
reruns with the same configuration write byte-identical artifacts.
"""

from __future__ import annotations

import contextlib
import csv
import dataclasses
import hashlib
import io
import json
import logging
import platform
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import scipy
import sklearn
import yaml

from . import __version__
from .bayesnet import (
    InterventionSpec, dump_network, fit_cpds, load_network, marginal, query_after_intervention,
)
from .blackbox import RandomForest, accuracy, dump_forest
from .counterfactual import (
    CfQuery, SearchSettings, generate_counterfactuals, report_rows, rows_to_csv, rows_to_text,
)
from .dataset import (
    NUMERIC, FeatureSpace, apply_remaps, balance_indices, discretize, load_csv, load_schema,
    mean_rules, resolve_data_path, split_indices,
)
from .exceptions import CausalCRMError, SchemaError
from .notears import NotearsConfig, dump_dag, export_dot, learn_structure
from .synthetic import FIXTURES, fixture_dataset

logger = logging.getLogger(__name__)


@dataclass
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 8
    min_leaf: int = 2
    features_per_split: int | None = None


@dataclass
class CounterfactualConfig:
    k: int = 4
    proximity_weight: float = 0.3
    diversity_weight: float = 3.2
    lam: float = 10.0
    sparsity_limit: int = 3
    population: int = 50
    generations: int = 200
    elitism: int = 5


@dataclass
class PipelineConfig:
    dataset: str | None = None
    schema: str | None = None
    fixture: str | None = None
    seed: int = 0
    balance: bool = False
    test_fraction: float = 0.2
    notears: NotearsConfig = field(default_factory=NotearsConfig)
    smoothing: float = 1.0
    forest: ForestConfig = field(default_factory=ForestConfig)
    counterfactual: CounterfactualConfig = field(default_factory=CounterfactualConfig)
    interventions: list = field(default_factory=list)
    network: str | None = None
    target: str | None = None
    instance: int = 0
    output_dir: str = "out"

    def validate(self):
        if self.fixture is None and self.network is None and (self.dataset is None or self.schema is None):
            raise SchemaError("config needs 'fixture', 'network', or both 'dataset' and 'schema'")
        if self.fixture is None and self.dataset is not None:
            resolve_data_path(self.dataset)
        if self.network is not None and not Path(self.network).exists():
            raise FileNotFoundError(f"network file {self.network!r} not found")
        if self.fixture is not None and self.fixture not in FIXTURES:
            raise SchemaError(f"unknown fixture {self.fixture!r}; choose from {', '.join(sorted(FIXTURES))}")
        if not 0 < self.test_fraction < 1:
            raise SchemaError("test_fraction must lie in (0, 1)")
        for spec in self.interventions:
            InterventionSpec.parse(spec)
        return self

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {"notears": NotearsConfig, "forest": ForestConfig, "counterfactual": CounterfactualConfig}


def config_from_dict(raw: dict, base: PipelineConfig | None = None) -> PipelineConfig:
    cfg = base or PipelineConfig()
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    for key, value in (raw or {}).items():
        if key not in known:
            raise SchemaError(f"unknown config key {key!r}")
        if key in _SECTIONS:
            section = getattr(cfg, key)
            allowed = {f.name for f in dataclasses.fields(section)}
            bad = set(value or {}) - allowed
            if bad:
                raise SchemaError(f"unknown {key} option(s): {', '.join(sorted(bad))}")
            setattr(cfg, key, dataclasses.replace(section, **(value or {})))
        else:
            setattr(cfg, key, value)
    return cfg


def load_config(source) -> PipelineConfig:
    """Read a YAML pipeline config from a path or the name of a bundled config."""
    path = Path(source)
    if path.exists():
        text = path.read_text(encoding="utf-8")
        base_dir = path.parent
    else:
        resource = resources.files("causal_crm") / "configs" / f"{source}.yaml"
        if not resource.is_file():
            raise SchemaError(f"no config file or bundled config named {source!r}")
        text, base_dir = resource.read_text(encoding="utf-8"), None
    cfg = config_from_dict(yaml.safe_load(text) or {})
    if base_dir is not None and cfg.schema and not Path(cfg.schema).exists() and (base_dir / cfg.schema).exists():
        cfg.schema = str(base_dir / cfg.schema)
    return cfg


def stage_seed(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{seed}/{label}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


@contextlib.contextmanager
def stage(name):
    """Prefix errors raised inside a stage with ``[name]``."""
    try:
        yield
    except (CausalCRMError, ValueError, KeyError, OSError) as exc:
        msg = str(exc.args[0]) if exc.args else exc.__class__.__name__
        if not msg.startswith("["):
            exc.args = (f"[{name}] {msg}",) + tuple(exc.args[1:])
        raise


def _csv(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _fmt_dist(p) -> str:
    return " ".join(f"{i}:{v:.3f}" for i, v in enumerate(p))


class Pipeline:
    """Lazily computed stages backed by one :class:`PipelineConfig`."""

    def __init__(self, config: PipelineConfig, echo=print):
        self.cfg = config.validate()
        self.out = Path(config.output_dir)
        self.echo = echo
        self._cache = {}
        self.written = []

    def _once(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def write(self, name, text):
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        path.write_text(text, encoding="utf-8")
        self.written.append(name)
        return path

    def seeds(self) -> dict:
        return {label: stage_seed(self.cfg.seed, label)
                for label in ("fixture", "balance", "split", "notears", "forest", "counterfactual")}

    # -- stages ------------------------------------------------------------
    def dataset(self):
        def build():
            with stage("ingest"):
                if self.cfg.fixture is None and self.cfg.dataset is None:
                    raise SchemaError("no dataset configured")
                if self.cfg.fixture:
                    ds = fixture_dataset(self.cfg.fixture, seed=self.seeds()["fixture"])
                else:
                    ds = load_csv(self.cfg.dataset, load_schema(self.cfg.schema))
                return apply_remaps(ds)
        return self._once("dataset", build)

    def encoded(self):
        def build():
            with stage("discretize"):
                ds = self.dataset()
                return discretize(ds, mean_rules(ds))
        return self._once("encoded", build)

    def rows(self):
        """``(kept, train, test)`` row indices into the full dataset."""
        def build():
            with stage("split"):
                y = self.encoded().target_values()
                kept = balance_indices(y, self.seeds()["balance"]) if self.cfg.balance else np.arange(len(y))
                train, test = split_indices(len(kept), self.cfg.test_fraction, self.seeds()["split"])
                return kept, kept[train], kept[test]
        return self._once("rows", build)

    def dag(self):
        def build():
            with stage("learn"):
                cfg = dataclasses.replace(self.cfg.notears, seed=self.seeds()["notears"])
                return learn_structure(self.encoded().take(self.rows()[0]), cfg)
        return self._once("dag", build)

    def network(self):
        def build():
            with stage("fit"):
                if self.cfg.network is not None:
                    return load_network(Path(self.cfg.network).read_text(encoding="utf-8"))
                return fit_cpds(self.dag(), self.encoded().take(self.rows()[0]), self.cfg.smoothing)
        return self._once("network", build)

    def target_node(self) -> str:
        if self.cfg.target is not None:
            return self.node_name(self.cfg.target)
        if self.cfg.network is not None:
            return self.network().nodes[-1]
        return self.encoded().target.short_name

    def node_name(self, name) -> str:
        if self.cfg.network is not None:
            if name not in self.network().nodes:
                raise KeyError(f"unknown node {name!r}")
            return name
        enc = self.encoded()
        return enc.schema[enc.index(name)].short_name

    def feature_space(self):
        return self._once("space", lambda: FeatureSpace.from_dataset(self.dataset()))

    def forest(self):
        def build():
            with stage("train"):
                space = self.feature_space()
                x = space.matrix(self.dataset())
                y = space.labels(self.dataset())
                _, train, test = self.rows()
                params = dataclasses.asdict(self.cfg.forest)
                rf = RandomForest(seed=self.seeds()["forest"], **params).fit(x[train], y[train])
                return rf, x, y, accuracy(rf, x[test], y[test])
        return self._once("forest", build)

    # -- commands ----------------------------------------------------------
    def cmd_ingest(self):
        ds = self.dataset()
        rows = [["column", "short_name", "kind", "role", "distinct", "mean"]]
        for spec in ds.schema:
            values = ds.frame[spec.name]
            mean = f"{values.mean():.6f}" if spec.kind == NUMERIC else ""
            rows.append([spec.name, spec.short_name, spec.kind, spec.role, str(values.nunique()), mean])
        self.write("ingest.csv", _csv(rows))
        counts = ds.frame[ds.target.name].value_counts().sort_index()
        self.echo(f"rows={ds.n} columns={ds.d} target={ds.target.name} "
                  + " ".join(f"{k}:{v}" for k, v in counts.items()))

    def cmd_discretize(self):
        enc = self.encoded()
        rows = [["column", "threshold", "low_label", "high_label"]]
        rows += [[r.column, repr(r.threshold), r.low_label, r.high_label] for r in enc.rules]
        self.write("discretization.csv", _csv(rows))
        self.write("encoded.csv", _csv([enc.short_names] + enc.codes.tolist()))
        for r in enc.rules:
            self.echo(f"{r.column}: threshold {r.threshold:.3f}")

    def cmd_learn(self):
        dag = self.dag()
        self.write("dag.dot", export_dot(dag))
        self.write("dag.txt", dump_dag(dag))
        self.echo(f"edges={len(dag.edges)} h={dag.metadata.get('h', 0.0):.3g} "
                  f"threshold={dag.metadata.get('threshold_used', self.cfg.notears.edge_threshold):g}")
        return dag

    def cmd_fit(self):
        bn = self.network()
        self.write("bn.txt", dump_network(bn))
        target = self.target_node()
        self.echo(f"{target}: {_fmt_dist(marginal(bn, target).probabilities)}")
        return bn

    def cmd_intervene(self, extra_specs=()):
        with stage("intervene"):
            specs = [InterventionSpec.parse(t) for t in list(self.cfg.interventions) + list(extra_specs)]
        bn = self.network()
        target = self.target_node()
        before = marginal(bn, target).as_array()
        rows = [["feature", "categories", "original_distribution", "changed_distribution",
                 "target_before", "target_after", "delta"]]
        results = []
        for spec in specs:
            with stage("intervene"):
                node = self.node_name(spec.node)
                spec = InterventionSpec(node, dataclasses.replace(spec.new_marginal, node=node))
                original = marginal(bn, node).as_array()
                after = query_after_intervention(bn, spec, target).as_array()
            delta = after - before
            cats = "; ".join(f"{i}={bn.label(node, i)}" for i in range(bn.cardinalities[node]))
            rows.append([node, cats, _fmt_dist(original), _fmt_dist(spec.new_marginal.probabilities),
                         _fmt_dist(before), _fmt_dist(after), " ".join(f"{v:+.6f}" for v in delta)])
            self.echo(f"do({node}): {target} {_fmt_dist(before)} -> {_fmt_dist(after)} "
                      f"(delta {' '.join(f'{v:+.4f}' for v in delta)})")
            results.append((node, before, after))
        self.write("interventions.csv", _csv(rows))
        return results

    def cmd_explain(self, instance=None, k=None):
        rf, x, y, acc = self.forest()
        self.write("model.txt", dump_forest(rf))
        space = self.feature_space()
        _, train, test = self.rows()
        index = self.cfg.instance if instance is None else instance
        if not 0 <= index < len(test):
            raise SchemaError(f"[explain] instance {index} out of range (test split has {len(test)} rows)")
        xi = x[test[index]]
        current = rf.predict(xi[None, :])[0]
        desired = next(c for c in rf.classes_ if c != current)
        cf = self.cfg.counterfactual
        query = CfQuery(tuple(xi), desired, k or cf.k, cf.proximity_weight, cf.diversity_weight, cf.lam,
                        cf.sparsity_limit, self.seeds()["counterfactual"])
        settings = SearchSettings(cf.population, cf.generations, cf.elitism)
        self.echo(f"forest test accuracy={acc:.4f}; explaining test row {index} (predicted {current})")
        with stage("explain"):
            cfset = generate_counterfactuals(rf, x[train], query, space.constraints(), space.names, settings)

        def fmt(j, v):
            value = space.decode_value(j, v)
            return f"{value:g}" if isinstance(value, float) else str(value)

        rows = report_rows(cfset, space.names, self.dataset().target.name, current, fmt,
                           class_fmt=lambda c: str(space.target_levels[c]))
        self.write("counterfactuals.csv", rows_to_csv(rows))
        text = rows_to_text(rows)
        self.write("counterfactuals.txt", text)
        self.echo(text.rstrip())
        self.echo(f"diversity={cfset.diversity:.6g} proximity={cfset.proximity:.6g}")
        return cfset

    def write_manifest(self, command):
        manifest = {
            "command": command,
            "config": self.cfg.as_dict(),
            "seeds": self.seeds(),
            "outputs": sorted(set(self.written)),
            "versions": {
                "causal_crm": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                "scikit-learn": sklearn.__version__, "python": platform.python_version(),
            },
        }
        self.write("run-manifest.json", json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
