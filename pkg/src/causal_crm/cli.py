"""``causal-crm`` command line.

Exit status: 0 success, 1 selftest failure, 2 config or schema error,
3 convergence failure or counterfactual search exhaustion, 4 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .exceptions import ConvergenceError, CounterfactualExhaustedError
from .pipeline import Pipeline, PipelineConfig, load_config

EXIT_OK, EXIT_SELFTEST, EXIT_CONFIG, EXIT_SEARCH, EXIT_IO = 0, 1, 2, 3, 4

COMMANDS = ("ingest", "discretize", "learn", "fit", "intervene", "explain", "report", "selftest")

# flag -> (section or None, field, type)
_OVERRIDES = {
    "dataset": (None, "dataset", str),
    "schema": (None, "schema", str),
    "fixture": (None, "fixture", str),
    "network": (None, "network", str),
    "seed": (None, "seed", int),
    "out": (None, "output_dir", str),
    "test_fraction": (None, "test_fraction", float),
    "smoothing": (None, "smoothing", float),
    "target": (None, "target", str),
    "instance": (None, "instance", int),
    "l1_penalty": ("notears", "l1_penalty", float),
    "edge_threshold": ("notears", "edge_threshold", float),
    "max_dual_iterations": ("notears", "max_dual_iterations", int),
    "n_trees": ("forest", "n_trees", int),
    "max_depth": ("forest", "max_depth", int),
    "min_leaf": ("forest", "min_leaf", int),
    "k": ("counterfactual", "k", int),
    "lam": ("counterfactual", "lam", float),
    "proximity_weight": ("counterfactual", "proximity_weight", float),
    "diversity_weight": ("counterfactual", "diversity_weight", float),
    "sparsity_limit": ("counterfactual", "sparsity_limit", int),
    "population": ("counterfactual", "population", int),
    "generations": ("counterfactual", "generations", int),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file or bundled config name")
    for flag, (_, _, kind) in _OVERRIDES.items():
        common.add_argument("--" + flag.replace("_", "-"), dest=flag, type=kind, default=None)
    bal = common.add_mutually_exclusive_group()
    bal.add_argument("--balance", dest="balance", action="store_true", default=None)
    bal.add_argument("--no-balance", dest="balance", action="store_false")
    common.add_argument("--spec", action="append", default=[], metavar="NODE=P0,P1,...",
                        help="intervention; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="causal-crm", description="Causal analysis and counterfactual reports.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    for flag, (section, name, _) in _OVERRIDES.items():
        value = getattr(args, flag)
        if value is None:
            continue
        target = getattr(cfg, section) if section else cfg
        if section:
            setattr(cfg, section, dataclasses.replace(target, **{name: value}))
        else:
            setattr(cfg, name, value)
    if args.balance is not None:
        cfg.balance = args.balance
    return cfg


def run_command(command, cfg: PipelineConfig, specs=(), echo=print) -> int:
    pipe = Pipeline(cfg, echo=echo)
    if command == "ingest":
        pipe.cmd_ingest()
    elif command == "discretize":
        pipe.cmd_discretize()
    elif command == "learn":
        pipe.cmd_learn()
    elif command == "fit":
        if cfg.network is None:
            pipe.cmd_learn()
        pipe.cmd_fit()
    elif command == "intervene":
        pipe.cmd_intervene(specs)
    elif command == "explain":
        pipe.cmd_explain()
    elif command == "report":
        pipe.cmd_ingest()
        pipe.cmd_discretize()
        pipe.cmd_learn()
        pipe.cmd_fit()
        pipe.cmd_intervene(specs)
        pipe.cmd_explain()
    pipe.write_manifest(command)
    return EXIT_OK


def selftest(out, echo=print) -> int:
    """Run the bundled fixtures end to end and check the known answers."""
    results = []

    def check(name, ok):
        results.append(ok)
        echo(f"{'PASS' if ok else 'FAIL'} {name}")

    quiet = lambda *_: None  # noqa: E731
    out = Path(out)
    chain = Pipeline(PipelineConfig(fixture="chain", output_dir=str(out / "chain")), echo=quiet)
    check("chain fixture: 4 edges", len(chain.cmd_learn().edges) == 4)
    before, after = chain.cmd_intervene(["B1=0.5,0.5"])[0][1:]
    check("root intervention at its own marginal changes nothing",
          bool(np.abs(after - before).max() < 0.05))
    indep = Pipeline(PipelineConfig(fixture="independent", output_dir=str(out / "independent")), echo=quiet)
    check("independent fixture: 0 edges", len(indep.cmd_learn().edges) == 0)
    thr = Pipeline(PipelineConfig(fixture="threshold", output_dir=str(out / "threshold")), echo=quiet)
    acc = thr.forest()[3]
    check(f"threshold fixture: forest accuracy {acc:.3f} >= 0.95", acc >= 0.95)
    cfset = thr.cmd_explain(k=2)
    check("threshold fixture: counterfactuals valid", all(c.valid for c in cfset.candidates))
    sex = thr.feature_space().names.index("SEX")
    check("threshold fixture: SEX never changes",
          all(c.values[sex] == cfset.query.instance[sex] for c in cfset.candidates))
    return EXIT_OK if all(results) else EXIT_SELFTEST


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "selftest":
            return selftest(args.out or "selftest-out")
        return run_command(args.command, resolve_config(args), args.spec)
    except CounterfactualExhaustedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.best_invalid is not None:
            print(f"best invalid candidate: {exc.best_invalid}", file=sys.stderr)
        return EXIT_SEARCH
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SEARCH
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
