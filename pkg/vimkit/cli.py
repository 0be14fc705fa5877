#!/usr/bin/env python3
"""
vimkit command line
===================
    vimkit estimate data.csv --outcome y --measure r_squared
    vimkit test data.csv --outcome y --measure auc --groups groups.json --beta 0.05
    vimkit test trial.csv --outcome y --treatment a --group "age=age,age2"
    vimkit simulate --scenario 2 --measure auc --n 500 1000 --reps 300

`estimate` reports cross-fitted importance with intervals; `test` adds the
sample-split test of the beta-null. With --treatment (rule value) or
--observed (accuracy under missing outcomes) both use the one-step estimators.

Errors go to standard error as "E_CONFIG: ...", "E_DATA: ..." or
"E_DEGENERATE: ..." with exit status 2, 3 or 4.
"""

import argparse
import csv
import json
import logging
import math
import sys
import textwrap
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from vimkit import __version__
from vimkit.coarsened import (MissingnessDataset, TreatmentDataset, coarsened_estimate,
                              coarsened_split_test)
from vimkit.core import (BALANCED, BINARY, FOLD_MODES, ConfigError, DataError, Dataset,
                         FeatureSet, VimError, detect_outcome_kind, resolve_threads)
from vimkit.estimators import EstimationConfig, estimate_vim
from vimkit.i18n import detect_locale, set_locale, t
from vimkit.learners import make_learner
from vimkit.measures import DEVIANCE_GAMMA, MeasureKind
from vimkit.report import (FORMATS, build_report, disable_colors, importance_rows,
                           print_importance, print_simulation, simulation_rows,
                           write_report)
from vimkit.simulation import DEFAULT_N_GRID, DEFAULT_REPS, run_experiment, scenario

log = logging.getLogger("vimkit")

SUBCOMMANDS = ("estimate", "test", "simulate")


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    input: Optional[str] = None
    outcome: str = "y"
    groups: Tuple[Tuple[str, Tuple[str, ...]], ...] = ()
    measure: str = "auc"
    K: int = 5
    beta: float = 0.0
    alpha: float = 0.05
    seed: int = 0
    learner: Optional[str] = None
    output: Optional[str] = None
    fmt: str = "json"
    threads: int = 0
    treatment: Optional[str] = None
    observed: Optional[str] = None
    clamp: bool = False
    stratified: bool = False
    fold_mode: str = BALANCED
    split_fraction: float = 0.5
    strict_auc: bool = False
    gamma: float = DEVIANCE_GAMMA
    scenario: int = 2
    n_grid: Tuple[int, ...] = DEFAULT_N_GRID
    reps: int = DEFAULT_REPS
    group_column: str = "x1"
    cross_fit: bool = True
    quiet: bool = False
    json_stdout: bool = False

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise ConfigError(f"unknown subcommand {self.subcommand!r}")
        if self.fmt not in FORMATS:
            raise ConfigError(f"unknown output format {self.fmt!r}")
        if self.treatment and self.observed:
            raise ConfigError("--treatment and --observed cannot be combined")
        if self.subcommand != "simulate" and not self.input:
            raise ConfigError(f"'{self.subcommand}' needs an input CSV file")

    def report_config(self):
        """Settings echoed into the report (never the thread count)."""
        cfg = {"measure": self.measure, "folds": self.K, "beta": self.beta,
               "alpha": self.alpha, "seed": self.seed, "learner": self.learner,
               "fold_mode": self.fold_mode, "stratified": self.stratified}
        if self.subcommand == "simulate":
            cfg.update({"scenario": self.scenario, "n_grid": list(self.n_grid),
                        "reps": self.reps, "group": self.group_column,
                        "cross_fit": self.cross_fit})
        else:
            cfg.update({"input": self.input, "outcome": self.outcome,
                        "split_fraction": self.split_fraction,
                        "treatment": self.treatment, "observed": self.observed})
        return cfg


# ─── CSV ingestion ────────────────────────────────────────────────────────────

def _parse_cell(text, line, column, allow_empty=False):
    text = text.strip()
    if text == "" and allow_empty:
        return math.nan
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"line {line}, column '{column}': cannot parse {text!r} as a number")
    if not math.isfinite(value):
        raise DataError(f"line {line}, column '{column}': non-finite value {text!r}")
    return value


def ingest_csv(path, outcome_column, treatment_column=None, observed_column=None):
    """Dataset, TreatmentDataset or MissingnessDataset from a headed CSV.

    Errors cite physical file lines (the header is line 1), blank lines included.
    Feature columns keep file order.
    An empty outcome cell is allowed only where the observed indicator is 0.
    """
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            header = [h.strip() for h in next(reader, [])]
            records = [(reader.line_num, r) for r in reader if any(cell.strip() for cell in r)]
    except FileNotFoundError:
        raise DataError(f"input file not found: {path}")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}")
    except UnicodeDecodeError as exc:
        raise DataError(f"{path} is not UTF-8: {exc}")
    if not header:
        raise DataError(f"{path} is empty")
    if len(set(header)) != len(header):
        raise DataError("duplicate column names in header")

    roles = {"outcome": outcome_column, "treatment": treatment_column,
             "observed": observed_column}
    for role, name in roles.items():
        if name is not None and name not in header:
            raise ConfigError(f"{role} column '{name}' not found in {path}")
    role_names = {name for name in roles.values() if name is not None}
    feature_names = [h for h in header if h not in role_names]
    if not feature_names:
        raise DataError("no feature columns left after removing role columns")
    if not records:
        raise DataError(f"{path} has a header but no data rows")

    position = {name: j for j, name in enumerate(header)}
    obs_j = position.get(observed_column) if observed_column else None
    table = np.empty((len(records), len(header)))
    for i, (line, record) in enumerate(records):
        if len(record) != len(header):
            raise DataError(f"line {line}: expected {len(header)} cells, got {len(record)}")
        observed = None
        if obs_j is not None:
            observed = _parse_cell(record[obs_j], line, observed_column)
        for j, cell in enumerate(record):
            missing_ok = header[j] == outcome_column and observed == 0.0
            table[i, j] = _parse_cell(cell, line, header[j], allow_empty=missing_ok)

    x = table[:, [position[name] for name in feature_names]]
    y = table[:, position[outcome_column]]
    if treatment_column:
        return TreatmentDataset(x, table[:, position[treatment_column]], y,
                                tuple(feature_names))
    if observed_column:
        return MissingnessDataset.from_outcome(x, y, table[:, obs_j], tuple(feature_names))
    return Dataset(x, y, detect_outcome_kind(y), tuple(feature_names))


def parse_group_definitions(path=None, specs=()):
    """[(name, columns)] from a JSON file and/or "name=c1,c2" specs."""
    pairs = []
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read groups file {path}: {exc}")
        if not isinstance(data, dict):
            raise ConfigError("groups file must map group names to column lists")
        for name, cols in data.items():
            cols = [cols] if isinstance(cols, str) else list(cols)
            pairs.append((str(name), tuple(str(c) for c in cols)))
    for spec in specs:
        name, sep, cols = spec.partition("=")
        if not sep:
            name, cols = spec, spec
        pairs.append((name.strip(), tuple(c.strip() for c in cols.split(",") if c.strip())))
    return tuple(pairs)


def resolve_groups(pairs, column_names, outcome=None):
    """{name: FeatureSet}; with no definitions every feature is its own group."""
    if not pairs:
        pairs = [(name, (name,)) for name in column_names]
    groups = {}
    for name, cols in pairs:
        if outcome is not None and outcome in cols:
            raise ConfigError(f"group '{name}' includes the outcome column '{outcome}'")
        if name in groups:
            raise ConfigError(f"duplicate group name '{name}'")
        groups[name] = FeatureSet.from_names(cols, column_names)
    return groups


# ─── Run ──────────────────────────────────────────────────────────────────────

def _estimation_config(cfg, split, outcome_kind, threads):
    learner = make_learner(cfg.learner, outcome_kind) if cfg.learner else None
    return EstimationConfig(measure=cfg.measure, K=cfg.K, cross_fit=cfg.cross_fit,
                            sample_split=split, beta=cfg.beta, alpha=cfg.alpha,
                            seed=cfg.seed, learner=learner, fold_mode=cfg.fold_mode,
                            stratified=cfg.stratified, split_fraction=cfg.split_fraction,
                            gamma=cfg.gamma, strict_auc=cfg.strict_auc, threads=threads)


def _run_importance(cfg, threads):
    split = cfg.subcommand == "test"
    d = ingest_csv(cfg.input, cfg.outcome, cfg.treatment, cfg.observed)
    groups = resolve_groups(cfg.groups, d.column_names, cfg.outcome)
    coarsened = isinstance(d, (TreatmentDataset, MissingnessDataset))

    if coarsened:
        kind = d.outcome_kind if isinstance(d, TreatmentDataset) else BINARY
        ecfg = _estimation_config(cfg, split, kind, threads)
        estimator = coarsened_split_test if split else coarsened_estimate
        table = [(name, s, estimator(d, s, ecfg, ecfg.learner)) for name, s in groups.items()]
    else:
        ecfg = _estimation_config(cfg, split, d.outcome_kind, threads)
        table = []
        for name, s in groups.items():
            log.info(f"group '{name}'")
            table.append((name, s, estimate_vim(d, s, ecfg)))
    rows = importance_rows(table, d.column_names, clamp=cfg.clamp, with_test=split)
    return build_report(cfg.subcommand, cfg.report_config(), rows)


def _run_simulation(cfg, threads):
    sc = scenario(cfg.scenario)
    s = FeatureSet.from_names([cfg.group_column], ("x1", "x2"))
    ecfg = _estimation_config(cfg, True, BINARY, 1)
    table = run_experiment(sc, cfg.measure, s, cfg.n_grid, cfg.reps, ecfg,
                           seed=cfg.seed, threads=threads)
    rows = simulation_rows(table, sc.index, MeasureKind.parse(cfg.measure).value,
                           cfg.group_column)
    return build_report("simulate", cfg.report_config(), rows)


def run(cfg):
    """Execute one subcommand; returns the exit status. Raises VimError."""
    threads = resolve_threads(cfg.threads)
    if cfg.subcommand == "simulate":
        report = _run_simulation(cfg, threads)
    else:
        report = _run_importance(cfg, threads)

    if cfg.output:
        try:
            write_report(report, cfg.output, cfg.fmt)
        except OSError as exc:
            raise ConfigError(f"cannot write report to {cfg.output}: {exc.strerror or exc}")
    if cfg.json_stdout:
        write_report(report, "-", "json")
    elif not cfg.quiet:
        if cfg.subcommand == "simulate":
            print_simulation(report)
        else:
            print_importance(report, t(f"banner.{cfg.subcommand}"))
    return 0


# ─── Argument parsing ─────────────────────────────────────────────────────────

def _add_common(p):
    p.add_argument("--measure", default="auc",
                   help="r_squared, deviance, accuracy or auc (default: auc)")
    p.add_argument("--folds", "-K", type=int, default=5, help="Cross-fitting folds (default: 5)")
    p.add_argument("--beta", type=float, default=0.0, help="Null threshold beta (default: 0)")
    p.add_argument("--alpha", type=float, default=0.05, help="Test level (default: 0.05)")
    p.add_argument("--seed", type=int, default=0, help="Random seed (default: 0)")
    p.add_argument("--learner", default=None,
                   help="mean, logistic, linear, stumps or stack:a+b "
                        "(default: stack:mean+logistic / stack:mean+linear)")
    p.add_argument("--fold-mode", choices=FOLD_MODES, default=BALANCED,
                   help="balanced (default) or replacement fold assignment")
    p.add_argument("--stratified", action="store_true",
                   help="Keep outcome prevalence in every fold (binary outcomes)")
    p.add_argument("--strict-auc", action="store_true",
                   help="Count tied AUC pairs as 0 instead of 1/2")
    p.add_argument("--gamma", type=float, default=DEVIANCE_GAMMA,
                   help="Deviance probability clipping (default: 1e-3)")
    p.add_argument("--threads", type=int, default=None,
                   help="Worker threads (0 = auto; default: VIMKIT_THREADS or auto)")
    p.add_argument("--output", "-o", metavar="PATH", help="Write the report to PATH")
    p.add_argument("--format", choices=FORMATS, default="json", help="Report format")
    p.add_argument("--json", action="store_true", help="Print the JSON report to stdout")
    p.add_argument("--quiet", "-q", action="store_true", help="No terminal summary")
    p.add_argument("--verbose", "-v", action="store_true", help="Progress messages")
    p.add_argument("--no-color", action="store_true", help="Disable coloured output")
    p.add_argument("--lang", metavar="LANG",
                   help="Output language (en, pt_BR, es); default VIMKIT_LANG or system")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="vimkit",
        description=f"vimkit v{__version__} - algorithm-agnostic variable importance",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=textwrap.dedent("""\
            Exit status: 0 ok, 2 configuration error, 3 data error,
            4 estimation degeneracy.
        """))
    parser.add_argument("--version", action="version", version=f"vimkit {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    for name, help_text in (("estimate", "Cross-fitted importance with intervals"),
                            ("test", "Sample-split test of the beta-null")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("input", help="CSV file with a header row")
        p.add_argument("--outcome", "-y", required=True, help="Outcome column")
        p.add_argument("--groups", metavar="JSON", help='{"name": ["col", ...]} file')
        p.add_argument("--group", action="append", default=[], metavar="NAME=COLS",
                       help="Feature group, repeatable (e.g. --group geo=lat,lon)")
        p.add_argument("--treatment", help="Binary treatment column (rule value)")
        p.add_argument("--observed", help="Outcome-observed indicator column")
        p.add_argument("--split-fraction", type=float, default=0.5,
                       help="Share of observations in the reduced half (test)")
        p.add_argument("--clamp", action="store_true",
                       help="Display negative estimates as 0 (intervals unchanged)")
        _add_common(p)

    p = sub.add_parser("simulate", help="Monte Carlo operating characteristics")
    p.add_argument("--scenario", type=int, default=2, choices=(1, 2))
    p.add_argument("--n", type=int, nargs="+", default=list(DEFAULT_N_GRID),
                   help="Sample sizes (default: 500 1000 2000 4000)")
    p.add_argument("--reps", type=int, default=DEFAULT_REPS, help="Replications per n")
    p.add_argument("--group", default="x1", choices=("x1", "x2"), help="Column removed")
    p.add_argument("--no-cross-fit", action="store_true",
                   help="Plug-in estimator with sample splitting (ablation)")
    _add_common(p)
    return parser


def config_from_args(args):
    groups = ()
    if args.subcommand != "simulate":
        groups = parse_group_definitions(args.groups, args.group)

    common = dict(
        subcommand=args.subcommand, measure=MeasureKind.parse(args.measure).value,
        K=args.folds, beta=args.beta, alpha=args.alpha, seed=args.seed,
        learner=args.learner, output=args.output, fmt=args.format,
        threads=args.threads or 0, stratified=args.stratified, fold_mode=args.fold_mode,
        strict_auc=args.strict_auc, gamma=args.gamma, quiet=args.quiet,
        json_stdout=args.json)
    if args.subcommand == "simulate":
        return RunConfig(scenario=args.scenario, n_grid=tuple(args.n), reps=args.reps,
                         group_column=args.group, cross_fit=not args.no_cross_fit, **common)
    return RunConfig(input=args.input, outcome=args.outcome, groups=groups,
                     treatment=args.treatment, observed=args.observed,
                     split_fraction=args.split_fraction, clamp=args.clamp, **common)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="  %(message)s", stream=sys.stderr)

    set_locale(args.lang or detect_locale())
    if args.no_color:
        disable_colors()

    try:
        return run(config_from_args(args))
    except VimError as exc:
        print(f"{exc.prefix}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
