"""
One-step estimators for coarsened data
======================================
Two predictiveness measures whose oracle values are only identified through
nuisance regressions:

  rule value      E[Y(f(X))] for a binary treatment rule f(x) = I{Q(1,x) > Q(0,x)}
                  observed as Z = (X, A, Y)
  missing-outcome classification accuracy P(Y = f(X)) with f(x) = I{pi(x) > 0.5},
                  observed as Z = (X, Delta, U = Delta * Y) under MAR

Each one-step estimate is the plug-in mean of Q plus the inverse-propensity
weighted residual correction. The reduced ("-s") versions keep the full outcome
regression in the correction and change only the rule, which comes from
regressing the fitted Q(a, X) (or pi(X)) onto X_{-s}.

Propensities are truncated from below at `truncation`; more than 5% of
observations at the bound triggers a positivity warning.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from vimkit.core import (BINARY, CONTINUOUS, ConfigError, DataError, Dataset,
                         PredictivenessEstimate, _frozen, check_disjoint,
                         detect_outcome_kind, half_sizes, make_fold_plan, ordered_map)
from vimkit.estimators import contrast_test, paired_result
from vimkit.learners import make_learner, regress_pseudo_outcome
from vimkit.measures import THRESHOLD

log = logging.getLogger(__name__)

TRUNCATION = 0.025
POSITIVITY_WARN_FRACTION = 0.05
NEAR_TIE = 0.01
NEAR_TIE_WARN_FRACTION = 0.05


# ─── Data ─────────────────────────────────────────────────────────────────────

def _binary(values, what):
    v = np.asarray(values, dtype=np.float64)
    if not np.all((v == 0.0) | (v == 1.0)):
        raise DataError(f"{what} must take values in {{0, 1}}")
    return v


@dataclass(frozen=True)
class TreatmentDataset:
    """Z = (X, A, Y) with binary treatment A."""
    features: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    column_names: tuple = ()

    def __post_init__(self):
        base = Dataset(self.features, self.outcome, CONTINUOUS, tuple(self.column_names))
        a = _frozen(_binary(self.treatment, "treatment"), ndim=1)
        if a.shape[0] != base.n:
            raise DataError(f"treatment length {a.shape[0]} does not match {base.n} rows")
        object.__setattr__(self, "features", base.features)
        object.__setattr__(self, "outcome", base.outcome)
        object.__setattr__(self, "treatment", a)
        object.__setattr__(self, "column_names", base.column_names)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def p(self):
        return self.features.shape[1]

    @property
    def outcome_kind(self):
        return detect_outcome_kind(self.outcome)

    @property
    def strata(self):
        """Fold strata: treatment arm, crossed with the outcome when it is binary."""
        if self.outcome_kind == BINARY:
            return 2.0 * self.treatment + self.outcome
        return self.treatment

    def check_arms(self):
        treated = int(np.sum(self.treatment))
        if treated == 0 or treated == self.n:
            raise DataError("both treatment arms must be present")
        return self

    def rows(self, index):
        index = np.asarray(index)
        return TreatmentDataset(self.features[index], self.treatment[index],
                                self.outcome[index], self.column_names)


@dataclass(frozen=True)
class MissingnessDataset:
    """Z = (X, Delta, U) with U = Delta * Y and binary Y."""
    features: np.ndarray
    observed: np.ndarray
    masked_outcome: np.ndarray
    column_names: tuple = ()

    def __post_init__(self):
        base = Dataset(self.features, self.masked_outcome, BINARY, tuple(self.column_names))
        delta = _frozen(_binary(self.observed, "observation indicator"), ndim=1)
        if delta.shape[0] != base.n:
            raise DataError(f"indicator length {delta.shape[0]} does not match {base.n} rows")
        if np.any(base.outcome[delta == 0.0] != 0.0):
            raise DataError("masked outcome must be 0 wherever the outcome is unobserved")
        if not np.any(delta == 1.0):
            raise DataError("all outcomes are missing")
        object.__setattr__(self, "features", base.features)
        object.__setattr__(self, "masked_outcome", base.outcome)
        object.__setattr__(self, "observed", delta)
        object.__setattr__(self, "column_names", base.column_names)

    @classmethod
    def from_outcome(cls, features, outcome, observed, column_names=()):
        """Mask a full outcome vector; entries with observed == 0 are discarded."""
        delta = np.asarray(observed, dtype=np.float64)
        y = np.where(delta == 1.0, np.nan_to_num(np.asarray(outcome, dtype=np.float64)), 0.0)
        return cls(features, delta, y, tuple(column_names))

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def p(self):
        return self.features.shape[1]

    @property
    def strata(self):
        """Fold strata: 0 unobserved, 1 observed Y=0, 2 observed Y=1."""
        return self.observed + self.masked_outcome

    def rows(self, index):
        index = np.asarray(index)
        return MissingnessDataset(self.features[index], self.observed[index],
                                  self.masked_outcome[index], self.column_names)


@dataclass(frozen=True)
class NuisanceSet:
    """Fitted nuisance values at every observation of one evaluation sample.

    Rule value: `outcome_regression` is n x 2 with columns Q(0,x), Q(1,x);
    `propensity` is g(1,x). Missing outcomes: `outcome_regression` is pi(x)
    and `propensity` is g(x) = P(Delta = 1 | x). `reduced_outcome_regression`
    has the same shape and defines the reduced rule.
    """
    outcome_regression: np.ndarray
    propensity: np.ndarray
    reduced_outcome_regression: Optional[np.ndarray] = None
    truncation: float = TRUNCATION

    def __post_init__(self):
        if not 0.0 < self.truncation < 0.5:
            raise ConfigError(f"propensity truncation must be in (0, 0.5), got {self.truncation}")
        q = _frozen(self.outcome_regression)
        g = _frozen(self.propensity, ndim=1)
        if q.shape[0] != g.shape[0]:
            raise DataError("outcome regression and propensity differ in length")
        if np.any((g < 0.0) | (g > 1.0)):
            raise DataError("propensity values must lie in [0, 1]")
        object.__setattr__(self, "outcome_regression", q)
        object.__setattr__(self, "propensity", g)
        if self.reduced_outcome_regression is not None:
            qr = _frozen(self.reduced_outcome_regression)
            if qr.shape != q.shape:
                raise DataError("reduced outcome regression shape differs from the full one")
            object.__setattr__(self, "reduced_outcome_regression", qr)

    @property
    def n(self):
        return self.propensity.shape[0]

    def rule_regression(self, reduced):
        if not reduced:
            return self.outcome_regression
        if self.reduced_outcome_regression is None:
            raise ConfigError("reduced rule requested but no reduced outcome regression fitted")
        return self.reduced_outcome_regression

    def truncated(self, g):
        at_bound = float(np.mean(g <= self.truncation))
        if at_bound > POSITIVITY_WARN_FRACTION:
            log.warning(f"positivity: {at_bound:.1%} of propensities at the "
                        f"truncation bound {self.truncation}")
        return np.clip(g, self.truncation, 1.0), at_bound


def _check_length(d, nuis):
    if nuis.n != d.n:
        raise DataError(f"nuisances cover {nuis.n} observations, dataset has {d.n}")


def _onestep(terms, indices, diagnostics):
    value = float(np.mean(terms))
    return PredictivenessEstimate(value=value, eif_values=terms - value,
                                  indices=indices, diagnostics=diagnostics)


# ─── One-step estimators ──────────────────────────────────────────────────────

def onestep_rule_value(d, nuis, reduced=False, indices=None):
    """Mean outcome under the rule I{Q(1,x) > Q(0,x)} (ties assign 0).

    With `reduced` the rule comes from the reduced regression; the correction
    always uses the full Q evaluated at the rule's arm.
    """
    _check_length(d, nuis)
    q = nuis.outcome_regression
    if q.ndim != 2 or q.shape[1] != 2:
        raise DataError("rule value needs outcome regression columns Q(0,x), Q(1,x)")
    rule_q = nuis.rule_regression(reduced)
    rule = (rule_q[:, 1] > rule_q[:, 0]).astype(np.int64)

    near_tie = float(np.mean(np.abs(rule_q[:, 1] - rule_q[:, 0]) < NEAR_TIE))
    if near_tie > NEAR_TIE_WARN_FRACTION:
        log.warning(f"{near_tie:.1%} of observations have |Q(1,x) - Q(0,x)| < {NEAR_TIE}: "
                    "the rule value may not be pathwise differentiable here")

    rows = np.arange(d.n)
    q_rule = q[rows, rule]
    g_rule = np.where(rule == 1, nuis.propensity, 1.0 - nuis.propensity)
    g_rule, at_bound = nuis.truncated(g_rule)
    weight = (d.treatment == rule).astype(np.float64) / g_rule
    terms = q_rule + weight * (d.outcome - q_rule)
    return _onestep(terms, indices, {"truncated_fraction": at_bound,
                                     "near_tie_fraction": near_tie,
                                     "treated_by_rule": float(np.mean(rule))})


def onestep_accuracy_missing(d, nuis, reduced=False, indices=None):
    """Accuracy of I{pi(x) > 0.5} when some outcomes are missing at random."""
    _check_length(d, nuis)
    pi = nuis.outcome_regression
    if pi.ndim != 1:
        raise DataError("missing-outcome accuracy needs a vector of pi(x) values")
    rule = (nuis.rule_regression(reduced) > THRESHOLD).astype(np.float64)
    q = np.where(rule == 1.0, pi, 1.0 - pi)
    g, at_bound = nuis.truncated(nuis.propensity)
    hit = (d.masked_outcome == rule).astype(np.float64)
    terms = q + (d.observed / g) * (hit - q)
    return _onestep(terms, indices, {"truncated_fraction": at_bound,
                                     "observed_fraction": float(np.mean(d.observed))})


def coarsened_vim(full, reduced, beta=0.0, alpha=0.05, split_sizes=None, measure=""):
    """Contrast two one-step estimates.

    Both estimates must record their observation indices. Disjoint samples get
    the split test; estimates on the very same observations get a paired
    interval without a test; partial overlap is refused.
    """
    if full.indices is None or reduced.indices is None:
        raise ConfigError("cannot contrast estimates without observation indices: "
                          "disjointness of the halves is unknown")
    same = (full.indices.shape == reduced.indices.shape
            and np.array_equal(np.sort(full.indices), np.sort(reduced.indices)))
    if same:
        order_f = np.argsort(full.indices, kind="stable")
        order_r = np.argsort(reduced.indices, kind="stable")
        diff = full.eif_values[order_f] - reduced.eif_values[order_r]
        return paired_result(full.value - reduced.value, float(np.mean(diff ** 2)),
                             full.n, beta, alpha, full.value, reduced.value, measure)
    if not check_disjoint(full.indices, reduced.indices):
        raise ConfigError("refusing to test: full and reduced estimates share observations")
    n_full, n_reduced = split_sizes or (full.n, reduced.n)
    return contrast_test(full.value, reduced.value, full.eif_second_moment,
                         reduced.eif_second_moment, n_full, n_reduced, beta, alpha, measure)


# ─── Nuisance fitting ─────────────────────────────────────────────────────────

def _fold_layout(n, plan, half):
    """[(train, test)] index pairs; without a plan, one fit on everything."""
    if plan is None:
        everything = np.arange(n)
        return everything, [(everything, everything)]
    members = plan.half_indices(half)
    return members, [(plan.training_indices(k, half), plan.fold_indices(k, half))
                     for k in range(1, plan.K + 1)]


def _assemble(members, folds, per_fold, width):
    out = np.empty((members.shape[0],) + width)
    for (_, test), values in zip(folds, per_fold):
        out[np.searchsorted(members, test)] = values
    return out


def fit_rule_nuisances(d, s=None, learner=None, propensity_learner=None,
                       reduction_learner=None, plan=None, half=1, seed=0,
                       truncation=TRUNCATION, threads=1):
    """Q(a, x) by separate fits per arm, g(1, x), and optionally the reduced Q_s.

    With a plan, nuisances are cross-fit within `half` and the result is
    aligned with d.rows(plan.half_indices(half)); otherwise they are fit and
    predicted on all of d.
    """
    d.check_arms()
    kind = d.outcome_kind
    learner = learner or make_learner(None, kind)
    propensity_learner = propensity_learner or make_learner(None, BINARY)
    reduction_learner = reduction_learner or make_learner("linear", CONTINUOUS)
    if s is not None:
        s.validate(d.p)
    members, folds = _fold_layout(d.n, plan, half)

    def run(fold):
        train, test = fold
        x_tr, a_tr, y_tr = d.features[train], d.treatment[train], d.outcome[train]
        q_train, q_test = np.empty((train.shape[0], 2)), np.empty((test.shape[0], 2))
        for arm in (0, 1):
            rows = a_tr == arm
            if not np.any(rows):
                raise DataError(f"treatment arm {arm} absent from a training fold")
            model = learner.fit(Dataset(x_tr[rows], y_tr[rows], kind), seed=seed)
            q_train[:, arm] = model.predict(x_tr)
            q_test[:, arm] = model.predict(d.features[test])
        g_model = propensity_learner.fit(Dataset(x_tr, a_tr, BINARY), seed=seed)
        g_test = np.clip(g_model.predict(d.features[test]), 0.0, 1.0)
        qr_test = None
        if s is not None:
            keep = list(s.complement(d.p))
            if not keep:
                raise DataError("reduced dataset empty: feature group covers every column")
            qr_test = np.empty_like(q_test)
            for arm in (0, 1):
                model = regress_pseudo_outcome(reduction_learner, x_tr[:, keep], q_train[:, arm],
                                               clip=kind == BINARY, seed=seed)
                qr_test[:, arm] = model.predict(d.features[test][:, keep])
        return q_test, g_test, qr_test

    per_fold = ordered_map(run, folds, threads)
    q = _assemble(members, folds, [f[0] for f in per_fold], (2,))
    g = _assemble(members, folds, [f[1] for f in per_fold], ())
    qr = None if s is None else _assemble(members, folds, [f[2] for f in per_fold], (2,))
    return NuisanceSet(q, g, qr, truncation)


def fit_missingness_nuisances(d, s=None, learner=None, propensity_learner=None,
                              reduction_learner=None, plan=None, half=1, seed=0,
                              truncation=TRUNCATION, threads=1):
    """pi(x) from complete cases, g(x) from all cases, optionally pi_s(x)."""
    learner = learner or make_learner(None, BINARY)
    propensity_learner = propensity_learner or make_learner(None, BINARY)
    reduction_learner = reduction_learner or make_learner("linear", CONTINUOUS)
    if s is not None:
        s.validate(d.p)
    members, folds = _fold_layout(d.n, plan, half)

    def run(fold):
        train, test = fold
        x_tr, delta_tr = d.features[train], d.observed[train]
        complete = delta_tr == 1.0
        if not np.any(complete):
            raise DataError("no observed outcomes in a training fold")
        pi_model = learner.fit(Dataset(x_tr[complete], d.masked_outcome[train][complete],
                                       BINARY), seed=seed)
        pi_test = np.clip(pi_model.predict(d.features[test]), 0.0, 1.0)
        g_model = propensity_learner.fit(Dataset(x_tr, delta_tr, BINARY), seed=seed)
        g_test = np.clip(g_model.predict(d.features[test]), 0.0, 1.0)
        pir_test = None
        if s is not None:
            keep = list(s.complement(d.p))
            if not keep:
                raise DataError("reduced dataset empty: feature group covers every column")
            model = regress_pseudo_outcome(reduction_learner, x_tr[:, keep],
                                           pi_model.predict(x_tr), clip=True, seed=seed)
            pir_test = model.predict(d.features[test][:, keep])
        return pi_test, g_test, pir_test

    per_fold = ordered_map(run, folds, threads)
    pi = _assemble(members, folds, [f[0] for f in per_fold], ())
    g = _assemble(members, folds, [f[1] for f in per_fold], ())
    pir = None if s is None else _assemble(members, folds, [f[2] for f in per_fold], ())
    return NuisanceSet(pi, g, pir, truncation)


# ─── Whole-dataset entry points ───────────────────────────────────────────────

def _setting(d):
    if isinstance(d, TreatmentDataset):
        return fit_rule_nuisances, onestep_rule_value, "rule_value"
    if isinstance(d, MissingnessDataset):
        return fit_missingness_nuisances, onestep_accuracy_missing, "accuracy_missing"
    raise ConfigError(f"no coarsened estimator for {type(d).__name__}")


def coarsened_fold_plan(d, cfg, split):
    """Fold plan from `cfg`; `cfg.stratified` deals each of `d.strata` in turn."""
    return make_fold_plan(d.n, cfg.K, split=split, seed=cfg.seed, mode=cfg.fold_mode,
                          split_fraction=cfg.split_fraction,
                          strata=d.strata if cfg.stratified else None)


def coarsened_split_test(d, s, cfg, learner=None):
    """Cross-fit nuisances on each half, full one-step on half 1, reduced on half 2."""
    fit, onestep, measure = _setting(d)
    plan = coarsened_fold_plan(d, cfg, split=True)
    h1, h2 = plan.half_indices(1), plan.half_indices(2)
    common = dict(learner=learner, plan=plan, seed=cfg.seed, threads=cfg.threads)
    full = onestep(d.rows(h1), fit(d, None, half=1, **common), False, h1)
    reduced = onestep(d.rows(h2), fit(d, s, half=2, **common), True, h2)
    return coarsened_vim(full, reduced, cfg.beta, cfg.alpha, half_sizes(plan), measure)


def coarsened_estimate(d, s, cfg, learner=None):
    """Cross-fit nuisances on the whole sample; paired interval, no test."""
    fit, onestep, measure = _setting(d)
    plan = coarsened_fold_plan(d, cfg, split=False)
    members = plan.half_indices(1)
    nuis = fit(d, s, learner=learner, plan=plan, seed=cfg.seed, threads=cfg.threads)
    full = onestep(d, nuis, False, members)
    reduced = onestep(d, nuis, True, members)
    return coarsened_vim(full, reduced, cfg.beta, cfg.alpha, None, measure)
