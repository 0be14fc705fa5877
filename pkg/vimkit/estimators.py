"""
VIM estimators
==============
Plug-in and K-fold cross-fitted estimates of psi_s = V(f, P) - V(f_s, P),
influence-function variances, Wald intervals and the sample-split test of the
beta-null H0: psi_s in [0, beta].

    plugin_vim               - fit and evaluate on the same sample (or halves)
    crossfit_predictiveness  - v* and pooled EIFs for one column set
    crossfit_vim             - cross-fitted contrast on shared folds
    split_test_vim           - full model on half 1, reduced on half 2, test
    contrast_test            - omega / t / p / interval arithmetic
    estimate_vim             - dispatcher on (cross_fit, sample_split)
    importance_table         - every feature group of a dataset

Fold work runs through core.ordered_map, so reductions always happen in fold
order and results do not depend on the thread count.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtr, ndtri

from vimkit.core import (BALANCED, BINARY, FOLD_MODES, ConfigError, DataError,
                         DegenerateError, FoldDegenerateError, PredictivenessEstimate,
                         VimResult, half_sizes, make_fold_plan, ordered_map)
from vimkit.learners import Learner, fit_reduced, make_learner
from vimkit.measures import (DEVIANCE_GAMMA, MeasureKind, check_compatible, eif,
                             evaluate, moments, prediction_for)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EstimationConfig:
    measure: MeasureKind = MeasureKind.AUC
    K: int = 5
    cross_fit: bool = True
    sample_split: bool = True
    beta: float = 0.0
    alpha: float = 0.05
    seed: int = 0
    learner: Optional[Learner] = None
    fold_mode: str = BALANCED
    stratified: bool = False
    split_fraction: float = 0.5
    gamma: float = DEVIANCE_GAMMA
    strict_auc: bool = False
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "measure", MeasureKind.parse(self.measure))
        if int(self.K) < 2:
            raise ConfigError(f"K must be >= 2, got {self.K}")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.fold_mode not in FOLD_MODES:
            raise ConfigError(f"unknown fold mode {self.fold_mode!r}")
        if not 0.0 < self.gamma < 0.5:
            raise ConfigError(f"deviance clipping gamma must be in (0, 0.5), got {self.gamma}")
        if not self.sample_split:
            log.warning("sample splitting is off: the beta-null test is not valid "
                        "when the importance may be zero")

    def learner_for(self, d):
        return self.learner or make_learner(None, d.outcome_kind)

    def plan_for(self, d, split):
        strata = d.outcome if self.stratified and d.outcome_kind == BINARY else None
        return make_fold_plan(d.n, self.K, split=split, seed=self.seed,
                              mode=self.fold_mode, split_fraction=self.split_fraction,
                              strata=strata)


# ─── Normal distribution ──────────────────────────────────────────────────────

def normal_cdf(x):
    return float(ndtr(x))


def normal_quantile(p):
    if not 0.0 < p < 1.0:
        raise ConfigError(f"normal quantile needs p in (0, 1), got {p}")
    return float(ndtri(p))


# ─── Fold-level evaluation ────────────────────────────────────────────────────

def _evaluate_on(cfg, mu, y, fold=None, half=1):
    """(v, phi) of mu-scale predictions on one evaluation set, local moments."""
    try:
        m = moments(y)
        f = prediction_for(cfg.measure, mu)
        v = evaluate(cfg.measure, f, y, gamma=cfg.gamma, strict=cfg.strict_auc)
        phi = eif(cfg.measure, mu, y, m, v, gamma=cfg.gamma, strict=cfg.strict_auc)
    except DegenerateError as exc:
        if fold is None or isinstance(exc, FoldDegenerateError):
            raise
        raise FoldDegenerateError(str(exc), fold, half) from exc
    return v, phi


def _fit(learner, d, s, seed):
    if s is None:
        return learner.fit(d, seed=seed)
    return fit_reduced(learner, d, s, seed=seed)


def _fold_runner(d, column_sets, cfg, plan, half):
    learner = cfg.learner_for(d)

    def run(k):
        train = plan.training_indices(k, half)
        test = plan.fold_indices(k, half)
        train_d = d.rows(train)
        x_test, y_test = d.features[test], d.outcome[test]
        out = []
        for s in column_sets:
            model = _fit(learner, train_d, s, cfg.seed)
            out.append(_evaluate_on(cfg, model.predict(x_test), y_test, k, half))
        return test, out

    return run


def _pool(plan, per_fold, which, half):
    values = [fold[1][which][0] for fold in per_fold]
    phis = np.concatenate([fold[1][which][1] for fold in per_fold])
    idx = np.concatenate([fold[0] for fold in per_fold])
    return PredictivenessEstimate(
        value=float(np.mean(values)), eif_values=phis, fold_values=values,
        indices=idx, diagnostics={"folds": float(plan.K), "half": float(half)})


def crossfit_predictiveness(d, s=None, cfg=None, plan=None, half=1):
    """Cross-fitted v* (s=None) or v*_s on one half of `plan`.

    v* is the unweighted mean of the K fold values; EIFs are pooled in fold
    order and `indices` records their observations.
    """
    cfg = cfg or EstimationConfig()
    check_compatible(cfg.measure, d.outcome_kind)
    if s is not None:
        s.validate(d.p)
    plan = plan or cfg.plan_for(d, split=False)
    per_fold = ordered_map(_fold_runner(d, (s,), cfg, plan, half),
                           range(1, plan.K + 1), cfg.threads)
    return _pool(plan, per_fold, 0, half)


# ─── Contrast arithmetic ──────────────────────────────────────────────────────

def _wald(psi, se, alpha):
    z2 = normal_quantile(1.0 - alpha / 2.0)
    z1 = normal_quantile(1.0 - alpha)
    return (psi - z2 * se, psi + z2 * se), psi - z1 * se


def contrast_test(v, v_s, eta2, eta2_s, n_full, n_reduced, beta=0.0, alpha=0.05,
                  measure=""):
    """Test of the beta-null from predictiveness on disjoint samples.

    omega = eta2/n_full + eta2_s/n_reduced, t = (v - v_s - beta)/sqrt(omega),
    p = 1 - Phi(t). With omega = 0 the statistic is +-inf (0 when the contrast
    equals beta exactly).
    """
    if beta < 0:
        raise ConfigError(f"beta must be >= 0, got {beta}")
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    if n_full < 1 or n_reduced < 1:
        raise DataError(f"sample sizes must be positive, got {n_full}/{n_reduced}")
    if eta2 < 0 or eta2_s < 0:
        raise DataError("EIF second moments must be non-negative")

    omega = eta2 / n_full + eta2_s / n_reduced
    psi = float(v - v_s)
    se = math.sqrt(omega)
    diff = psi - beta
    if se > 0.0:
        t = diff / se
    else:
        t = 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
    ci, lower = _wald(psi, se, alpha)
    return VimResult(psi=psi, std_error=se, ci_two_sided=ci, ci_one_sided_lower=lower,
                     test_stat=t, p_value=float(ndtr(-t)), beta=float(beta),
                     alpha=float(alpha), n_full=int(n_full), n_reduced=int(n_reduced),
                     v_full=float(v), v_reduced=float(v_s), measure=str(measure))


def paired_result(psi, tau2, n, beta, alpha, v_full, v_reduced, measure=""):
    """Wald interval from paired EIF differences on one sample; no test."""
    se = math.sqrt(tau2 / n)
    ci, lower = _wald(psi, se, alpha)
    return VimResult(psi=float(psi), std_error=se, ci_two_sided=ci, ci_one_sided_lower=lower,
                     test_stat=None, p_value=None, beta=float(beta), alpha=float(alpha),
                     n_full=int(n), n_reduced=int(n), v_full=float(v_full),
                     v_reduced=float(v_reduced), measure=str(measure))


# ─── Estimators ───────────────────────────────────────────────────────────────

def plugin_vim(d, s, cfg):
    """Plug-in estimate without cross-fitting.

    Without sample splitting both fits use, and are evaluated on, the whole
    sample and the test fields stay empty. With splitting the full model lives
    on half 1 and the reduced model on half 2, and the test is reported.
    """
    check_compatible(cfg.measure, d.outcome_kind)
    s.validate(d.p)
    learner = cfg.learner_for(d)

    if cfg.sample_split:
        plan = cfg.plan_for(d, split=True)
        h1, h2 = plan.half_indices(1), plan.half_indices(2)
        d1, d2 = d.rows(h1), d.rows(h2)
        v, phi = _evaluate_on(cfg, _fit(learner, d1, None, cfg.seed).predict(d1.features), d1.outcome)
        v_s, phi_s = _evaluate_on(cfg, _fit(learner, d2, s, cfg.seed).predict(d2.features), d2.outcome)
        return contrast_test(v, v_s, float(np.mean(phi ** 2)), float(np.mean(phi_s ** 2)),
                             h1.shape[0], h2.shape[0], cfg.beta, cfg.alpha, cfg.measure.value)

    v, phi = _evaluate_on(cfg, _fit(learner, d, None, cfg.seed).predict(d.features), d.outcome)
    v_s, phi_s = _evaluate_on(cfg, _fit(learner, d, s, cfg.seed).predict(d.features), d.outcome)
    return paired_result(v - v_s, float(np.mean((phi - phi_s) ** 2)), d.n, cfg.beta,
                         cfg.alpha, v, v_s, cfg.measure.value)


def crossfit_vim(d, s, cfg):
    """Cross-fitted contrast: full and reduced fits share every fold.

    psi* = mean_k (v_k - v_k,s); tau^2 from the pooled (phi - phi_s)^2.
    """
    check_compatible(cfg.measure, d.outcome_kind)
    s.validate(d.p)
    plan = cfg.plan_for(d, split=False)
    per_fold = ordered_map(_fold_runner(d, (None, s), cfg, plan, 1),
                           range(1, plan.K + 1), cfg.threads)
    full = _pool(plan, per_fold, 0, 1)
    reduced = _pool(plan, per_fold, 1, 1)
    psi = float(np.mean(np.subtract(full.fold_values, reduced.fold_values)))
    tau2 = float(np.mean((full.eif_values - reduced.eif_values) ** 2))
    return paired_result(psi, tau2, d.n, cfg.beta, cfg.alpha, full.value, reduced.value,
                         cfg.measure.value)


def split_test_vim(d, s, cfg):
    """Sample-split cross-fitted test: v* on half 1, v*_s on half 2."""
    check_compatible(cfg.measure, d.outcome_kind)
    s.validate(d.p)
    plan = cfg.plan_for(d, split=True)
    full = crossfit_predictiveness(d, None, cfg, plan, half=1)
    reduced = crossfit_predictiveness(d, s, cfg, plan, half=2)
    n_full, n_reduced = half_sizes(plan)
    return contrast_test(full.value, reduced.value, full.eif_second_moment,
                         reduced.eif_second_moment, n_full, n_reduced,
                         cfg.beta, cfg.alpha, cfg.measure.value)


def estimate_vim(d, s, cfg):
    if not cfg.cross_fit:
        return plugin_vim(d, s, cfg)
    if cfg.sample_split:
        return split_test_vim(d, s, cfg)
    return crossfit_vim(d, s, cfg)


def importance_table(d, groups, cfg):
    """[(name, VimResult)] for every (name, FeatureSet) group, in input order.

    Groups are estimated independently with the same seed, hence the same folds.
    """
    items = groups.items() if hasattr(groups, "items") else groups
    rows = []
    for name, s in items:
        log.info(f"estimating group '{name}' ({len(s.indices)} column(s))")
        rows.append((name, estimate_vim(d, s, cfg)))
    return rows
