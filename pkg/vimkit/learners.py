"""
Learners for the oracle prediction functions
============================================
Every learner fits a Dataset and returns an immutable fitted model whose
`predict(features)` gives values on the mu scale (conditional means; class
probabilities for binary outcomes).

  fit_intercept_only   - sample mean
  fit_logistic         - IRLS with a tiny ridge for conditioning
  fit_linear           - least squares with the same ridge
  fit_boosted_stumps   - depth-1 gradient boosting (squared error / logistic)
  fit_stack            - cross-validated convex combination of base learners
  fit_reduced          - any learner restricted to the columns outside s

Usage:
    from vimkit.learners import make_learner
    learner = make_learner("stack:mean+logistic", "binary")
    model = learner.fit(dataset, seed=7)
    mu = model.predict(dataset.features)
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Tuple

import numpy as np
from scipy import linalg, optimize
from scipy.special import expit, logit

from vimkit.core import (BINARY, CONTINUOUS, ConfigError, DataError, Dataset,
                         complement_columns, make_fold_plan)

log = logging.getLogger(__name__)

RIDGE = 1e-8
LOGISTIC_MAX_ITER = 100
LOGISTIC_TOL = 1e-8
BOOST_ROUNDS = 200
BOOST_SHRINKAGE = 0.1
INNER_FOLDS = 5
# Probability floor inside the stacking log-likelihood.
STACK_EPS = 1e-6
STACK_MAX_ITER = 200
STACK_TOL = 1e-10


# ─── Fitted models ────────────────────────────────────────────────────────────

class FittedModel:
    """Base class: immutable after construction, `predict` is pure."""
    name = "model"
    bounded = False

    def predict(self, features):
        raise NotImplementedError

    def _finish(self, values):
        values = np.asarray(values, dtype=np.float64)
        return np.clip(values, 0.0, 1.0) if self.bounded else values


class ConstantModel(FittedModel):
    name = "mean"

    def __init__(self, value, bounded=False):
        self.value = float(value)
        self.bounded = bounded

    def predict(self, features):
        n = np.asarray(features).shape[0]
        return self._finish(np.full(n, self.value))


class LinearIndexModel(FittedModel):
    """mu(x) = link(intercept + x'coef)."""

    def __init__(self, intercept, coef, link="identity", bounded=False,
                 converged=True, separated=False, n_iter=0):
        self.intercept = float(intercept)
        self.coef = np.asarray(coef, dtype=np.float64)
        self.coef.setflags(write=False)
        self.link = link
        self.bounded = bounded
        self.converged = converged
        self.separated = separated
        self.n_iter = n_iter
        self.name = "logistic" if link == "logit" else "linear"

    def predict(self, features):
        eta = self.intercept + np.asarray(features, dtype=np.float64) @ self.coef
        return self._finish(expit(eta) if self.link == "logit" else eta)


class StumpModel(FittedModel):
    name = "stumps"

    def __init__(self, init, stumps, shrinkage, link="identity"):
        self.init = float(init)
        self.stumps = tuple(stumps)       # (feature, threshold, left, right)
        self.shrinkage = float(shrinkage)
        self.link = link
        self.bounded = link == "logit"

    def decision(self, features):
        x = np.asarray(features, dtype=np.float64)
        score = np.full(x.shape[0], self.init)
        for j, thr, left, right in self.stumps:
            score += self.shrinkage * np.where(x[:, j] <= thr, left, right)
        return score

    def predict(self, features):
        score = self.decision(features)
        return self._finish(expit(score) if self.link == "logit" else score)


class StackModel(FittedModel):
    name = "stack"

    def __init__(self, models, weights, names, cv_risks, ensemble_risk, bounded=False):
        self.models = tuple(models)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.weights.setflags(write=False)
        self.names = tuple(names)
        self.cv_risks = dict(cv_risks)
        self.ensemble_risk = float(ensemble_risk)
        self.bounded = bounded

    def predict(self, features):
        out = np.zeros(np.asarray(features).shape[0])
        for w, model in zip(self.weights, self.models):
            if w > 0.0:
                out += w * model.predict(features)
        return self._finish(out)


class ReducedModel(FittedModel):
    """Model fitted on X_{-s}; accepts full-width features and drops s."""

    def __init__(self, model, keep, n_columns, bounded=False):
        self.model = model
        self.keep = tuple(keep)
        self.n_columns = int(n_columns)
        self.bounded = bounded or model.bounded
        self.name = f"{model.name}[-s]"

    def predict(self, features):
        x = np.asarray(features, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.shape[1] != self.n_columns:
            raise DataError(f"expected {self.n_columns} columns, got {x.shape[1]}")
        return self._finish(self.model.predict(x[:, list(self.keep)]))


class ClippedModel(FittedModel):
    """Wraps a fitted model and bounds its predictions to [0, 1]."""
    bounded = True

    def __init__(self, model):
        self.model = model
        self.name = model.name

    def predict(self, features):
        return self._finish(self.model.predict(features))


# ─── Learner wrapper ──────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Learner:
    """Named fit procedure with bound hyperparameters."""
    name: str
    fit_fn: Callable
    params: Tuple[Tuple[str, object], ...] = ()

    def fit(self, d, seed=0):
        kwargs = dict(self.params)
        if self.fit_fn is fit_stack:
            return fit_stack(kwargs["spec"], d, seed)
        return self.fit_fn(d, **kwargs)


@dataclass(frozen=True)
class StackSpec:
    learners: Tuple[Learner, ...]
    inner_folds: int = INNER_FOLDS
    loss: str = "log_likelihood"

    def __post_init__(self):
        if not self.learners:
            raise ConfigError("stack needs at least one base learner")
        if self.inner_folds < 2:
            raise ConfigError("stack inner folds must be >= 2")
        if self.loss not in ("log_likelihood", "squared_error"):
            raise ConfigError(f"unknown stack loss {self.loss!r}")


def stack_learner(spec):
    names = "+".join(l.name for l in spec.learners)
    return Learner(f"stack:{names}", fit_stack, (("spec", spec),))


# ─── Base learners ────────────────────────────────────────────────────────────

def _standardize(x):
    """Centre/scale columns; zero-variance columns get scale 0 (dropped)."""
    center = x.mean(axis=0)
    scale = x.std(axis=0)
    keep = scale > 1e-12 * np.maximum(1.0, np.abs(center))
    inv = np.where(keep, 1.0 / np.where(keep, scale, 1.0), 0.0)
    return (x - center) * inv, center, inv


def fit_intercept_only(d):
    return ConstantModel(np.mean(d.outcome), bounded=d.outcome_kind == BINARY)


def fit_linear(d, clip=False):
    """Ridge-stabilised least squares; `clip` bounds predictions to [0, 1]."""
    z, center, inv = _standardize(d.features)
    y = d.outcome
    ybar = float(np.mean(y))
    gram = z.T @ z + RIDGE * np.eye(z.shape[1])
    beta_z = linalg.solve(gram, z.T @ (y - ybar), assume_a="pos")
    coef = beta_z * inv
    intercept = ybar - float(center @ coef)
    return LinearIndexModel(intercept, coef, "identity",
                            bounded=clip or d.outcome_kind == BINARY)


def fit_logistic(d, max_iter=LOGISTIC_MAX_ITER, tol=LOGISTIC_TOL):
    """Penalised logistic regression by iteratively reweighted least squares.

    Non-convergence and perfect separation are flagged on the model and
    logged, never raised.
    """
    if d.outcome_kind != BINARY:
        raise ConfigError("logistic regression needs a binary outcome")
    y = d.outcome
    ybar = float(np.mean(y))
    if ybar in (0.0, 1.0):
        return ConstantModel(ybar, bounded=True)

    z, center, inv = _standardize(d.features)
    design = np.column_stack([np.ones(d.n), z])
    penalty = np.full(design.shape[1], RIDGE)
    penalty[0] = 0.0
    beta = np.zeros(design.shape[1])
    beta[0] = logit(ybar)

    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = expit(design @ beta)
        score = design.T @ (y - mu) - penalty * beta
        if np.max(np.abs(score)) < tol:
            converged = True
            break
        w = mu * (1.0 - mu)
        hess = (design * w[:, None]).T @ design + np.diag(penalty + RIDGE)
        beta = beta + linalg.solve(hess, score, assume_a="pos")

    # Separated: the fitted index ranks every positive above every negative.
    eta = design @ beta
    separated = bool(np.min(eta[y == 1]) > np.max(eta[y == 0]))
    if separated:
        log.warning("logistic regression: outcome classes are perfectly separated; "
                    "coefficients are held finite only by the ridge penalty")
    if not converged:
        log.warning(f"logistic IRLS stopped after {it} iterations without converging")
    coef = beta[1:] * inv
    intercept = beta[0] - float(center @ coef)
    return LinearIndexModel(intercept, coef, "logit", bounded=True,
                            converged=converged, separated=separated, n_iter=it)


def _best_stump(x, r, h=None):
    """Best single split of residuals r over all columns (SSE criterion).

    Leaf values are residual means, or Newton steps sum(r)/sum(h) when
    hessian weights h are given.
    """
    n = x.shape[0]
    best = None
    total = float(np.sum(r))
    for j in range(x.shape[1]):
        order = np.argsort(x[:, j], kind="stable")
        xs = x[order, j]
        cs = np.cumsum(r[order])[:-1]
        counts = np.arange(1, n)
        valid = xs[1:] > xs[:-1]
        if not np.any(valid):
            continue
        gain = cs ** 2 / counts + (total - cs) ** 2 / (n - counts)
        gain = np.where(valid, gain, -np.inf)
        i = int(np.argmax(gain))
        if best is None or gain[i] > best[0]:
            best = (gain[i], j, 0.5 * (xs[i] + xs[i + 1]), order[:i + 1], order[i + 1:])
    if best is None:
        return None
    _, j, thr, left, right = best
    if h is None:
        return j, thr, float(np.mean(r[left])), float(np.mean(r[right]))
    hl = max(float(np.sum(h[left])), 1e-12)
    hr = max(float(np.sum(h[right])), 1e-12)
    return j, thr, float(np.sum(r[left])) / hl, float(np.sum(r[right])) / hr


def fit_boosted_stumps(d, rounds=BOOST_ROUNDS, shrinkage=BOOST_SHRINKAGE, depth=1):
    """Gradient boosting with depth-1 trees.

    Squared-error boosting for continuous outcomes; Newton-step logistic
    boosting (probabilities through expit) for binary ones.
    """
    if depth != 1:
        raise ConfigError("only depth-1 stumps are supported")
    if rounds == 0:
        return fit_intercept_only(d)
    if d.n < 10:
        raise DataError(f"boosting needs at least 10 observations, got {d.n}")
    x, y = d.features, d.outcome
    binary = d.outcome_kind == BINARY
    ybar = float(np.mean(y))
    if binary and ybar in (0.0, 1.0):
        return fit_intercept_only(d)

    init = logit(ybar) if binary else ybar
    score = np.full(d.n, init)
    stumps = []
    for _ in range(int(rounds)):
        if binary:
            p = expit(score)
            stump = _best_stump(x, y - p, p * (1.0 - p))
        else:
            stump = _best_stump(x, y - score)
        if stump is None:
            break
        j, thr, left, right = stump
        stumps.append(stump)
        score = score + shrinkage * np.where(x[:, j] <= thr, left, right)
    return StumpModel(init, stumps, shrinkage, "logit" if binary else "identity")


# ─── Stacking ─────────────────────────────────────────────────────────────────

def _stack_risk(pred, y, loss):
    if loss == "log_likelihood":
        p = np.clip(pred, STACK_EPS, 1.0 - STACK_EPS)
        return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))
    return float(np.mean((y - pred) ** 2))


def _convex_weights(cv_preds, y, loss):
    """Simplex weights minimising the cross-validated risk (SLSQP).

    The optimiser result competes with every vertex, so the ensemble is never
    worse than its best single member.
    """
    m = cv_preds.shape[1]
    if m == 1:
        return np.ones(1)

    def risk(w):
        return _stack_risk(cv_preds @ w, y, loss)

    res = optimize.minimize(risk, np.full(m, 1.0 / m), method="SLSQP",
                            bounds=[(0.0, 1.0)] * m,
                            constraints=({"type": "eq", "fun": lambda w: np.sum(w) - 1.0},),
                            options={"maxiter": STACK_MAX_ITER, "ftol": STACK_TOL})
    w = np.clip(np.nan_to_num(res.x, nan=0.0), 0.0, None)
    w = w / np.sum(w) if np.sum(w) > 0 else np.full(m, 1.0 / m)
    candidates = [w] + [np.eye(m)[j] for j in range(m)]
    risks = [risk(c) for c in candidates]
    return candidates[int(np.argmin(risks))]


def fit_stack(spec, d, seed=0):
    """Cross-validated convex combination of `spec.learners`.

    A base learner that raises gets weight 0 (with a warning); the stack fails
    only if none survive.
    """
    if d.n < 5 * spec.inner_folds:
        raise DataError(f"stack with {spec.inner_folds} inner folds needs n >= "
                        f"{5 * spec.inner_folds}, got {d.n}")
    loss = spec.loss
    if loss == "log_likelihood" and d.outcome_kind != BINARY:
        loss = "squared_error"
    plan = make_fold_plan(d.n, spec.inner_folds, split=False, seed=seed)

    names, cv_columns, survivors = [], [], []
    for learner in spec.learners:
        cv_pred = np.empty(d.n)
        try:
            for k in range(1, spec.inner_folds + 1):
                train, test = plan.training_indices(k), plan.fold_indices(k)
                model = learner.fit(d.rows(train), seed=seed)
                cv_pred[test] = model.predict(d.features[test])
        except Exception as exc:
            log.warning(f"stack member '{learner.name}' failed and gets weight 0: {exc}")
            continue
        names.append(learner.name)
        cv_columns.append(cv_pred)
        survivors.append(learner)
    if not survivors:
        raise DataError("every stack member failed to fit")

    cv_preds = np.column_stack(cv_columns)
    weights = _convex_weights(cv_preds, d.outcome, loss)
    cv_risks = {name: _stack_risk(cv_preds[:, j], d.outcome, loss)
                for j, name in enumerate(names)}
    ensemble_risk = _stack_risk(cv_preds @ weights, d.outcome, loss)
    models = [learner.fit(d, seed=seed) if w > 0 else ConstantModel(0.0)
              for learner, w in zip(survivors, weights)]
    log.info("stack weights: " + ", ".join(f"{n}={w:.3f}" for n, w in zip(names, weights)))
    return StackModel(models, weights, names, cv_risks, ensemble_risk,
                      bounded=d.outcome_kind == BINARY)


# ─── Reduced fits ─────────────────────────────────────────────────────────────

def fit_reduced(learner, d, s, seed=0):
    """Fit on X_{-s}; the returned model is exactly insensitive to columns s."""
    reduced = complement_columns(d, s)
    model = learner.fit(reduced, seed=seed)
    return ReducedModel(model, s.complement(d.p), d.p)


def regress_pseudo_outcome(learner, features, pseudo_outcome, clip=True, seed=0):
    """Regress fitted values (e.g. pi_n(X), Q_n(a, X)) onto features.

    Pseudo-outcomes are treated as continuous; `clip` bounds the fitted
    predictions to [0, 1].
    """
    d = Dataset(features, pseudo_outcome, CONTINUOUS)
    model = learner.fit(d, seed=seed)
    return ClippedModel(model) if clip else model


# ─── Registry ─────────────────────────────────────────────────────────────────

BASE_LEARNERS: Dict[str, Callable] = {
    "mean": fit_intercept_only,
    "logistic": fit_logistic,
    "linear": fit_linear,
    "stumps": fit_boosted_stumps,
}

DEFAULT_LEARNER = {BINARY: "stack:mean+logistic", CONTINUOUS: "stack:mean+linear"}


def make_learner(spec=None, outcome_kind=BINARY, inner_folds=INNER_FOLDS, **params):
    """Build a Learner from a name such as 'logistic' or 'stack:mean+logistic'."""
    spec = (spec or DEFAULT_LEARNER[outcome_kind]).strip().lower()
    if spec.startswith("stack:"):
        members = [m for m in spec[len("stack:"):].split("+") if m]
        learners = tuple(make_learner(m, outcome_kind) for m in members)
        loss = "log_likelihood" if outcome_kind == BINARY else "squared_error"
        return stack_learner(StackSpec(learners, inner_folds, loss))
    if spec not in BASE_LEARNERS:
        raise ConfigError(f"unknown learner {spec!r} "
                          f"(choose from {', '.join(BASE_LEARNERS)} or stack:a+b)")
    if spec == "logistic" and outcome_kind != BINARY:
        raise ConfigError("learner 'logistic' needs a binary outcome")
    return Learner(spec, BASE_LEARNERS[spec], tuple(sorted(params.items())))
