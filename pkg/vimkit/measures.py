"""
Predictiveness measures
=======================
R^2, deviance, classification accuracy and AUC: the empirical value V(f, P_n)
and the efficient influence function phi evaluated at every observation.

Influence functions are taken at the empirical distribution (moments from the
same evaluation set), so they are exactly centred and coincide with the
Gateaux derivative of V(f, .) at P_n in the direction delta_z - P_n.

AUC ties count 1/2 (Mann-Whitney); `strict=True` drops tied pairs instead.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from vimkit.core import BINARY, ConfigError, DataError, DegenerateError

log = logging.getLogger(__name__)

# Deviance probability clipping; keeps log-likelihood terms finite.
DEVIANCE_GAMMA = 1e-3
# Accuracy classifier threshold on the mu scale (ties go to class 0).
THRESHOLD = 0.5


class MeasureKind(str, Enum):
    R_SQUARED = "r_squared"
    DEVIANCE = "deviance"
    ACCURACY = "accuracy"
    AUC = "auc"

    @property
    def requires_binary(self):
        return self is not MeasureKind.R_SQUARED

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower().replace("-", "_"))
        except ValueError:
            names = ", ".join(m.value for m in cls)
            raise ConfigError(f"unknown measure {value!r} (choose from {names})")


def check_compatible(kind, outcome_kind):
    kind = MeasureKind.parse(kind)
    if kind.requires_binary and outcome_kind != BINARY:
        raise ConfigError(f"measure '{kind.value}' requires a binary outcome")
    return kind


@dataclass(frozen=True)
class EmpiricalMoments:
    """Marginal outcome moments used by the normalising terms."""
    mean_y: float
    var_y: float
    prob_y1: float
    entropy_denom: Optional[float]


def moments(outcomes):
    """Empirical moments; variance with divisor n."""
    y = np.asarray(outcomes, dtype=np.float64)
    mean_y = float(np.mean(y))
    var_y = float(np.mean((y - mean_y) ** 2))
    binary = bool(np.all((y == 0.0) | (y == 1.0)))
    prob = mean_y if binary else float("nan")
    denom = None
    if binary and 0.0 < prob < 1.0:
        denom = float(prob * np.log(prob) + (1.0 - prob) * np.log(1.0 - prob))
    return EmpiricalMoments(mean_y, var_y, prob, denom)


def prediction_for(kind, mu):
    """Oracle prediction function from mu-scale learner output."""
    mu = np.asarray(mu, dtype=np.float64)
    if MeasureKind.parse(kind) is MeasureKind.ACCURACY:
        return (mu > THRESHOLD).astype(np.float64)
    return mu


def _as_pair(predictions, outcomes):
    f = np.asarray(predictions, dtype=np.float64).ravel()
    y = np.asarray(outcomes, dtype=np.float64).ravel()
    if f.shape != y.shape:
        raise DataError(f"predictions ({f.shape[0]}) and outcomes ({y.shape[0]}) differ in length")
    if f.shape[0] < 2:
        raise DataError("need at least 2 observations to evaluate a measure")
    return f, y


def _require_both_classes(y, what):
    if not np.all((y == 0.0) | (y == 1.0)):
        raise DataError(f"{what} requires binary outcomes")
    n1 = int(np.sum(y))
    if n1 == 0 or n1 == y.shape[0]:
        raise DegenerateError(f"{what} is undefined when all outcomes are equal")


def _exceedance(f, y):
    """Per-observation AUC kernel means.

    Returns (n_less, n_tied) counts against the opposite class: for a negative
    i, positives j with f_j > f_i and ties; for a positive j, negatives i with
    f_i < f_j and ties.
    """
    neg = np.sort(f[y == 0.0])
    pos = np.sort(f[y == 1.0])
    above_left = np.searchsorted(pos, f, side="left")
    above_right = np.searchsorted(pos, f, side="right")
    below_left = np.searchsorted(neg, f, side="left")
    below_right = np.searchsorted(neg, f, side="right")
    pos_greater = pos.shape[0] - above_right
    pos_tied = above_right - above_left
    neg_less = below_left
    neg_tied = below_right - below_left
    return pos_greater, pos_tied, neg_less, neg_tied


def auc_value(f, y, strict=False):
    pos_greater, pos_tied, _, _ = _exceedance(f, y)
    neg = y == 0.0
    n0 = int(np.sum(neg))
    n1 = y.shape[0] - n0
    wins = int(np.sum(pos_greater[neg]))
    ties = 0 if strict else int(np.sum(pos_tied[neg]))
    return (wins + 0.5 * ties) / (n0 * n1)


def evaluate(kind, predictions, outcomes, gamma=DEVIANCE_GAMMA, strict=False):
    """V(f, P_n) for prediction values f(X_i) and outcomes Y_i."""
    kind = MeasureKind.parse(kind)
    f, y = _as_pair(predictions, outcomes)

    if kind is MeasureKind.R_SQUARED:
        ss_tot = float(np.sum((y - np.mean(y)) ** 2))
        if ss_tot == 0.0:
            raise DegenerateError("R-squared is undefined for a constant outcome")
        return 1.0 - float(np.sum((y - f) ** 2)) / ss_tot

    if kind is MeasureKind.ACCURACY:
        if not np.all((f == 0.0) | (f == 1.0)):
            raise DataError("accuracy needs 0/1 class predictions (threshold mu first)")
        return float(np.mean((f == y).astype(np.float64)))

    _require_both_classes(y, kind.value)
    if kind is MeasureKind.DEVIANCE:
        m = moments(y)
        ft = np.clip(f, gamma, 1.0 - gamma)
        loglik = float(np.mean(y * np.log(ft) + (1.0 - y) * np.log(1.0 - ft)))
        return 1.0 - loglik / m.entropy_denom

    return auc_value(f, y, strict=strict)


def eif(kind, mu, outcomes, moments_=None, v=None, gamma=DEVIANCE_GAMMA, strict=False):
    """Influence function values phi(Z_i) of V(f, P_n) on the evaluation set.

    `mu` is learner output on the mu scale; accuracy thresholds it internally.
    """
    kind = MeasureKind.parse(kind)
    mu, y = _as_pair(mu, outcomes)
    m = moments_ if moments_ is not None else moments(y)
    f = prediction_for(kind, mu)
    if v is None:
        v = evaluate(kind, f, y, gamma=gamma, strict=strict)

    if kind is MeasureKind.R_SQUARED:
        if m.var_y <= 0.0:
            raise DegenerateError("outcome variance is zero")
        return (-(y - mu) ** 2 + (1.0 - v) * (y - m.mean_y) ** 2) / m.var_y

    if kind is MeasureKind.ACCURACY:
        return y * (mu > THRESHOLD) + (1.0 - y) * (mu <= THRESHOLD) - v

    pi = m.prob_y1
    if not 0.0 < pi < 1.0:
        raise DegenerateError(f"{kind.value} influence function needs both outcome classes")

    if kind is MeasureKind.DEVIANCE:
        ft = np.clip(mu, gamma, 1.0 - gamma)
        loglik = y * np.log(ft) + (1.0 - y) * np.log(1.0 - ft)
        slope = np.log(pi / (1.0 - pi))
        return (-loglik + (1.0 - v) * (m.entropy_denom + slope * (y - pi))) / m.entropy_denom

    # AUC: conditional exceedance probabilities from the opposite class.
    pos_greater, pos_tied, neg_less, neg_tied = _exceedance(mu, y)
    half = 0.0 if strict else 0.5
    n1 = float(np.sum(y))
    n0 = y.shape[0] - n1
    above = (pos_greater + half * pos_tied) / n1
    below = (neg_less + half * neg_tied) / n0
    return ((1.0 - y) * above / (1.0 - pi) + y * below / pi
            - v * (2.0 + (1.0 - 2.0 * pi) * (y - pi) / (pi * (1.0 - pi))))
