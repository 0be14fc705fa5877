"""
Monte Carlo harness
===================
Two-component Gaussian mixture scenarios, their exact Bayes posteriors and
importance values, and the replication engine that reports n-scaled MSE,
interval coverage and rejection rates with Monte Carlo standard errors.

    Y ~ Bernoulli(0.6),  X | Y = y ~ N(y * mu1, I_2)
    scenario 1: mu1 = (1.5, 2.0)
    scenario 2: mu1 = (1.5, 0.0)   (x2 is pure noise)

With identity covariance the Bayes posterior depends on x only through the
one-dimensional score u = mu1'x / |mu1|, which is N(0, 1) given Y = 0 and
N(|mu1|, 1) given Y = 1. AUC and accuracy truths are closed forms in |mu1|;
deviance and R^2 truths integrate over u with scipy quadrature.

Replication r at grid position g draws its data from
SeedSequence(seed, spawn_key=(g, r)), so results do not depend on execution
order or thread count.
"""

import logging
import math
from dataclasses import asdict, dataclass, replace
from functools import lru_cache
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, stats
from scipy.special import expit, log_expit

from vimkit.core import (BINARY, ConfigError, Dataset, SimulationError,
                         VimError, make_rng, ordered_map, resolve_threads)
from vimkit.estimators import EstimationConfig, estimate_vim
from vimkit.measures import MeasureKind, evaluate, prediction_for

log = logging.getLogger(__name__)

PREVALENCE = 0.6
MAX_FAILURE_RATE = 0.02
DEFAULT_N_GRID = (500, 1000, 2000, 4000)
DEFAULT_REPS = 300
MC_TRUTH_DRAWS = 10 ** 6


@dataclass(frozen=True)
class SimScenario:
    index: int
    mu1: Tuple[float, float]
    prevalence: float = PREVALENCE

    @property
    def mean_shift(self):
        return np.asarray(self.mu1, dtype=np.float64)

    @property
    def log_odds(self):
        return math.log(self.prevalence / (1.0 - self.prevalence))


SCENARIOS = {
    1: SimScenario(1, (1.5, 2.0)),
    2: SimScenario(2, (1.5, 0.0)),
}


def scenario(index):
    try:
        return SCENARIOS[int(index)]
    except (KeyError, ValueError):
        raise ConfigError(f"unknown scenario {index!r} (choose from {sorted(SCENARIOS)})")


# ─── Data and oracles ─────────────────────────────────────────────────────────

def generate(sc, n, seed):
    """n draws: Y first, then X | Y."""
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    rng = make_rng(seed)
    y = (rng.random(n) < sc.prevalence).astype(np.float64)
    x = rng.standard_normal((n, 2)) + y[:, None] * sc.mean_shift
    return Dataset(x, y, BINARY, ("x1", "x2"))


def _kept(sc, s):
    if s is None:
        return sc.mean_shift
    keep = list(s.complement(2))
    if not keep:
        raise ConfigError("reduced oracle needs at least one remaining column")
    return sc.mean_shift[keep]


def oracle_mu(sc, x, s=None):
    """P(Y = 1 | X_{-s} = x_{-s}); x is full width (rows or a single 2-vector)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    m = _kept(sc, s)
    cols = list(range(2)) if s is None else list(s.complement(2))
    eta = sc.log_odds + x[:, cols] @ m - 0.5 * float(m @ m)
    out = expit(eta)
    return out if out.shape[0] > 1 else float(out[0])


def _expect(fn, shift):
    """E[fn(u)] for u ~ N(shift, 1)."""
    value, _ = integrate.quad(lambda u: fn(u) * stats.norm.pdf(u - shift),
                              -np.inf, np.inf, epsabs=1e-12, epsrel=1e-10, limit=200)
    return value


@lru_cache(maxsize=None)
def oracle_value(radius, measure, prevalence=PREVALENCE):
    """V(f_0, P_0) when the Bayes score separates the classes by `radius`."""
    measure = MeasureKind.parse(measure)
    p, r = prevalence, float(radius)
    log_odds = math.log(p / (1.0 - p))

    if measure is MeasureKind.AUC:
        return float(stats.norm.cdf(r / math.sqrt(2.0)))
    if measure is MeasureKind.ACCURACY:
        if r == 0.0:
            return max(p, 1.0 - p)
        c = (0.5 * r * r - log_odds) / r
        return float(p * stats.norm.cdf(r - c) + (1.0 - p) * stats.norm.cdf(c))

    def eta(u):
        return log_odds + r * u - 0.5 * r * r

    if measure is MeasureKind.DEVIANCE:
        entropy = p * math.log(p) + (1.0 - p) * math.log(1.0 - p)
        if r == 0.0:
            return 0.0
        loglik = (p * _expect(lambda u: log_expit(eta(u)), r)
                  + (1.0 - p) * _expect(lambda u: log_expit(-eta(u)), 0.0))
        return 1.0 - loglik / entropy

    if r == 0.0:
        return 0.0

    def bernoulli_var(u):
        return expit(eta(u)) * expit(-eta(u))

    residual = p * _expect(bernoulli_var, r) + (1.0 - p) * _expect(bernoulli_var, 0.0)
    return 1.0 - residual / (p * (1.0 - p))


def oracle_truth(sc, measure, s):
    """psi_0,s = V(f_0, P_0) - V(f_0,s, P_0) for a one-column group s."""
    if len(s.indices) != 1 or s.indices[0] not in (0, 1):
        raise ConfigError(f"oracle truth is defined for s = {{x1}} or {{x2}}, got {s.indices}")
    full = float(np.linalg.norm(sc.mean_shift))
    reduced = float(np.linalg.norm(_kept(sc, s)))
    if reduced == full:
        return 0.0
    return (oracle_value(full, MeasureKind.parse(measure), sc.prevalence)
            - oracle_value(reduced, MeasureKind.parse(measure), sc.prevalence))


def monte_carlo_truth(sc, measure, s, n=MC_TRUTH_DRAWS, seed=0):
    """Independent check of oracle_truth: evaluate the oracles on a large draw."""
    measure = MeasureKind.parse(measure)
    d = generate(sc, n, seed)
    values = []
    for cols in (None, s):
        mu = np.asarray(oracle_mu(sc, d.features, cols), dtype=np.float64)
        values.append(evaluate(measure, prediction_for(measure, mu), d.outcome, gamma=1e-12))
    return values[0] - values[1]


# ─── Replication engine ───────────────────────────────────────────────────────

@dataclass(frozen=True)
class OperatingCharacteristics:
    n: int
    n_reps: int
    n_failures: int
    truth: float
    mean_psi: float
    scaled_mse: float
    scaled_mse_se: float
    coverage: float
    coverage_se: float
    rejection_rate: float
    rejection_se: float

    def as_dict(self):
        return asdict(self)


def _proportion(flags):
    m = len(flags)
    if m == 0:
        return float("nan"), float("nan")
    rate = float(np.mean(flags))
    return rate, math.sqrt(rate * (1.0 - rate) / m)


def summarize(n, results, truth, n_reps):
    ok = [r for r in results if r is not None]
    failures = n_reps - len(ok)
    if not ok:
        raise SimulationError(f"n={n}: every replication failed")
    psi = np.array([r.psi for r in ok])
    sq = n * (psi - truth) ** 2
    mse_se = float(np.std(sq, ddof=1) / math.sqrt(len(ok))) if len(ok) > 1 else float("nan")
    covered = [r.ci_two_sided[0] <= truth <= r.ci_two_sided[1] for r in ok]
    coverage, coverage_se = _proportion(covered)
    tested = [r.reject for r in ok if r.test_valid]
    rejection, rejection_se = _proportion(tested)
    return OperatingCharacteristics(
        n=int(n), n_reps=int(n_reps), n_failures=failures, truth=float(truth),
        mean_psi=float(np.mean(psi)), scaled_mse=float(np.mean(sq)), scaled_mse_se=mse_se,
        coverage=coverage, coverage_se=coverage_se,
        rejection_rate=rejection, rejection_se=rejection_se)


def replication_seed(seed, grid_index, rep):
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(grid_index), int(rep)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def run_experiment(sc, measure, s, n_grid: Sequence[int] = DEFAULT_N_GRID,
                   n_reps: int = DEFAULT_REPS, cfg: Optional[EstimationConfig] = None,
                   seed: int = 0, estimator: Optional[Callable] = None,
                   threads: Optional[int] = None, truth: Optional[float] = None):
    """Operating characteristics of `estimator` (default estimate_vim) per n.

    Fold plans come from cfg.seed and are shared by every replication; only the
    data vary. A replication raising a VimError counts as a failure; more than
    2% failures at any n raises SimulationError.
    """
    measure = MeasureKind.parse(measure)
    if n_reps < 1:
        raise ConfigError(f"n_reps must be >= 1, got {n_reps}")
    cfg = cfg or EstimationConfig(measure=measure)
    if cfg.measure is not measure or cfg.threads != 1:
        cfg = replace(cfg, measure=measure, threads=1)
    estimator = estimator or estimate_vim
    truth = oracle_truth(sc, measure, s) if truth is None else float(truth)
    threads = resolve_threads(threads)

    table = []
    for g, n in enumerate(n_grid):
        def one(rep, n=n, g=g):
            d = generate(sc, n, replication_seed(seed, g, rep))
            try:
                return estimator(d, s, cfg)
            except VimError as exc:
                log.debug(f"n={n} replication {rep} failed: {exc}")
                return None

        results = ordered_map(one, range(n_reps), threads)
        row = summarize(n, results, truth, n_reps)
        if row.n_failures > MAX_FAILURE_RATE * n_reps:
            raise SimulationError(f"n={n}: {row.n_failures} of {n_reps} replications failed "
                                  f"(limit {MAX_FAILURE_RATE:.0%})")
        log.info(f"n={n}: mean psi {row.mean_psi:.4f} (truth {truth:.4f}), "
                 f"coverage {row.coverage:.3f}, rejection {row.rejection_rate:.3f}")
        table.append(row)
    return table

