"""
vimkit core data model
======================
Datasets, feature groups, fold plans, estimate/result containers, the error
hierarchy, and the seeded-randomness and ordered-parallelism helpers every
other module builds on.

All containers are frozen dataclasses holding read-only numpy arrays, so they
can be shared between worker threads without copying.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

log = logging.getLogger(__name__)

CONTINUOUS = "continuous"
BINARY = "binary"
OUTCOME_KINDS = (CONTINUOUS, BINARY)

BALANCED = "balanced"
REPLACEMENT = "replacement"
FOLD_MODES = (BALANCED, REPLACEMENT)

# Redraw budget for with-replacement fold assignment (every fold non-empty).
MAX_FOLD_DRAWS = 1000


# ─── Errors ───────────────────────────────────────────────────────────────────

class VimError(Exception):
    """Base error. `prefix` and `exit_code` drive the CLI error contract."""
    prefix = "E_VIM"
    exit_code = 1


class ConfigError(VimError):
    prefix = "E_CONFIG"
    exit_code = 2


class DataError(VimError):
    prefix = "E_DATA"
    exit_code = 3


class SizingError(DataError):
    """Sample too small for the requested folds/split."""

    def __init__(self, message, minimum_n=None):
        super().__init__(message)
        self.minimum_n = minimum_n


class DegenerateError(VimError):
    prefix = "E_DEGENERATE"
    exit_code = 4


class FoldDegenerateError(DegenerateError):
    """A single evaluation fold cannot support the measure."""

    def __init__(self, message, fold, half=1):
        super().__init__(f"fold {fold} (half {half}): {message}")
        self.fold = fold
        self.half = half


class SimulationError(DegenerateError):
    pass


# ─── Helpers ──────────────────────────────────────────────────────────────────

def make_rng(seed):
    """The project RNG: numpy Generator over the counter-based Philox4x64."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def _frozen(arr, dtype=np.float64, ndim=None):
    a = np.array(arr, dtype=dtype, copy=True)
    if ndim == 2 and a.ndim == 1:
        a = a.reshape(-1, 1)
    if ndim is not None and a.ndim != ndim:
        raise DataError(f"expected a {ndim}-dimensional array, got shape {a.shape}")
    a.setflags(write=False)
    return a


def resolve_threads(requested=None):
    """Worker count: explicit value, else VIMKIT_THREADS, else CPU count.

    0 or None means auto.
    """
    n = requested
    if not n:
        env = os.environ.get("VIMKIT_THREADS", "").strip()
        if env:
            try:
                n = int(env)
            except ValueError:
                raise ConfigError(f"VIMKIT_THREADS must be an integer, got {env!r}")
    if not n or n < 0:
        n = os.cpu_count() or 1
    return int(n)


def ordered_map(fn, items, threads=1):
    """Map `fn` over `items`, results in input order regardless of scheduling."""
    items = list(items)
    threads = resolve_threads(threads)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))


# ─── Dataset ──────────────────────────────────────────────────────────────────

def detect_outcome_kind(outcome):
    y = np.asarray(outcome, dtype=np.float64)
    return BINARY if y.size and np.all((y == 0.0) | (y == 1.0)) else CONTINUOUS


@dataclass(frozen=True)
class Dataset:
    """Observed sample Z_1..Z_n: an n x p feature matrix and outcome vector."""
    features: np.ndarray
    outcome: np.ndarray
    outcome_kind: str = CONTINUOUS
    column_names: Tuple[str, ...] = ()

    def __post_init__(self):
        x = _frozen(self.features, ndim=2)
        y = _frozen(self.outcome, ndim=1)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "outcome", y)
        n, p = x.shape
        if n < 1 or p < 1:
            raise DataError(f"dataset needs n >= 1 and p >= 1, got n={n}, p={p}")
        if y.shape[0] != n:
            raise DataError(f"outcome length {y.shape[0]} does not match {n} feature rows")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DataError("dataset contains missing or non-finite values")
        if self.outcome_kind not in OUTCOME_KINDS:
            raise DataError(f"unknown outcome kind {self.outcome_kind!r}")
        if self.outcome_kind == BINARY and not np.all((y == 0.0) | (y == 1.0)):
            raise DataError("binary outcome must take values in {0, 1}")
        names = tuple(self.column_names) or tuple(f"x{j + 1}" for j in range(p))
        if len(names) != p:
            raise DataError(f"{len(names)} column names for {p} columns")
        object.__setattr__(self, "column_names", names)

    @classmethod
    def from_arrays(cls, features, outcome, outcome_kind=None, column_names=()):
        kind = outcome_kind or detect_outcome_kind(outcome)
        return cls(features, outcome, kind, tuple(column_names))

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def p(self):
        return self.features.shape[1]

    def rows(self, index):
        """Sub-dataset on the given observation indices (order preserved)."""
        index = np.asarray(index)
        return Dataset(self.features[index], self.outcome[index],
                       self.outcome_kind, self.column_names)

    def with_outcome(self, outcome, outcome_kind=CONTINUOUS):
        """Same features, new (pseudo-)outcome."""
        return Dataset(self.features, outcome, outcome_kind, self.column_names)


# ─── Feature groups ───────────────────────────────────────────────────────────

@dataclass(frozen=True)
class FeatureSet:
    """Column indices s of a feature group (0-based, sorted, unique)."""
    indices: Tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if not idx:
            raise ConfigError("feature group is empty")
        if len(set(idx)) != len(idx):
            raise ConfigError(f"feature group has duplicate indices: {idx}")
        object.__setattr__(self, "indices", tuple(sorted(idx)))

    @classmethod
    def of(cls, *indices):
        return cls(tuple(indices))

    @classmethod
    def from_names(cls, names, column_names):
        lookup = {name: j for j, name in enumerate(column_names)}
        missing = [name for name in names if name not in lookup]
        if missing:
            raise ConfigError(f"unknown column(s) in feature group: {', '.join(missing)}")
        return cls(tuple(lookup[name] for name in names))

    def validate(self, p):
        bad = [i for i in self.indices if i < 0 or i >= p]
        if bad:
            raise ConfigError(f"feature indices {bad} outside [0, {p - 1}]")
        return self

    def complement(self, p):
        """Indices of X_{-s}, original order preserved."""
        self.validate(p)
        drop = set(self.indices)
        return tuple(j for j in range(p) if j not in drop)


def complement_columns(d, s):
    """Dataset restricted to the columns not in s."""
    keep = s.complement(d.p)
    if not keep:
        raise DataError("reduced dataset empty: feature group covers every column")
    keep = list(keep)
    return Dataset(d.features[:, keep], d.outcome, d.outcome_kind,
                   tuple(d.column_names[j] for j in keep))


# ─── Fold plans ───────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class FoldPlan:
    """Sample-split halves (labels 1/2) and per-half cross-fit folds (1..K)."""
    split_assignment: np.ndarray
    fold_assignment: np.ndarray
    K: int
    seed: int = 0
    mode: str = BALANCED

    def __post_init__(self):
        split = _frozen(self.split_assignment, dtype=np.int64, ndim=1)
        folds = _frozen(self.fold_assignment, dtype=np.int64, ndim=1)
        object.__setattr__(self, "split_assignment", split)
        object.__setattr__(self, "fold_assignment", folds)
        if split.shape != folds.shape:
            raise ConfigError("split and fold assignments differ in length")
        if self.K < 2:
            raise ConfigError(f"K must be >= 2, got {self.K}")
        if not np.all(np.isin(split, (1, 2))):
            raise ConfigError("split labels must be 1 or 2")
        for h in self.halves:
            labels = folds[split == h]
            sizes = np.bincount(labels, minlength=self.K + 1)[1:]
            if labels.min() < 1 or labels.max() > self.K or np.any(sizes == 0):
                raise ConfigError(f"half {h} has an empty or out-of-range fold")

    @property
    def n(self):
        return self.split_assignment.shape[0]

    @property
    def is_split(self):
        return bool(np.any(self.split_assignment == 2))

    @property
    def halves(self):
        return (1, 2) if self.is_split else (1,)

    def half_indices(self, half=1):
        return np.flatnonzero(self.split_assignment == half)

    def fold_indices(self, k, half=1):
        """Evaluation set D_k of fold k within a half."""
        return np.flatnonzero((self.split_assignment == half) & (self.fold_assignment == k))

    def training_indices(self, k, half=1):
        """Union of the other folds of the same half."""
        return np.flatnonzero((self.split_assignment == half) & (self.fold_assignment != k))

    def fold_sizes(self, half=1):
        labels = self.fold_assignment[self.split_assignment == half]
        return np.bincount(labels, minlength=self.K + 1)[1:]


def minimum_n(K, split):
    return 4 * K if split else 2 * K


def make_fold_plan(n, K=5, split=False, seed=0, mode=BALANCED,
                   split_fraction=0.5, strata=None):
    """Build the split/cross-fit partition.

    Balanced mode permutes each half and deals observations round-robin, so fold
    sizes differ by at most one. Replacement mode draws labels uniformly with
    replacement and redraws until no fold is empty. With `strata` labels
    (the binary outcome, or a coarsening pattern), each label is dealt in turn so
    folds keep the half's label mix.
    """
    n, K = int(n), int(K)
    if K < 2:
        raise ConfigError(f"K must be >= 2, got {K}")
    if mode not in FOLD_MODES:
        raise ConfigError(f"unknown fold mode {mode!r}")
    need = minimum_n(K, split)
    if n < need:
        raise SizingError(f"n={n} too small for K={K} folds"
                          f"{' with sample splitting' if split else ''}: "
                          f"need n >= {need}", minimum_n=need)
    if not 0.0 < split_fraction < 1.0:
        raise ConfigError(f"split fraction must be in (0, 1), got {split_fraction}")

    rng = make_rng(seed)
    split_assignment = np.ones(n, dtype=np.int64)
    if split:
        n_reduced = int(np.floor(n * split_fraction))
        n_full = n - n_reduced
        if min(n_full, n_reduced) < 2 * K:
            raise SizingError(f"split fraction {split_fraction} leaves a half smaller "
                              f"than {2 * K} observations", minimum_n=need)
        order = rng.permutation(n)
        split_assignment[order[n_full:]] = 2
        halves = (1, 2)
    else:
        halves = (1,)

    fold_assignment = np.zeros(n, dtype=np.int64)
    for h in halves:
        members = np.flatnonzero(split_assignment == h)
        if mode == BALANCED:
            if strata is not None:
                cls = np.asarray(strata)[members]
                order = np.concatenate([rng.permutation(members[cls == c])
                                        for c in np.unique(cls)])
            else:
                order = members[rng.permutation(members.shape[0])]
            fold_assignment[order] = np.arange(order.shape[0]) % K + 1
        else:
            for _ in range(MAX_FOLD_DRAWS):
                labels = rng.integers(1, K + 1, size=members.shape[0])
                if np.all(np.bincount(labels, minlength=K + 1)[1:] > 0):
                    break
            else:
                raise SizingError(f"could not draw {K} non-empty folds for "
                                  f"{members.shape[0]} observations", minimum_n=need)
            fold_assignment[members] = labels

    return FoldPlan(split_assignment, fold_assignment, K, int(seed), mode)


# ─── Estimates and results ────────────────────────────────────────────────────

@dataclass(frozen=True)
class PredictivenessEstimate:
    """v (or v_s) with the EIF values it was computed with.

    `indices` records which observations the EIF values belong to, in order.
    """
    value: float
    eif_values: np.ndarray
    fold_values: Tuple[float, ...] = ()
    indices: Optional[np.ndarray] = None
    diagnostics: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))
        object.__setattr__(self, "eif_values", _frozen(self.eif_values, ndim=1))
        if self.indices is not None:
            object.__setattr__(self, "indices",
                               _frozen(self.indices, dtype=np.int64, ndim=1))
        object.__setattr__(self, "fold_values", tuple(float(v) for v in self.fold_values))

    @property
    def n(self):
        return self.eif_values.shape[0]

    @property
    def eif_second_moment(self):
        """eta^2: mean squared EIF value."""
        return float(np.mean(self.eif_values ** 2))


@dataclass(frozen=True)
class VimResult:
    """Point estimate, interval and (when valid) beta-null test for one group."""
    psi: float
    std_error: float
    ci_two_sided: Tuple[float, float]
    ci_one_sided_lower: float
    test_stat: Optional[float]
    p_value: Optional[float]
    beta: float
    alpha: float
    n_full: int
    n_reduced: int
    v_full: float = float("nan")
    v_reduced: float = float("nan")
    measure: str = ""

    @property
    def test_valid(self):
        return self.p_value is not None

    @property
    def reject(self):
        """Reject the beta-null iff p < alpha."""
        return self.test_valid and self.p_value < self.alpha

    def display_psi(self, clamp=False):
        return max(self.psi, 0.0) if clamp else self.psi

    def as_dict(self, clamp=False):
        lo, hi = self.ci_two_sided
        row = {
            "measure": self.measure,
            "psi": self.display_psi(clamp),
            "se": self.std_error,
            "ci_lo": lo,
            "ci_hi": hi,
            "ci_one_sided_lo": self.ci_one_sided_lower,
            "v_full": self.v_full,
            "v_reduced": self.v_reduced,
            "n_full": self.n_full,
            "n_reduced": self.n_reduced,
            "beta": self.beta,
            "alpha": self.alpha,
        }
        if self.test_valid:
            row.update({"t_stat": self.test_stat, "p_value": self.p_value,
                        "reject": self.reject})
        return row


def half_sizes(plan: FoldPlan) -> Tuple[int, int]:
    if plan.is_split:
        return int(np.sum(plan.split_assignment == 1)), int(np.sum(plan.split_assignment == 2))
    return plan.n, plan.n


def check_disjoint(a: Sequence[int], b: Sequence[int]):
    return np.intersect1d(np.asarray(a), np.asarray(b)).size == 0
