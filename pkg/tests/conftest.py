"""Shared pytest fixtures for the vimkit test suite."""
import os
import subprocess
import sys

import numpy as np
import pytest

PROJECT_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
TESTS_DIR = os.path.join(PROJECT_DIR, "tests")
FIXTURES_DIR = os.path.join(TESTS_DIR, "fixtures")


# ─── Helpers ──────────────────────────────────────────────────────────────────

@pytest.fixture(scope="session")
def project_dir():
    return PROJECT_DIR


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES_DIR


def run_module(module, *args, cwd=None):
    """Run a vimkit module via python -m, return (stdout, stderr, rc)."""
    result = subprocess.run(
        [sys.executable, "-m", module, *args],
        capture_output=True, text=True, cwd=cwd or PROJECT_DIR)
    return result.stdout, result.stderr, result.returncode


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(str(v) for v in row) + "\n")
    return str(path)


# ─── Synthetic datasets ───────────────────────────────────────────────────────

@pytest.fixture(scope="session")
def scenario2_data():
    """Scenario 2 mixture sample, n=400 (x2 is noise)."""
    from vimkit.simulation import SCENARIOS, generate
    return generate(SCENARIOS[2], 400, seed=11)


@pytest.fixture(scope="session")
def continuous_data():
    """y = 1 + 2*x1 + noise with x2, x3 irrelevant, n=300."""
    from vimkit.core import CONTINUOUS, Dataset, make_rng
    rng = make_rng(5)
    x = rng.standard_normal((300, 3))
    y = 1.0 + 2.0 * x[:, 0] + rng.standard_normal(300)
    return Dataset(x, y, CONTINUOUS)


@pytest.fixture(scope="session")
def mean_learner():
    """Stub learner: full and reduced fits give identical constant predictions."""
    from vimkit.learners import make_learner
    return make_learner("mean")


@pytest.fixture(scope="session")
def trial_data():
    """Randomised trial: X ~ U(-1, 1), A ~ Bern(0.5), Y = 1 + A*x1 + N(0, 1)."""
    from vimkit.coarsened import TreatmentDataset
    from vimkit.core import make_rng
    rng = make_rng(21)
    n = 400
    x = rng.uniform(-1.0, 1.0, size=(n, 2))
    a = (rng.random(n) < 0.5).astype(float)
    y = 1.0 + a * x[:, 0] + rng.standard_normal(n)
    return TreatmentDataset(x, a, y)


@pytest.fixture(scope="session")
def fold_plan_golden():
    """Committed reference plan for make_fold_plan(40, 5, split=True, seed=1)."""
    path = os.path.join(FIXTURES_DIR, "fold_plan_n40_k5_seed1.csv")
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64)
    return data[:, 0], data[:, 1]
