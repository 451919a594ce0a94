from __future__ import annotations

import warnings

import numpy as np
import pytest

from jmthresh.model import Hyper, prepare_spec
from jmthresh.simulator import scenario, simulate_dataset

warnings.filterwarnings("ignore", category=RuntimeWarning)


def random_active_state(spec, n, rng, na_prob=0.2):
    """Truth-like state with both features present and mostly real thresholds."""
    st = scenario("C").state.copy()
    st.b = rng.multivariate_normal(np.zeros(spec.R), st.D, size=n)
    st.beta = np.array([[rng.uniform(25, 32), rng.normal(0.1, 0.1)]])
    st.gamma0 = rng.uniform(-5, -3)
    st.gammas = rng.normal(0, 0.3, size=spec.Q)
    st.delta = rng.normal(0, 0.3, size=len(spec.covariates))
    st.tau = np.array([[rng.uniform(0.01, 0.08), rng.uniform(0.0005, 0.004)]])
    st.d = rng.choice([-1.0, 1.0], size=(1, 2)) * rng.uniform(0.5, 1.5, size=(1, 2))
    f = spec.factors[0]
    thr = rng.uniform(f.lower + 5, f.upper - 5, size=(1, 2, 4))
    thr[rng.uniform(size=thr.shape) < na_prob] = np.nan
    st.thresholds = thr
    return st


@pytest.fixture(scope="session")
def small_data():
    return simulate_dataset(scenario("C"), 40, 7)


@pytest.fixture(scope="session")
def small_spec(small_data):
    return prepare_spec(small_data, {"BMI": 30.0}, hyper=Hyper())


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
