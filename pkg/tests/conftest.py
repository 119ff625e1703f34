import numpy as np
import pytest

from finslerflow.charts import CHART_Z, ChartId, PhaseState
from finslerflow.flow import IntegratorOptions


@pytest.fixture
def tight_opts():
    return IntegratorOptions(rel_tol=1e-11, abs_tol=1e-13)


def random_unit_state(metric, rng, theta_cap=1.2):
    th = rng.uniform(-theta_cap, theta_cap)
    ph = rng.uniform(0.0, 2.0 * np.pi)
    psi = rng.uniform(0.0, 2.0 * np.pi)
    arr = metric.normalize(
        np.array([[th, ph, np.cos(psi), np.sin(psi)]]), np.array([CHART_Z])
    )[0]
    return PhaseState.from_array(arr, ChartId.ZPOLAR)


def random_unit_states(metric, rng, n, theta_cap=1.2):
    rows = [random_unit_state(metric, rng, theta_cap).as_array() for _ in range(n)]
    return np.array(rows), np.full(n, CHART_Z)
