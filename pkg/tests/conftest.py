import math

import numpy as np
import pytest

from kyle_equilibrium.fixed_point import solve_fixed_point
from kyle_equilibrium.model import GridSpec, ValueMap, build_params
from kyle_equilibrium.simulation import (ensemble_wealth, psi_value, simulate_insider_paths,
                                         simulate_mm_paths)
from kyle_equilibrium.transition import backward_density_family

ENSEMBLE_PATHS = 10_000
ENSEMBLE_SEED = 1


@pytest.fixture(scope="session")
def default_params():
    return build_params(1.0, 1.0, 2, ValueMap.tanh())


@pytest.fixture(scope="session")
def default_grid():
    return GridSpec.default(1.0)


@pytest.fixture(scope="session")
def equilibrium(default_params, default_grid):
    return solve_fixed_point(default_params, default_grid)


@pytest.fixture(scope="session")
def eq_field(equilibrium):
    return equilibrium.field


@pytest.fixture(scope="session")
def density_family(eq_field, default_params):
    return backward_density_family(eq_field, default_params)


@pytest.fixture(scope="session")
def insider_ensemble(eq_field, density_family, default_params):
    return simulate_insider_paths(eq_field, density_family, default_params, ENSEMBLE_PATHS,
                                  seed=ENSEMBLE_SEED)


@pytest.fixture(scope="session")
def mm_ensemble(eq_field, default_params):
    return simulate_mm_paths(eq_field, default_params, ENSEMBLE_PATHS, seed=ENSEMBLE_SEED)


@pytest.fixture(scope="session")
def insider_wealth_and_psi(insider_ensemble, eq_field, default_params):
    return (ensemble_wealth(insider_ensemble, eq_field),
            psi_value(eq_field, default_params, insider_ensemble.V))


@pytest.fixture(scope="session")
def near_zero_coupling():
    """Risk aversion so small that the demand drift is negligible."""
    return build_params(1.0, 1e-8, 2, ValueMap.tanh())


def ou_variance(c, k, sigma=1.0):
    a = c * k
    return sigma ** 2 * (1.0 - math.exp(-2.0 * a)) / (2.0 * a)


def ou_transition_density(c, k, sigma, t, y, z):
    """Closed-form density of dY = -c k Y dt + sigma dB from (t, y) to (1, z)."""
    a = c * k
    tau = 1.0 - t
    mean = y * np.exp(-a * tau)
    var = sigma ** 2 * (1.0 - np.exp(-2.0 * a * tau)) / (2.0 * a)
    return np.exp(-0.5 * (z - mean) ** 2 / var) / np.sqrt(2.0 * np.pi * var)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
