import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kyle_equilibrium.cdf import Cdf
from kyle_equilibrium.errors import ExtrapolationError, ParameterError
from kyle_equilibrium.heat import TerminalCondition, solve_heat, terminal_from_cdf
from kyle_equilibrium.model import GridSpec, build_params, ValueMap, gauss_density
from kyle_equilibrium.streams import mean_se
from kyle_equilibrium.transition import (backward_density_family, bridge_mc_r, chapman_kolmogorov_probe,
                                         density_report, random_probes, score_eval)

from conftest import ou_transition_density

GRID = GridSpec.default(1.0)
OU_SLOPE = 0.5


@pytest.fixture(scope="module")
def ou_family():
    params = build_params(1.0, 1.0, 2, ValueMap.tanh())
    fld = solve_heat(TerminalCondition.linear(GRID.y, OU_SLOPE), params, GRID, check_bounds=False)
    return params, backward_density_family(fld, params)


@pytest.fixture(scope="module")
def decoupled_family(near_zero_coupling):
    fld = solve_heat(terminal_from_cdf(Cdf.gaussian(GRID.y, 1.0), near_zero_coupling.f_spec),
                     near_zero_coupling, GRID)
    return backward_density_family(fld, near_zero_coupling)


class TestDecoupledLimit:
    def test_density_is_gaussian_kernel(self, decoupled_family):
        for t, y, z in random_probes(decoupled_family.params, 10, seed=4):
            exact = gauss_density(1.0 - t, z - y)
            assert float(decoupled_family.p(t, y, z)) == pytest.approx(exact, rel=1e-6)

    def test_score_is_bridge_pull(self, decoupled_family):
        t, y, z = 0.4, 0.3, -1.1
        assert float(score_eval(decoupled_family, t, y, z)) == pytest.approx((z - y) / (1 - t), abs=1e-6)

    def test_bridge_monte_carlo_is_exact(self, decoupled_family, near_zero_coupling):
        mean, se = bridge_mc_r(decoupled_family.fld, near_zero_coupling, 0.2, 0.5, -0.5, 2000)
        assert mean == pytest.approx(1.0, abs=1e-7)
        assert se < 1e-7


class TestLinearPricing:
    def test_density_matches_closed_form(self, ou_family):
        params, tdf = ou_family
        for t, y, z in random_probes(params, 20, seed=11):
            exact = ou_transition_density(params.c, OU_SLOPE, 1.0, t, y, z)
            assert abs(float(tdf.p(t, y, z)) / exact - 1.0) < 1e-3

    def test_score_matches_closed_form(self, ou_family):
        params, tdf = ou_family
        a = params.c * OU_SLOPE
        for t, y, z in random_probes(params, 10, seed=12):
            tau = 1.0 - t
            var = (1 - math.exp(-2 * a * tau)) / (2 * a)
            exact = (z - y * math.exp(-a * tau)) * math.exp(-a * tau) / var
            assert float(tdf.score(t, y, z)) == pytest.approx(exact, abs=1e-4)


class TestEquilibriumFamily:
    def test_origin_score_vanishes_by_symmetry(self, density_family):
        assert abs(float(density_family.score(0.5, 0.0, 0.0))) < 1e-3

    def test_reflection_symmetry(self, density_family):
        y = np.array([0.3, -1.2, 2.0])
        z = np.array([-0.7, 0.4, 1.5])
        assert np.allclose(density_family.p(0.35, y, z), density_family.p(0.35, -y, -z), rtol=1e-6)

    def test_correction_vanishes_near_maturity(self, density_family):
        assert abs(float(density_family.log_r(0.999, 0.2, 0.2))) < 1e-3

    def test_report_passes(self, density_family):
        rep = density_report(density_family, n_probes=10)
        assert rep["positive"] and rep["r_bound"]
        assert rep["normalization_err"] <= 1e-4
        assert rep["ck_worst"] <= 1e-3
        assert rep["pass"]

    def test_chapman_kolmogorov_single_probe(self, density_family):
        probe = chapman_kolmogorov_probe(density_family, 0.1, 0.4, 0.5, -0.3)
        assert probe["abs_err"] < 1e-4
        assert probe["rel_err"] < 1e-3

    def test_bridge_monte_carlo_agrees(self, density_family, eq_field, default_params):
        for k, (t, y, z) in enumerate(random_probes(default_params, 4, seed=21)):
            mean, se = bridge_mc_r(eq_field, default_params, t, y, z, 4000, seed=100 + k)
            assert abs(float(density_family.r(t, y, z)) - mean) <= 3.0 * se

    def test_density_is_martingale_along_demand(self, density_family, mm_ensemble):
        # p(t, Y_t; 1, z) is a martingale for the market-maker demand dynamics
        times = mm_ensemble.times
        for z in (0.0, 0.8):
            start = float(density_family.p(0.0, 0.0, z))
            for t in (0.3, 0.7):
                j = int(np.searchsorted(times, t))
                ys = np.clip(mm_ensemble.Y[:, j], GRID.y[0], GRID.y[-1])
                m, se = mean_se(density_family.p(times[j], ys, np.full(ys.size, z)))
                assert abs(m - start) <= 3.0 * se

    @given(st.floats(0.0, 0.9), st.floats(-2.0, 2.0))
    @settings(max_examples=15, deadline=None)
    def test_normalized_over_terminal_points(self, density_family, t, y):
        zf = np.linspace(density_family.z[0], density_family.z[-1], 2401)
        mass = np.trapezoid(density_family.p(t, y, zf), zf)
        assert mass == pytest.approx(1.0, abs=1e-4)

    @given(st.floats(0.0, 0.95), st.floats(-3.0, 3.0), st.floats(-3.0, 3.0))
    @settings(max_examples=25, deadline=None)
    def test_bounded_by_r_bound(self, density_family, t, y, z):
        r = float(density_family.r(t, y, z))
        assert 0.0 < r <= float(density_family.r_bound(y)) * (1 + 1e-6)


class TestDomain:
    def test_terminal_point_outside_lattice(self, density_family):
        with pytest.raises(ExtrapolationError):
            density_family.p(0.2, 0.0, 7.0)

    def test_maturity_is_excluded(self, density_family):
        with pytest.raises(ExtrapolationError):
            density_family.score(1.0, 0.0, 0.0)

    def test_rejects_non_uniform_z(self, eq_field, default_params):
        with pytest.raises(ParameterError):
            backward_density_family(eq_field, default_params, z_grid=[-1.0, 0.0, 0.5, 2.0])

    def test_rejects_z_beyond_y_grid(self, eq_field, default_params):
        with pytest.raises(ParameterError):
            backward_density_family(eq_field, default_params, z_grid=np.linspace(-9, 9, 11))


@pytest.mark.slow
def test_stand_off_error_shrinks(eq_field, default_params, density_family):
    probes = random_probes(default_params, 10, seed=5, t_max=0.95)

    def worst(tdf):
        return max(abs(float(tdf.log_r(t, y, z) - density_family.log_r(t, y, z))) for t, y, z in probes)

    coarse = worst(backward_density_family(eq_field, default_params, stand_off=0.04))
    fine = worst(backward_density_family(eq_field, default_params, stand_off=0.02))
    assert fine < coarse
