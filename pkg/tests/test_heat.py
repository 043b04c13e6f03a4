import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import ndtr

from kyle_equilibrium.cdf import Cdf
from kyle_equilibrium.errors import InputError, RangeError
from kyle_equilibrium.heat import (TerminalCondition, field_bound_report, invert_terminal, solve_heat,
                                   terminal_from_cdf, xi_curve)
from kyle_equilibrium.model import GridSpec, ValueMap, build_params, gauss_density

GRID = GridSpec.default(1.0)
PARAMS = build_params(1.0, 1.0, 2, ValueMap.tanh())


def smoothed(fn, t, y, sigma=1.0):
    """E[fn(y + sigma sqrt(1 - t) Z)] by adaptive quadrature."""
    s = sigma * math.sqrt(1.0 - t)
    val, _ = integrate.quad(lambda x: fn(y + s * x) * math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi),
                            -12, 12, epsabs=1e-13, limit=200)
    return val


@pytest.fixture(scope="module")
def normal_cdf_field():
    term = TerminalCondition.from_function(GRID.y, ndtr, lambda y: gauss_density(1.0, y))
    return solve_heat(term, PARAMS, GRID)


@pytest.fixture(scope="module")
def tanh_field():
    term = TerminalCondition.from_function(GRID.y, np.tanh, lambda y: 1.0 / np.cosh(y) ** 2)
    return solve_heat(term, PARAMS, GRID)


class TestClosedForm:
    @pytest.mark.parametrize("t", [0.0, 0.3, 0.9, 0.99, 0.999])
    def test_smoothed_normal_cdf(self, normal_cdf_field, t):
        # Phi convolved with N(0, 1 - t) is Phi(y / sqrt(2 - t))
        y = np.linspace(-4, 4, 81)
        w = math.sqrt(2.0 - t)
        H, Hy, Hyy = normal_cdf_field.eval(t, y)
        assert np.max(np.abs(H - ndtr(y / w))) < 1e-8
        assert np.max(np.abs(Hy - gauss_density(1.0, y / w) / w)) < 1e-7
        exact_curv = -(y / w ** 2) * gauss_density(1.0, y / w) / w
        assert np.max(np.abs(Hyy - exact_curv)) < 1e-4

    @pytest.mark.parametrize("t, y", [(0.0, 0.0), (0.0, 0.7), (0.5, -1.3), (0.9, 2.0), (0.998, 0.4)])
    def test_tanh_against_quadrature(self, tanh_field, t, y):
        assert float(tanh_field.H_at(t, y)) == pytest.approx(smoothed(math.tanh, t, y), abs=1e-8)
        slope = smoothed(lambda x: 1.0 / math.cosh(x) ** 2, t, y)
        assert float(tanh_field.Hy_at(t, y)) == pytest.approx(slope, abs=1e-6)

    def test_linear_data_is_reproduced(self):
        fld = solve_heat(TerminalCondition.linear(GRID.y, 0.5), PARAMS, GRID, check_bounds=False)
        y = np.linspace(-6, 6, 25)
        for t in (0.0, 0.5, 0.999):
            H, Hy, Hyy = fld.eval(t, y)
            assert np.allclose(H, 0.5 * y, atol=1e-9)
            assert np.allclose(Hy, 0.5, atol=1e-9)
            assert np.allclose(Hyy, 0.0, atol=1e-7)

    def test_constant_data(self):
        fld = solve_heat(TerminalCondition.constant(GRID.y, 0.3), PARAMS, GRID)
        assert np.allclose(fld.H, 0.3) and np.allclose(fld.Hy, 0.0)

    def test_terminal_row_is_the_data(self, tanh_field):
        H, Hy, _ = tanh_field.row(1.0)
        assert np.allclose(H, np.tanh(GRID.y))
        assert np.allclose(Hy, 1.0 / np.cosh(GRID.y) ** 2)


class TestStructure:
    def test_odd_data_gives_odd_field(self, tanh_field):
        assert np.max(np.abs(tanh_field.H + tanh_field.H[:, ::-1])) < 1e-9
        assert np.max(np.abs(tanh_field.Hy - tanh_field.Hy[:, ::-1])) < 1e-12

    def test_bounds_hold(self, tanh_field):
        assert field_bound_report(tanh_field) == []

    def test_semigroup(self, tanh_field):
        # smoothing the t = 0.5 row by a further half unit of variance reproduces t = 0
        row = tanh_field.row(0.5)
        term = TerminalCondition(GRID.y, row[0], row[1])
        again = solve_heat(term, PARAMS, GridSpec(y_max=8.0, n_t=4), mesh=np.array([0.5, 1.0]))
        assert np.max(np.abs(again.row(0.5)[0] - tanh_field.row(0.0)[0])) < 1e-6

    def test_scaled_field(self, tanh_field):
        big = tanh_field.scaled(1.2)
        assert float(big.Hy_at(0.3, 0.4)) == pytest.approx(1.2 * float(tanh_field.Hy_at(0.3, 0.4)))
        assert big.h_inf == pytest.approx(1.2 * tanh_field.h_inf)

    def test_rejects_decreasing_data(self):
        with pytest.raises(InputError):
            TerminalCondition(GRID.y, -np.tanh(GRID.y), np.zeros(GRID.n_y))


class TestInversion:
    def test_invert_terminal_round_trip(self, tanh_field):
        v = np.array([-0.95, -0.3, 0.0, 0.6, 0.99])
        assert np.allclose(invert_terminal(tanh_field, v), np.arctanh(v), atol=1e-7)

    def test_xi_curve_is_a_level_curve(self, tanh_field):
        v = np.array([-0.5, 0.2, 0.8])
        times = np.array([0.0, 0.4, 0.9, 1.0])
        xi = xi_curve(tanh_field, v, times)
        for j, t in enumerate(times):
            assert np.allclose(tanh_field.H_at(t, xi[j]), v, atol=1e-9)

    def test_value_outside_range(self, tanh_field):
        with pytest.raises(RangeError):
            invert_terminal(tanh_field, np.array([1.0]))


class TestTerminalFromCdf:
    def test_gaussian_law_gives_rescaled_map(self):
        sigma = 1.5
        grid = GridSpec.default(sigma)
        vm = ValueMap.tanh(1.0, 0.8)
        term = terminal_from_cdf(Cdf.gaussian(grid.y, sigma), vm)
        inner = np.abs(grid.y) < 6 * sigma
        assert np.allclose(term.h[inner], vm(grid.y[inner] / sigma), atol=1e-10)
        assert np.allclose(term.dh[inner], vm.derivative(grid.y[inner] / sigma) / sigma, atol=1e-8)
        assert term.h[0] == -1.0 and term.h[-1] == 1.0

    def test_rejects_non_monotone_law(self):
        P = Cdf.gaussian(GRID.y, 1.0)
        with pytest.raises(InputError):
            terminal_from_cdf(Cdf(P.y, P.P[::-1], P.Q, P.dens), ValueMap.tanh())


# b >= 1 keeps the data flat (to 1e-6) at the grid edges
@given(st.floats(0.2, 3.0), st.floats(1.0, 3.0), st.floats(-1.0, 1.0))
@settings(max_examples=12, deadline=None)
def test_bounded_monotone_data_obeys_bounds(a, b, m):
    term = TerminalCondition.from_function(GRID.y, lambda y: a * np.tanh(b * y) + m,
                                           lambda y: a * b / np.cosh(b * y) ** 2)
    fld = solve_heat(term, PARAMS, GRID, check_bounds=False)
    assert field_bound_report(fld) == []
    assert np.all(np.diff(fld.H, axis=1) >= -1e-13)
    assert np.all(fld.Hy[:, np.abs(GRID.y) < 4] > 0)
