import numpy as np
import pytest
from scipy.special import ndtr

from kyle_equilibrium.cdf import Cdf
from kyle_equilibrium.fixed_point import (apply_T, convergence_rate, solve_fixed_point, solve_multi_start,
                                          start_family)
from kyle_equilibrium.model import GridSpec, ValueMap, build_params


class TestDefaultEquilibrium:
    def test_converges(self, equilibrium):
        assert equilibrium.converged
        assert equilibrium.iterations <= 200
        assert equilibrium.residuals[-1] <= 1e-4
        assert equilibrium.diagnostic == ""

    def test_residual_reverified(self, equilibrium, default_params, default_grid):
        P = equilibrium.P_star
        assert P.sup_distance(apply_T(P, default_params, default_grid)) <= 1e-4

    def test_in_admissible_set(self, equilibrium):
        assert equilibrium.P_star.in_d
        assert equilibrium.d_report["in_D"]
        assert all(equilibrium.iterates_in_D)

    def test_symmetric_law(self, equilibrium):
        P = equilibrium.P_star
        assert np.max(np.abs(P.dens - P.dens[::-1])) < 1e-10
        assert P.check(tol=1e-5) == []

    def test_concentrates_relative_to_noise(self, equilibrium):
        _, var = equilibrium.P_star.mean_var()
        assert 0.5 < var < 1.0

    def test_contraction(self, equilibrium):
        rate = convergence_rate(equilibrium.residuals)
        assert 0.0 < rate < 1.0
        assert equilibrium.residuals[-1] < equilibrium.residuals[0]


def test_decoupled_limit_is_noise_law(near_zero_coupling, default_grid):
    res = solve_fixed_point(near_zero_coupling, default_grid)
    assert res.converged
    assert np.max(np.abs(res.P_star.P - ndtr(default_grid.y))) < 1e-3
    image = apply_T(res.P_star, near_zero_coupling, default_grid)
    assert np.max(np.abs(image.P - ndtr(default_grid.y))) < 1e-4


def test_reports_non_convergence(default_params, default_grid):
    res = solve_fixed_point(default_params, default_grid, max_iter=2, tol=1e-12)
    assert not res.converged
    assert res.iterations == 2 and len(res.residuals) == 2
    assert "no convergence" in res.diagnostic


@pytest.mark.parametrize("kwargs", [dict(damping=0.0), dict(damping=1.5), dict(tol=0.0), dict(max_iter=0)])
def test_rejects_bad_settings(default_params, default_grid, kwargs):
    with pytest.raises(ValueError):
        solve_fixed_point(default_params, default_grid, **kwargs)


def test_anderson_reaches_the_same_point(equilibrium, default_params, default_grid):
    acc = solve_fixed_point(default_params, default_grid, anderson=True)
    assert acc.converged
    assert acc.P_star.sup_distance(equilibrium.P_star) < 3e-4


def test_start_family_are_distinct_cdfs(default_params, default_grid):
    starts = start_family(default_params, default_grid)
    assert len(starts) == 5
    for s in starts:
        assert s.check() == []
    assert min(a.sup_distance(b) for i, a in enumerate(starts) for b in starts[i + 1:]) > 0.01


@pytest.mark.slow
def test_unique_limit_from_every_start(default_params, default_grid):
    multi = solve_multi_start(default_params, default_grid, workers=2)
    assert multi["all_converged"]
    assert multi["spread"] < 1e-3


@pytest.mark.slow
@pytest.mark.parametrize("sigma, rho, n", [(1.0, 5.0, 2), (2.0, 1.0, 3), (0.5, 1.0, 4)])
def test_other_parameters_converge_in_D(sigma, rho, n):
    params = build_params(sigma, rho, n, ValueMap.tanh())
    res = solve_fixed_point(params, GridSpec.default(sigma))
    assert res.converged and res.P_star.in_d
