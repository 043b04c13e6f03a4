"""Acceptance criteria 1 to 11, one test each.

Every test records a single PASS/FAIL line; the lines are printed together at
the end of the pytest run (see ``pytest_terminal_summary`` in conftest.py).
Run this file alone with ``pytest tests/test_acceptance.py``.
"""

import filecmp
import math
import os
import time

import numpy as np
import pytest
from scipy.special import ndtr

from kyle_equilibrium.cli import EXIT_OK, main
from kyle_equilibrium.fixed_point import apply_T, solve_fixed_point
from kyle_equilibrium.forward import law_Y1, validate_in_D
from kyle_equilibrium.heat import TerminalCondition, solve_heat
from kyle_equilibrium.simulation import (bridge_report, depth_diagnostics, ks_distance, mm_utility_process,
                                         optimality_report, suboptimality_probe)
from kyle_equilibrium.transition import (backward_density_family, bridge_mc_r, density_report,
                                         random_probes)

from conftest import ENSEMBLE_PATHS, ENSEMBLE_SEED, ou_transition_density, ou_variance

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DEFAULT_CONF = os.path.join(ROOT, "configs", "default.conf")

RESULTS = {}


def record(number: int, ok: bool, detail: str):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[number] = line
    print(line)
    assert ok, line


def test_criterion_01_decoupled_limit(near_zero_coupling, default_grid):
    start = time.perf_counter()
    res = solve_fixed_point(near_zero_coupling, default_grid)
    elapsed = time.perf_counter() - start
    err = float(np.max(np.abs(res.P_star.P - ndtr(default_grid.y))))
    image_err = float(np.max(np.abs(apply_T(res.P_star, near_zero_coupling, default_grid).P - ndtr(default_grid.y))))
    ok = res.converged and err < 1e-3 and image_err < 1e-3 and elapsed < 10.0
    record(1, ok, f"sup|P*-Phi| = {err:.2e}, sup|T(P*)-Phi| = {image_err:.2e}, {elapsed:.1f} s")


def test_criterion_02_linear_pricing_oracle(default_params, default_grid):
    start = time.perf_counter()
    slope = 0.5
    fld = solve_heat(TerminalCondition.linear(default_grid.y, slope), default_params, default_grid,
                     check_bounds=False)
    _, var = law_Y1(fld, default_params, default_grid, validate=False).mean_var()
    exact = ou_variance(default_params.c, slope)
    var_err = abs(var - exact) / exact
    tdf = backward_density_family(fld, default_params)
    dens_err = 0.0
    for t, y, z in random_probes(default_params, 20, seed=11):
        ref = ou_transition_density(default_params.c, slope, 1.0, t, y, z)
        dens_err = max(dens_err, abs(float(tdf.p(t, y, z)) / ref - 1.0))
    elapsed = time.perf_counter() - start
    ok = var_err < 1e-3 and dens_err < 1e-3 and elapsed < 60.0
    record(2, ok, f"variance rel err = {var_err:.2e}, density worst rel err = {dens_err:.2e} "
                  f"(20 probes), {elapsed:.1f} s")


def test_criterion_03_fixed_point(default_params, default_grid):
    start = time.perf_counter()
    res = solve_fixed_point(default_params, default_grid, damping=0.5, tol=1e-4, max_iter=200)
    elapsed = time.perf_counter() - start
    fine = default_grid.refined()
    P_fine = res.P_star.resample(fine.y)
    fine_res = P_fine.sup_distance(apply_T(P_fine, default_params, fine))
    ok = res.converged and res.iterations <= 200 and res.residuals[-1] <= 1e-4 and fine_res <= 3e-4 \
        and elapsed < 900.0
    record(3, ok, f"{res.iterations} iterations, residual = {res.residuals[-1]:.2e}, "
                  f"doubled-grid residual = {fine_res:.2e}, {elapsed:.1f} s")


def test_criterion_04_bounds(equilibrium, eq_field, default_params):
    fld = eq_field
    worst = 0.0
    for t in fld.mesh[:-1]:
        worst = max(worst, float(np.max(fld.row(t)[1])) * math.sqrt(1.0 - t))
    rep = validate_in_D(equilibrium.P_star, default_params)
    tails = min(rep["upper_tail_margin"], rep["lower_tail_margin"])
    ok = worst <= default_params.big_c + 1e-6 and rep["dominance"] and rep["upper_tail"] and rep["lower_tail"]
    record(4, ok, f"max H_y sqrt(1-t) = {worst:.4f} <= C = {default_params.big_c:.4f}, "
                  f"worst density/cap = {rep['dominance_worst_ratio']:.4f}, min tail margin = {tails:.2e}")


def test_criterion_05_bridge(insider_ensemble, eq_field, default_params):
    rep = bridge_report(insider_ensemble, eq_field, default_params)
    record(5, rep["pass"], f"KS(H(1,Y1), f(eta)) = {rep['ks']:.4f}, pinned fraction = "
                           f"{rep['pinned_fraction']:.4f}, max pin error = {rep['max_pin_error']:.1e}")


def test_criterion_06_filtration(mm_ensemble, equilibrium):
    ks = ks_distance(mm_ensemble.Y[:, -1], equilibrium.P_star.at)
    record(6, ks < 0.02, f"KS(mm-dynamics Y1, P*) = {ks:.4f} over {mm_ensemble.n_paths} paths")


def test_criterion_07_zero_utility_gain(insider_ensemble, eq_field, default_params):
    ens = insider_ensemble
    _, good = mm_utility_process(ens.times, ens.Y, ens.V, eq_field, default_params)
    _, bad = mm_utility_process(ens.times, ens.Y, ens.V, eq_field, default_params, tamper=1.2)
    ok = good["pass"] and not bad["pass"]
    record(7, ok, f"max|E U(G_t) + 1| = {good['max_abs_dev']:.2e} (worst z = {good['worst_z']:.2f}); "
                  f"tampered worst z = {bad['worst_z']:.1f}")


def test_criterion_08_optimality(insider_ensemble, eq_field, density_family, default_params,
                                 insider_wealth_and_psi):
    wealth, psi0 = insider_wealth_and_psi
    opt = optimality_report(insider_ensemble, eq_field, default_params, wealth, psi0)
    parts = [f"E W1 - E Psi0 = {opt['diff']:.4f} +/- {opt['diff_se']:.4f}"]
    ok = opt["pass"]
    for kind, value in (("kappa", 0.0), ("kappa", 0.5), ("kappa", 2.0), ("early_stop", 0.8)):
        r = suboptimality_probe(eq_field, density_family, default_params, kind, value, ENSEMBLE_PATHS,
                                seed=ENSEMBLE_SEED)
        ok &= r["consistent"] and r["strictly_positive"]
        parts.append(f"{kind}={value:g}: deficit {r['deficit']:.4f} +/- {r['deficit_se']:.4f}, "
                     f"gap {r['gap']:.1e} +/- {r['gap_se']:.1e}, E Psi(1,Y1) {r['margin']:.2e} "
                     f"+/- {r['margin_se']:.1e}")
    record(8, ok, "; ".join(parts))


def test_criterion_09_stylized_facts(insider_ensemble, eq_field, default_params):
    d = depth_diagnostics(insider_ensemble.times, insider_ensemble.Y, eq_field, default_params)
    ok = d["reverting"] and d["premise"] and d["nondecreasing"]
    record(9, ok, f"max mean-reversion statistic = {np.max(d['mean_reversion']):.3e}; mean H_y "
                  f"{d['mean_depth_inverse'][0]:.4f} -> {d['mean_depth_inverse'][-1]:.4f}, "
                  f"worst step z = {d['worst_step_z']:.2f}")


def test_criterion_10_density_cross_check(density_family, eq_field, default_params):
    worst_z = 0.0
    for k, (t, y, z) in enumerate(random_probes(default_params, 20, seed=ENSEMBLE_SEED)):
        mean, se = bridge_mc_r(eq_field, default_params, t, y, z, 4000, seed=ENSEMBLE_SEED + k)
        worst_z = max(worst_z, abs(float(density_family.r(t, y, z)) - mean) / se)
    rep = density_report(density_family)
    ok = worst_z <= 3.0 and rep["ck_pass"]
    record(10, ok, f"worst |PDE - MC| / SE = {worst_z:.2f} (20 probes); Chapman-Kolmogorov worst "
                   f"abs err = {rep['ck_worst']:.1e} (rel {rep['ck_worst_rel']:.1e})")


def test_criterion_11_determinism(tmp_path):
    runs = []
    for name in ("a", "b"):
        out = str(tmp_path / name)
        assert main(["solve", "--config", DEFAULT_CONF, "--out", out]) == EXIT_OK
        assert main(["simulate", "--bundle", out, "--paths", "2000", "--seed", "1"]) == EXIT_OK
        runs.append(out)
    csvs = []
    for sub in ("", "sim"):
        folder = os.path.join(runs[0], sub)
        csvs += [os.path.join(sub, f) for f in sorted(os.listdir(folder)) if f.endswith((".csv", ".txt"))
                 and f != "run.log"]
    same = [filecmp.cmp(os.path.join(runs[0], f), os.path.join(runs[1], f), shallow=False) for f in csvs]
    record(11, all(same), f"{sum(same)}/{len(csvs)} output files byte-identical across two runs")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
