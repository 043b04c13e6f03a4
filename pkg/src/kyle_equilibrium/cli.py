"""Command-line front end: ``kyle-eq solve | simulate | verify | plot``.

Exit codes: 0 success, 1 usage/configuration/integrity error, 2 the solver
did not converge (or a numerical failure stopped it), 3 a verification check
failed.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import bundle as bd
from .config import RunConfig
from .errors import ConfigError, InputError, IntegrityError, KyleError, ParameterError
from .fixed_point import apply_T, solve_fixed_point, solve_multi_start
from .forward import validate_in_D
from .heat import field_bound_report
from .model import default_workers, gauss_density
from .simulation import (bridge_report, depth_diagnostics, ensemble_wealth, ks_distance, ks_two_sample,
                         mm_utility_process, optimality_report, psi_value, simulate_insider_paths,
                         simulate_mm_paths, suboptimality_probe)
from .svg import LineChart
from .transition import (backward_density_family, bridge_mc_r, default_z_grid, density_report,
                         random_probes)

EXIT_OK, EXIT_USAGE, EXIT_NONCONVERGED, EXIT_VERIFY = 0, 1, 2, 3
SUITES = ("bounds", "bridge", "martingale", "profit", "depth", "density", "all")
PLOTS = ("pricing_rule", "depth", "density", "residuals", "utility_martingale", "sample_paths")
SIM_DIR = "sim"
PERTURBATIONS = (("kappa", 0.0), ("kappa", 0.5), ("kappa", 2.0), ("early_stop", 0.8))


class UsageError(KyleError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kyle-eq", description="Kyle equilibrium with risk-averse market makers")
    parser.add_argument("--workers", type=int, default=None,
                        help="worker threads for path simulation (default: $KYLE_EQ_WORKERS or 1)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve the fixed point and write an equilibrium bundle")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="bundle directory (default: output.dir from the config)")

    p = sub.add_parser("simulate", help="simulate insider and market-maker ensembles from a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--paths", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help=f"ensemble directory (default: BUNDLE/{SIM_DIR})")

    p = sub.add_parser("verify", help="run verification suites against a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--suite", required=True, help=f"one of {', '.join(SUITES)}")
    p.add_argument("--paths", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--tamper-hy", type=float, default=1.0,
                   help="scale the pricing rule used in the market-maker account (negative control)")
    p.add_argument("--report", help="also write the report to this file")

    p = sub.add_parser("plot", help="write an SVG chart")
    p.add_argument("--bundle", required=True)
    p.add_argument("--what", required=True, help=f"one of {', '.join(PLOTS)}")
    p.add_argument("--out", required=True)
    p.add_argument("--sim", help=f"ensemble directory (default: BUNDLE/{SIM_DIR})")
    return parser


# ------------------------------------------------------------------ solve

def cmd_solve(args, workers) -> int:
    cfg = RunConfig.from_file(args.config)
    out = args.out or cfg["output.dir"]
    if not out:
        raise ConfigError("output.dir: no output directory (pass --out or set output.dir)")
    params, grid = cfg.params(), cfg.grid()
    opts = dict(damping=cfg["fixed_point.damping"], tol=cfg["fixed_point.tol"],
                max_iter=cfg["fixed_point.max_iter"], anderson=cfg["fixed_point.anderson"])
    result = solve_fixed_point(params, grid, **opts)
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output.dir: cannot create {out}: {exc.strerror}") from None
    bd.write_bundle(out, cfg, result)
    if cfg["fixed_point.multi_start"]:
        multi = solve_multi_start(params, grid, workers=workers, **opts)
        bd.write_kv(os.path.join(out, "multi_start.txt"), {
            "spread": multi["spread"], "all_converged": multi["all_converged"],
            "iterations": ",".join(map(str, multi["iterations"]))})
        bd.write_index(out, bd.verify_index(out) + ["multi_start.txt"])
    bd.append_log(out, f"solve converged={result.converged} iterations={result.iterations}")
    print(f"converged = {'true' if result.converged else 'false'}")
    print(f"iterations = {result.iterations}")
    print(f"final_residual = {result.residuals[-1]:.6g}")
    print(f"in_D = {'true' if result.d_report.get('in_D') else 'false'}")
    print(f"bundle = {out}")
    if not result.converged:
        print(f"diagnostic = {result.diagnostic}", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


# ------------------------------------------------------------------ shared context

class Context:
    """Lazily computed objects shared by the simulate and verify commands."""

    def __init__(self, bundle: bd.Bundle, cfg: RunConfig, workers: int):
        self.bundle = bundle
        self.cfg = cfg
        self.params = cfg.params()
        self.grid = cfg.grid()
        self.workers = workers
        self._cache = {}

    def _get(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    @property
    def field(self):
        return self._get("field", self.bundle.field)

    @property
    def tdf(self):
        z = default_z_grid(self.params, self.cfg["grid.n_z"])
        return self._get("tdf", lambda: backward_density_family(self.field, self.params, z_grid=z))

    @property
    def paths(self) -> int:
        return self.cfg["mc.paths"]

    @property
    def steps(self):
        return self.cfg["mc.steps"]

    @property
    def seed(self) -> int:
        return self.cfg["mc.seed"]

    @property
    def insider(self):
        return self._get("insider", lambda: simulate_insider_paths(
            self.field, self.tdf, self.params, self.paths, n_steps=self.steps, seed=self.seed,
            workers=self.workers))

    @property
    def mm(self):
        return self._get("mm", lambda: simulate_mm_paths(
            self.field, self.params, self.paths, n_steps=self.steps, seed=self.seed, workers=self.workers))

    @property
    def wealth(self):
        return self._get("wealth", lambda: ensemble_wealth(self.insider, self.field))

    @property
    def psi0(self):
        return self._get("psi0", lambda: psi_value(self.field, self.params, self.insider.V))


def _mc_overrides(args, cfg: RunConfig) -> RunConfig:
    for name in ("paths", "steps", "seed"):
        val = getattr(args, name, None)
        if val is not None and name in ("paths", "steps") and val < 1:
            raise ConfigError(f"mc.{name}: must be a positive integer, got {val}")
    return cfg.with_overrides(**{"mc.paths": args.paths, "mc.steps": args.steps, "mc.seed": args.seed})


def _open(args, workers):
    b = bd.load_bundle(args.bundle)
    return Context(b, _mc_overrides(args, b.config), workers)


# ------------------------------------------------------------------ simulate

def cmd_simulate(args, workers) -> int:
    ctx = _open(args, workers)
    out = args.out or os.path.join(args.bundle, SIM_DIR)
    os.makedirs(out, exist_ok=True)
    fld, ens = ctx.field, ctx.insider
    ids = np.arange(ens.n_paths)
    bd.write_csv(os.path.join(out, "terminal.csv"), ["path_id", "eta", "V", "Y1", "H1Y1", "W1"],
                 [ids, ens.eta, ens.V, ens.Y1, fld.H_at(1.0, ens.Y1), ctx.wealth], int_columns=(0,))
    n_exp = min(ctx.cfg["output.paths_export"], ens.n_paths)
    cols = np.arange(0, ens.times.size, ctx.cfg["output.time_stride"])
    if cols[-1] != ens.times.size - 1:
        cols = np.append(cols, ens.times.size - 1)
    bd.write_csv(os.path.join(out, "paths.csv"), ["path_id", "t", "Y", "X"],
                 [np.repeat(ids[:n_exp], cols.size), np.tile(ens.times[cols], n_exp),
                  ens.Y[:n_exp][:, cols].ravel(), ens.X[:n_exp][:, cols].ravel()], int_columns=(0,))
    _, mart = mm_utility_process(ens.times, ens.Y, ens.V, fld, ctx.params)
    bd.write_csv(os.path.join(out, "utility.csv"), ["t", "mean_U", "se"], [ens.times, mart["mean"], mart["se"]])
    depth = depth_diagnostics(ens.times, ens.Y, fld, ctx.params, n_check=41)
    bd.write_csv(os.path.join(out, "depth.csv"), ["t", "mean_H_y", "se"],
                 [depth["times"], depth["mean_depth_inverse"], depth["se"]])
    mm = ctx.mm
    bd.write_csv(os.path.join(out, "mm_terminal.csv"), ["path_id", "Y1"], [ids, mm.Y[:, -1]], int_columns=(0,))
    bd.write_kv(os.path.join(out, "sim_params.txt"), {
        "paths": ctx.paths, "steps": ctx.steps if ctx.steps is not None else "mesh", "seed": ctx.seed,
        "time_nodes": ens.times.size})
    names = ["terminal.csv", "paths.csv", "utility.csv", "depth.csv", "mm_terminal.csv", "sim_params.txt"]
    bd.write_index(out, names)
    bd.append_log(out, f"simulate paths={ctx.paths} seed={ctx.seed}")
    print(f"paths = {ens.n_paths}")
    print(f"ensemble = {out}")
    return EXIT_OK


# ------------------------------------------------------------------ verify

def _suite_bounds(ctx: Context, rep: dict):
    fld, prm = ctx.field, ctx.params
    problems = field_bound_report(fld)
    rep["bounds.field_problems"] = "; ".join(problems) or "none"
    rep["bounds.field.pass"] = not problems
    tau = 1.0 - fld.times
    ratio = float(np.max(fld.Hy * np.sqrt(tau)[:, None]))
    rep["bounds.max_Hy_sqrt_tau"] = ratio
    rep["bounds.C"] = prm.big_c
    rep["bounds.Hy_sqrt_tau.pass"] = ratio <= prm.big_c + 1e-6
    d = validate_in_D(ctx.bundle.P_star, prm)
    rep["bounds.dominance_worst_ratio"] = d["dominance_worst_ratio"]
    rep["bounds.dominance.pass"] = d["dominance"]
    rep["bounds.upper_tail_margin"] = d["upper_tail_margin"]
    rep["bounds.lower_tail_margin"] = d["lower_tail_margin"]
    rep["bounds.tails.pass"] = d["upper_tail"] and d["lower_tail"]
    resid = ctx.bundle.P_star.sup_distance(apply_T(ctx.bundle.P_star, prm, ctx.grid))
    rep["bounds.fixed_point_residual"] = resid
    rep["bounds.fixed_point_residual.pass"] = resid <= ctx.cfg["fixed_point.tol"] * (1.0 + 1e-9)


def _suite_bridge(ctx: Context, rep: dict):
    br = bridge_report(ctx.insider, ctx.field, ctx.params)
    rep["bridge.ks_price_vs_value"] = br["ks"]
    rep["bridge.ks.pass"] = br["ks_pass"]
    rep["bridge.pinned_fraction"] = br["pinned_fraction"]
    rep["bridge.pinning.pass"] = br["pin_pass"]
    rep["bridge.reconstruction_error"] = br["reconstruction_error"]
    rep["bridge.reconstruction.pass"] = br["reconstruction_error"] <= 1e-12
    ks_mm = ks_distance(ctx.mm.Y[:, -1], ctx.bundle.P_star.at)
    rep["bridge.ks_mm_terminal_vs_P_star"] = ks_mm
    rep["bridge.filtration.pass"] = ks_mm < 0.02
    j = int(np.searchsorted(ctx.insider.times, 0.5))
    rep["bridge.ks_insider_vs_mm_at_half"] = ks_two_sample(ctx.insider.Y[:, j], ctx.mm.Y[:, j])


def _suite_martingale(ctx: Context, rep: dict, tamper: float):
    ens = ctx.insider
    _, m = mm_utility_process(ens.times, ens.Y, ens.V, ctx.field, ctx.params, tamper=tamper)
    rep["martingale.tamper_factor"] = tamper
    rep["martingale.max_abs_dev"] = m["max_abs_dev"]
    rep["martingale.worst_z"] = m["worst_z"]
    rep["martingale.worst_t"] = m["worst_t"]
    rep["martingale.pass"] = m["pass"]


def _suite_profit(ctx: Context, rep: dict):
    opt = optimality_report(ctx.insider, ctx.field, ctx.params, ctx.wealth, ctx.psi0)
    rep["profit.mean_wealth"] = opt["mean_wealth"]
    rep["profit.mean_psi0"] = opt["mean_psi0"]
    rep["profit.diff"] = opt["diff"]
    rep["profit.diff_se"] = opt["diff_se"]
    rep["profit.optimal.pass"] = opt["pass"]
    rep["profit.identity_rms"] = opt["identity_rms"]
    for kind, val in PERTURBATIONS:
        r = suboptimality_probe(ctx.field, ctx.tdf, ctx.params, kind, val, ctx.paths, seed=ctx.seed,
                                n_steps=ctx.steps, workers=ctx.workers)
        tag = f"profit.{kind}_{val:g}"
        rep[f"{tag}.deficit"] = r["deficit"]
        rep[f"{tag}.margin"] = r["margin"]
        rep[f"{tag}.margin_se"] = r["margin_se"]
        rep[f"{tag}.gap_se"] = r["gap_se"]
        rep[f"{tag}.pass"] = r["consistent"] and r["strictly_positive"]


def _suite_depth(ctx: Context, rep: dict):
    d = depth_diagnostics(ctx.insider.times, ctx.insider.Y, ctx.field, ctx.params)
    rep["depth.premise_odd_concave"] = d["premise"]
    rep["depth.worst_step_z"] = d["worst_step_z"]
    rep["depth.total_change"] = d["total_change"]
    if d["premise"]:
        rep["depth.nondecreasing.pass"] = d["nondecreasing"]
    rep["depth.max_mean_reversion"] = float(np.max(d["mean_reversion"]))
    rep["depth.mean_reversion.pass"] = d["reverting"]


def _suite_density(ctx: Context, rep: dict):
    tdf = ctx.tdf
    d = density_report(tdf)
    rep["density.normalization_err"] = d["normalization_err"]
    rep["density.normalization.pass"] = d["normalization_err"] <= 1e-4
    rep["density.r_bound.pass"] = d["r_bound"]
    rep["density.ck_worst"] = d["ck_worst"]
    rep["density.ck_worst_rel"] = d["ck_worst_rel"]
    rep["density.ck.pass"] = d["ck_pass"]
    worst = 0.0
    for k, (t, y, z) in enumerate(random_probes(ctx.params, 20, ctx.seed)):
        m, se = bridge_mc_r(ctx.field, ctx.params, t, y, z, 4000, seed=ctx.seed + k, workers=ctx.workers)
        worst = max(worst, abs(float(tdf.r(t, y, z)) - m) / se)
    rep["density.bridge_mc_worst_z"] = worst
    rep["density.bridge_mc.pass"] = worst <= 3.0


def cmd_verify(args, workers) -> int:
    if args.suite not in SUITES:
        raise UsageError(f"unknown suite {args.suite!r}; valid suites: {', '.join(SUITES)}")
    if not (math.isfinite(args.tamper_hy) and args.tamper_hy > 0):
        raise UsageError("--tamper-hy must be a positive number")
    ctx = _open(args, workers)
    rep = {"suite": args.suite}
    chosen = SUITES[:-1] if args.suite == "all" else (args.suite,)
    for name in chosen:
        if name == "martingale":
            _suite_martingale(ctx, rep, args.tamper_hy)
        else:
            globals()[f"_suite_{name}"](ctx, rep)
    ok = all(v for k, v in rep.items() if k.endswith(".pass"))
    rep["overall.pass"] = ok
    lines = [f"{k} = {bd.format_value(v)}" for k, v in rep.items()]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.report:
        with open(args.report, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return EXIT_OK if ok else EXIT_VERIFY


# ------------------------------------------------------------------ plot

def _sim_file(args, name):
    path = os.path.join(args.sim or os.path.join(args.bundle, SIM_DIR), name)
    if not os.path.isfile(path):
        raise InputError(f"plot '{args.what}' needs a simulated ensemble ({path} not found); "
                         f"run 'kyle-eq simulate --bundle {args.bundle}' first")
    bd.verify_index(os.path.dirname(path))
    return bd.read_csv(path)[1]


def cmd_plot(args, workers) -> int:
    if args.what not in PLOTS:
        raise UsageError(f"unknown plot {args.what!r}; valid values: {', '.join(PLOTS)}")
    b = bd.load_bundle(args.bundle)
    prm = b.config.params()
    sig = prm.sigma
    if args.what == "pricing_rule":
        fld = b.field()
        ys = np.linspace(-4 * sig, 4 * sig, 401)
        chart = LineChart("Pricing rule H(t, y)", "cumulative demand y", "price")
        for t in (0.0, 0.5, 0.9, 1.0):
            chart.add(ys, fld.H_at(t, ys), f"t = {t:g}")
    elif args.what == "density":
        P = b.P_star
        mask = np.abs(P.y) <= 5 * sig
        chart = LineChart("Terminal demand density", "y", "density")
        chart.add(P.y[mask], P.dens[mask], "fixed point")
        chart.add(P.y[mask], gauss_density(sig ** 2, P.y[mask]), "Gaussian noise only", dashed=True)
        chart.add(P.y[mask], prm.c_star * gauss_density(sig ** 2, P.y[mask]), "dominance cap", dashed=True)
    elif args.what == "residuals":
        chart = LineChart("Fixed-point residuals", "iteration", "sup-norm residual", log_y=True)
        chart.add(np.arange(1, b.residuals.size + 1), b.residuals, "||T P - P||")
    elif args.what == "depth":
        d = _sim_file(args, "depth.csv")
        chart = LineChart("Inverse market depth along insider paths", "t", "mean H_y(t, Y_t)")
        chart.add(d[:, 0], d[:, 1], "mean", band=(d[:, 1] - 3 * d[:, 2], d[:, 1] + 3 * d[:, 2]))
    elif args.what == "utility_martingale":
        d = _sim_file(args, "utility.csv")
        chart = LineChart("Market-maker utility", "t", "mean U(G_t)")
        chart.add(d[:, 0], d[:, 1], "mean +/- 3 SE", band=(d[:, 1] - 3 * d[:, 2], d[:, 1] + 3 * d[:, 2]))
        chart.add(d[:, 0], np.full(d.shape[0], -1.0), "U(G_0) = -1", dashed=True)
    else:
        d = _sim_file(args, "paths.csv")
        chart = LineChart("Sample demand paths", "t", "Y_t")
        for pid in np.unique(d[:, 0])[:8]:
            rows = d[d[:, 0] == pid]
            chart.add(rows[:, 1], rows[:, 2], f"path {int(pid)}")
    chart.save(args.out)
    print(f"plot = {args.out}")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "verify": cmd_verify, "plot": cmd_plot}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        workers = args.workers if args.workers is not None else default_workers()
        if workers < 1:
            raise UsageError("--workers must be at least 1")
        return COMMANDS[args.command](args, workers)
    except (UsageError, ConfigError, IntegrityError, InputError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KyleError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
