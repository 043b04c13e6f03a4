"""Equilibrium bundles and ensemble exports on disk.

A bundle is a directory of text files plus ``index.sha256``, which lists every
data file with its content hash.  Timestamps go to ``run.log`` only, which is
not indexed, so identical inputs give byte-identical indexed files.
"""

from __future__ import annotations

import hashlib
import io
import os
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .cdf import Cdf
from .config import RunConfig
from .errors import IntegrityError
from .heat import PricingRuleField, solve_heat, terminal_from_cdf

INDEX = "index.sha256"
LOG = "run.log"
PARAMS = "params.txt"
P_STAR = "P_star.csv"
H_FIELD = "H_field.csv"
RESIDUALS = "residuals.csv"
D_REPORT = "d_report.txt"
STATUS = "status.txt"


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_kv(path, mapping: dict):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, v in mapping.items():
            fh.write(f"{k} = {format_value(v)}\n")


def read_kv(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and "=" in line:
                k, v = line.split("=", 1)
                out[k.strip()] = v.strip()
    return out


def write_csv(path, header, columns, int_columns=()):
    """Columns written with %.17g (integers as plain integers)."""
    cols = [np.asarray(c) for c in columns]
    fmt = ["%d" if i in int_columns else "%.17g" for i in range(len(cols))]
    buf = io.StringIO()
    np.savetxt(buf, np.column_stack(cols) if cols[0].size else np.empty((0, len(cols))),
               delimiter=",", header=",".join(header), comments="", fmt=fmt)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(buf.getvalue())


def read_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    return header, data


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_index(directory, names):
    lines = [f"{sha256_file(os.path.join(directory, n))}  {n}\n" for n in sorted(names)]
    with open(os.path.join(directory, INDEX), "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines)


def verify_index(directory) -> list[str]:
    """Check every indexed file; raise IntegrityError on any mismatch."""
    path = os.path.join(directory, INDEX)
    if not os.path.isfile(path):
        raise IntegrityError(f"{directory}: missing checksum index {INDEX}")
    names = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            digest, name = line.rstrip("\n").split("  ", 1)
            target = os.path.join(directory, name)
            if not os.path.isfile(target):
                raise IntegrityError(f"{directory}: indexed file {name} is missing")
            if sha256_file(target) != digest:
                raise IntegrityError(f"{directory}: checksum mismatch for {name}")
            names.append(name)
    return names


def append_log(directory, message: str):
    stamp = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    with open(os.path.join(directory, LOG), "a", encoding="utf-8") as fh:
        fh.write(f"{stamp} {message}\n")


def write_bundle(directory, cfg: RunConfig, result) -> list[str]:
    """Persist a fixed-point result; returns the indexed file names."""
    os.makedirs(directory, exist_ok=True)
    P = result.P_star
    with open(os.path.join(directory, PARAMS), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(cfg.to_text(exclude=("output.dir",)))
    write_csv(os.path.join(directory, P_STAR), ["y", "P", "Q", "density"], [P.y, P.P, P.Q, P.dens])
    export_field(os.path.join(directory, H_FIELD), result.field,
                 cfg["output.h_t_stride"], cfg["output.h_y_stride"])
    res = np.asarray(result.residuals, dtype=float)
    write_csv(os.path.join(directory, RESIDUALS), ["iteration", "residual"],
              [np.arange(1, res.size + 1), res], int_columns=(0,))
    rep = {k: v for k, v in result.d_report.items() if not isinstance(v, dict)}
    write_kv(os.path.join(directory, D_REPORT), rep)
    write_kv(os.path.join(directory, STATUS), {
        "converged": result.converged, "iterations": result.iterations,
        "final_residual": float(res[-1]), "damping": result.damping,
        "accelerated_steps": result.accelerated_steps,
        "diagnostic": result.diagnostic or "none",
    })
    names = [PARAMS, P_STAR, H_FIELD, RESIDUALS, D_REPORT, STATUS]
    write_index(directory, names)
    return names


def export_field(path, fld: PricingRuleField, t_stride: int, y_stride: int):
    times = fld.mesh[::t_stride]
    if times[-1] != fld.mesh[-1]:
        times = np.append(times, fld.mesh[-1])
    ys = fld.y[::y_stride]
    cols = [[], [], [], [], []]
    idx = np.arange(0, fld.y.size, y_stride)
    for t in times:
        H, Hy, Hyy = fld.row(t)
        cols[0].append(np.full(ys.size, t))
        cols[1].append(ys)
        cols[2].append(H[idx])
        cols[3].append(Hy[idx])
        cols[4].append(Hyy[idx])
    write_csv(path, ["t", "y", "H", "H_y", "H_yy"], [np.concatenate(c) for c in cols])


@dataclass
class Bundle:
    directory: str
    config: RunConfig
    P_star: Cdf
    residuals: np.ndarray
    status: dict
    d_report: dict
    _field: PricingRuleField | None = None

    @property
    def converged(self) -> bool:
        return self.status.get("converged") == "true"

    def field(self) -> PricingRuleField:
        """Pricing rule rebuilt from P_star (the same computation the solver ended with)."""
        if self._field is None:
            term = terminal_from_cdf(self.P_star, self.config.params().f_spec)
            self._field = solve_heat(term, self.config.params(), self.config.grid())
        return self._field


def load_bundle(directory) -> Bundle:
    if not os.path.isdir(directory):
        raise IntegrityError(f"bundle directory {directory} does not exist")
    verify_index(directory)
    cfg = RunConfig.from_mapping(read_kv(os.path.join(directory, PARAMS)))
    _, pdata = read_csv(os.path.join(directory, P_STAR))
    P = Cdf(pdata[:, 0], pdata[:, 1], pdata[:, 2], pdata[:, 3])
    _, rdata = read_csv(os.path.join(directory, RESIDUALS))
    return Bundle(directory, cfg, P, rdata[:, 1], read_kv(os.path.join(directory, STATUS)),
                  read_kv(os.path.join(directory, D_REPORT)))
