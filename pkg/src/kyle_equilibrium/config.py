"""Run configuration: flat ``dotted.key = value`` text files."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError, KyleError
from .model import GridSpec, ModelParams, ValueMap, build_params

KIND_ALIASES = {"tanh": "scaled_tanh", "scaled_tanh": "scaled_tanh",
                "normal_cdf": "scaled_normal_cdf", "scaled_normal_cdf": "scaled_normal_cdf",
                "table": "tabulated", "tabulated": "tabulated"}

REQUIRED = ("model.sigma", "model.rho", "model.n_mm")

# key -> (type, default); a default of None means "derived" or "absent"
SCHEMA = {
    "model.sigma": (float, None),
    "model.rho": (float, None),
    "model.n_mm": (int, None),
    "model.f.kind": (str, "tanh"),
    "model.f.a": (float, 1.0),
    "model.f.b": (float, 1.0),
    "model.f.m": (float, 0.0),
    "model.f.x": (list, None),
    "model.f.y": (list, None),
    "grid.y_max": (float, None),
    "grid.n_y": (int, 801),
    "grid.n_t": (int, 400),
    "grid.eps_terminal": (float, 2.5e-3),
    "grid.n_z": (int, 101),
    "fixed_point.damping": (float, 0.5),
    "fixed_point.tol": (float, 1e-4),
    "fixed_point.max_iter": (int, 200),
    "fixed_point.multi_start": (bool, False),
    "fixed_point.anderson": (bool, False),
    "mc.paths": (int, 10000),
    "mc.steps": (int, None),
    "mc.seed": (int, 1),
    "output.dir": (str, None),
    "output.h_t_stride": (int, 10),
    "output.h_y_stride": (int, 4),
    "output.paths_export": (int, 100),
    "output.time_stride": (int, 1),
}


def parse_text(text: str) -> dict:
    """Raw ``key -> string`` mapping; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _convert(key, kind, raw):
    try:
        if kind is bool:
            low = str(raw).strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            val = float(raw)
            if val != int(val):
                raise ValueError(raw)
            return int(val)
        if kind is float:
            val = float(raw)
            if not math.isfinite(val):
                raise ValueError(raw)
            return val
        if kind is list:
            items = raw if isinstance(raw, (list, tuple)) else str(raw).split(",")
            return [float(x) for x in items]
        return str(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot read {raw!r} as {kind.__name__}") from None


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ",".join(repr(float(v)) for v in value)
    return str(value)


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def from_mapping(cls, raw: dict) -> "RunConfig":
        unknown = sorted(set(raw) - set(SCHEMA))
        if unknown:
            raise ConfigError(f"{unknown[0]}: unknown configuration key")
        for key in REQUIRED:
            if key not in raw:
                raise ConfigError(f"{key}: required key is missing")
        vals = {}
        for key, (kind, default) in SCHEMA.items():
            vals[key] = _convert(key, kind, raw[key]) if key in raw else default
        cfg = cls(vals)
        cfg.validate()
        return cfg

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        return cls.from_mapping(parse_text(text))

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read configuration file {path}: {exc.strerror}") from None
        return cls.from_text(text)

    def to_text(self, exclude=()) -> str:
        """Canonical form: every key that has a value, sorted."""
        lines = [f"{k} = {_format(v)}" for k, v in sorted(self.values.items())
                 if v is not None and k not in exclude]
        return "\n".join(lines) + "\n"

    def with_overrides(self, **dotted) -> "RunConfig":
        vals = dict(self.values)
        for key, value in dotted.items():
            if value is not None:
                vals[key] = _convert(key, SCHEMA[key][0], value)
        cfg = RunConfig(vals)
        cfg.validate()
        return cfg

    # -------------------------------------------------------------- derived objects

    def value_map(self) -> ValueMap:
        v = self.values
        kind = KIND_ALIASES.get(v["model.f.kind"])
        if kind is None:
            raise ConfigError(f"model.f.kind: unknown kind {v['model.f.kind']!r}; "
                              f"expected one of tanh, normal_cdf, tabulated")
        try:
            if kind == "scaled_tanh":
                return ValueMap.tanh(v["model.f.a"], v["model.f.b"], v["model.f.m"])
            if kind == "scaled_normal_cdf":
                return ValueMap.normal_cdf(v["model.f.a"], v["model.f.m"])
            if v["model.f.x"] is None or v["model.f.y"] is None:
                missing = "model.f.x" if v["model.f.x"] is None else "model.f.y"
                raise ConfigError(f"{missing}: required for a tabulated value map")
            return ValueMap.table(v["model.f.x"], v["model.f.y"])
        except ConfigError:
            raise
        except KyleError as exc:
            raise ConfigError(f"model.f: {exc}") from None

    def params(self) -> ModelParams:
        v = self.values
        try:
            return build_params(v["model.sigma"], v["model.rho"], v["model.n_mm"], self.value_map())
        except ConfigError:
            raise
        except KyleError as exc:
            raise ConfigError(f"model: {exc}") from None

    def grid(self) -> GridSpec:
        v = self.values
        y_max = v["grid.y_max"] if v["grid.y_max"] is not None else 8.0 * v["model.sigma"]
        try:
            return GridSpec(y_max=y_max, n_y=v["grid.n_y"], n_t=v["grid.n_t"], eps_terminal=v["grid.eps_terminal"])
        except KyleError as exc:
            raise ConfigError(f"grid: {exc}") from None

    def validate(self):
        v = self.values
        self.params()
        grid = self.grid()
        if v["grid.n_z"] < 4:
            raise ConfigError("grid.n_z: need at least 4 terminal points")
        if 6.0 * v["model.sigma"] >= grid.y_max:
            raise ConfigError("grid.y_max: must exceed the terminal-point span of 6 sigma")
        if not (0.0 < v["fixed_point.damping"] <= 1.0):
            raise ConfigError("fixed_point.damping: must lie in (0, 1]")
        if not v["fixed_point.tol"] > 0.0:
            raise ConfigError("fixed_point.tol: must be positive")
        if v["fixed_point.max_iter"] < 1:
            raise ConfigError("fixed_point.max_iter: must be at least 1")
        if v["mc.paths"] < 1:
            raise ConfigError(f"mc.paths: must be a positive integer, got {v['mc.paths']}")
        if v["mc.steps"] is not None and v["mc.steps"] < 4:
            raise ConfigError("mc.steps: must be at least 4")
        if v["mc.seed"] < 0:
            raise ConfigError("mc.seed: must be non-negative")
        for key in ("output.h_t_stride", "output.h_y_stride", "output.time_stride"):
            if v[key] < 1:
                raise ConfigError(f"{key}: must be at least 1")
        if v["output.paths_export"] < 0:
            raise ConfigError("output.paths_export: must be non-negative")
