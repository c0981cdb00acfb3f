"""YAML run configuration: strict schema, line-numbered diagnostics, echo.

A configuration document has three top-level keys::

    schema_version: 1
    model:
      measure: {type: poisson, z: 1.0}          # poisson | gamma | density
      kappa: {type: constant, value: 1.0}       # constant | callable
      initial_curve: {type: floor, base: 0.0}   # floor | constant | affine | table
      gaussian: {type: none}                    # none | brownian_sheet | user_grid
      horizon: [2.0, 2.0]
      trunc_eps: auto                           # or a number >= 0
      drift_mode: ClosedForm                    # ClosedForm | Quadrature | CrossCheck | Zero
    run:
      n_paths: 10000
      seed: 20240917
      workers: 1
      ...

Functions of ``tau`` (densities), ``(x, y)`` (scalings) and ``(s, t1, t2)``
(tabulated covariances) are numpy expressions such as ``"exp(-tau)/tau"``.
They are parsed with :mod:`ast` and may only use arithmetic, comparisons
and the whitelisted functions in :data:`EXPR_FUNCTIONS`.
"""

from __future__ import annotations

import ast
import copy
import math
from dataclasses import dataclass
from typing import Any

import numpy as np
import yaml

from . import drift as dr
from .levy_measure import GammaDensity, PointMass, UserDensity
from .montecarlo import DEFAULT_SEED
from .random_fields import CallableKappa, ConstantKappa
from .term_structure import DRIFT_MODES, ModelSpec

__all__ = ["SCHEMA_VERSION", "ConfigError", "RunConfig", "parse_config", "load_config", "compile_expr",
           "build_model", "dump_config"]

SCHEMA_VERSION = 1

EXPR_FUNCTIONS = {
    name: getattr(np, name)
    for name in ("sin", "cos", "tan", "exp", "expm1", "log", "log1p", "sqrt", "abs", "tanh", "arctan",
                 "minimum", "maximum", "where", "power", "heaviside", "clip")
}
EXPR_CONSTANTS = {"pi": math.pi, "e": math.e}
_EXPR_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Compare, ast.Call, ast.Name, ast.Load, ast.Constant,
               ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.Mod, ast.FloorDiv, ast.USub, ast.UAdd,
               ast.Lt, ast.LtE, ast.Gt, ast.GtE, ast.Eq, ast.NotEq)


class ConfigError(ValueError):
    """Invalid configuration; the message names the key and, when known, the line."""


def compile_expr(text, variables):
    """Compile a numpy expression of ``variables`` into a vectorised function.

    The result always has the broadcast shape of its arguments, so constant
    expressions such as ``"2"`` work as well.
    """
    if not isinstance(text, str) or not text.strip():
        raise ValueError("expression must be a non-empty string")
    tree = ast.parse(text.strip(), mode="eval")
    allowed = set(variables) | set(EXPR_FUNCTIONS) | set(EXPR_CONSTANTS)
    for node in ast.walk(tree):
        if not isinstance(node, _EXPR_NODES):
            raise ValueError(f"unsupported syntax {type(node).__name__} in expression {text!r}")
        if isinstance(node, ast.Name) and node.id not in allowed:
            raise ValueError(f"unknown name {node.id!r} in expression {text!r}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in EXPR_FUNCTIONS):
            raise ValueError(f"only whitelisted functions may be called in {text!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ValueError(f"only numeric constants are allowed in {text!r}")
    code = compile(tree, "<expr>", "eval")
    env = {"__builtins__": {}, **EXPR_FUNCTIONS, **EXPR_CONSTANTS}

    def func(*args):
        arrays = [np.asarray(a, dtype=float) for a in args]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = eval(code, env, dict(zip(variables, arrays)))  # noqa: S307 - AST-whitelisted above
        shape = np.broadcast(*arrays).shape if arrays else ()
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()

    func.__name__ = f"expr<{text}>"
    return func


# ------------------------------------------------------------------ parsing


class _Lines:
    """Line numbers of every key path in a composed YAML document."""

    def __init__(self, node):
        self.lines = {}
        self._walk(node, ())

    def _walk(self, node, path):
        self.lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = k.value
                self.lines[path + (key,)] = k.start_mark.line + 1
                self._walk(v, path + (key,))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                self._walk(v, path + (i,))

    def at(self, path):
        path = tuple(path)
        while path and path not in self.lines:
            path = path[:-1]
        return self.lines.get(path)


class _Checker:
    def __init__(self, lines):
        self.lines = lines

    def fail(self, path, msg):
        key = ".".join(str(p) for p in path) or "<document>"
        line = self.lines.at(path) if self.lines else None
        where = f" (line {line})" if line else ""
        raise ConfigError(f"{key}: {msg}{where}")

    def mapping(self, data, path, allowed, required=()):
        if not isinstance(data, dict):
            self.fail(path, "expected a mapping")
        for k in data:
            if k not in allowed:
                self.fail(path + (k,), f"unknown key (allowed: {', '.join(sorted(allowed))})")
        for k in required:
            if k not in data:
                self.fail(path, f"missing required key {k!r}")
        return data

    def number(self, value, path, *, positive=False, nonneg=False, integer=False):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(path, f"expected a number, got {value!r}")
        if integer and not float(value).is_integer():
            self.fail(path, f"expected an integer, got {value!r}")
        if not math.isfinite(value):
            self.fail(path, "must be finite")
        if positive and not value > 0:
            self.fail(path, "must be positive")
        if nonneg and value < 0:
            self.fail(path, "must be nonnegative")
        return int(value) if integer else float(value)

    def numbers(self, data, path, length=None, **kw):
        if not isinstance(data, list):
            self.fail(path, "expected a list of numbers")
        if length is not None and len(data) != length:
            self.fail(path, f"expected {length} numbers")
        return [self.number(v, path + (i,), **kw) for i, v in enumerate(data)]

    def choice(self, data, path, options):
        if data not in options:
            self.fail(path, f"must be one of {', '.join(map(str, options))}, got {data!r}")
        return data


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration: the normalised ``model`` and ``run`` sections."""

    schema_version: int
    model: dict
    run: dict

    def as_dict(self):
        return {"schema_version": self.schema_version, "model": copy.deepcopy(self.model),
                "run": copy.deepcopy(self.run)}


_RUN_KEYS = {"n_paths", "seed", "workers", "z_crit", "precision", "simulate", "drift_table", "price", "validate"}
_TESTS = {
    "martingale": ({"t", "s"}, {"n_paths", "z_crit", "name"}),
    "identity6": ({"s2", "s1", "t"}, {"n_paths", "z_crit", "name"}),
    "ige": ({"triples"}, {"tol", "seed", "name"}),
    "cf": ({"s", "t", "lambdas"}, {"n_paths", "z_crit", "simulate_scale", "name"}),
    "variance": ({"points"}, {"n_paths", "z_crit", "truncated", "simulate_scale", "name"}),
    "positivity": (set(), {"grid", "n_paths", "name"}),
}


def _grid_spec(ck, data, path, limit):
    """A coordinate list or ``{num: n}`` (uniform on ``[0, limit]``)."""
    if isinstance(data, dict):
        ck.mapping(data, path, {"num"}, ("num",))
        n = ck.number(data["num"], path + ("num",), integer=True, positive=True)
        if n < 2:
            ck.fail(path + ("num",), "need at least 2 points")
        return {"num": n}
    vals = ck.numbers(data, path, nonneg=True)
    if not vals or any(v > limit for v in vals):
        ck.fail(path, f"coordinates must lie in [0, {limit}]")
    return vals


def grid_values(spec, limit):
    if isinstance(spec, dict):
        return np.linspace(0.0, limit, spec["num"])
    return np.asarray(spec, dtype=float)


def _check_model(ck, m):
    p = ("model",)
    ck.mapping(m, p, {"measure", "kappa", "initial_curve", "gaussian", "horizon", "trunc_eps", "drift_mode"},
               ("measure", "horizon"))
    out = {}
    meas = ck.mapping(m["measure"], p + ("measure",), {"type", "z", "a", "density", "upper"}, ("type",))
    mp = p + ("measure",)
    kind = ck.choice(meas["type"], mp + ("type",), ("poisson", "gamma", "density"))
    if kind == "poisson":
        ck.mapping(meas, mp, {"type", "z", "a"}, ("z",))
        out["measure"] = {"type": kind, "z": ck.number(meas["z"], mp + ("z",)),
                          "a": ck.number(meas.get("a", 1.0), mp + ("a",), positive=True)}
    elif kind == "gamma":
        ck.mapping(meas, mp, {"type", "z"}, ("z",))
        out["measure"] = {"type": kind, "z": ck.number(meas["z"], mp + ("z",))}
    else:
        ck.mapping(meas, mp, {"type", "density", "upper"}, ("density",))
        upper = meas.get("upper")
        out["measure"] = {"type": kind, "density": meas["density"],
                          "upper": None if upper is None else ck.number(upper, mp + ("upper",), positive=True)}
    if "z" in out["measure"] and out["measure"]["z"] < 0:
        ck.fail(mp + ("z",), "intensity must be positive")

    kp = p + ("kappa",)
    kap = m.get("kappa", {"type": "constant", "value": 1.0})
    if isinstance(kap, (int, float)) and not isinstance(kap, bool):
        kap = {"type": "constant", "value": kap}
    ck.mapping(kap, kp, {"type", "value", "expr", "bound"}, ("type",))
    kkind = ck.choice(kap["type"], kp + ("type",), ("constant", "callable"))
    if kkind == "constant":
        ck.mapping(kap, kp, {"type", "value"}, ("value",))
        out["kappa"] = {"type": kkind, "value": ck.number(kap["value"], kp + ("value",), nonneg=True)}
    else:
        ck.mapping(kap, kp, {"type", "expr", "bound"}, ("expr", "bound"))
        out["kappa"] = {"type": kkind, "expr": kap["expr"],
                        "bound": ck.number(kap["bound"], kp + ("bound",), nonneg=True)}

    cp = p + ("initial_curve",)
    cur = ck.mapping(m.get("initial_curve", {"type": "floor"}), cp,
                     {"type", "base", "value", "intercept", "slope", "t", "mu"}, ("type",))
    ckind = ck.choice(cur["type"], cp + ("type",), ("floor", "constant", "affine", "table"))
    if ckind == "floor":
        ck.mapping(cur, cp, {"type", "base"})
        out["initial_curve"] = {"type": ckind, "base": ck.number(cur.get("base", 0.0), cp + ("base",), nonneg=True)}
    elif ckind == "constant":
        ck.mapping(cur, cp, {"type", "value"}, ("value",))
        out["initial_curve"] = {"type": ckind, "value": ck.number(cur["value"], cp + ("value",))}
    elif ckind == "affine":
        ck.mapping(cur, cp, {"type", "intercept", "slope"}, ("intercept", "slope"))
        out["initial_curve"] = {"type": ckind, "intercept": ck.number(cur["intercept"], cp + ("intercept",)),
                                "slope": ck.number(cur["slope"], cp + ("slope",))}
    else:
        ck.mapping(cur, cp, {"type", "t", "mu"}, ("t", "mu"))
        ts = ck.numbers(cur["t"], cp + ("t",), nonneg=True)
        mus = ck.numbers(cur["mu"], cp + ("mu",), length=len(ts))
        out["initial_curve"] = {"type": ckind, "t": ts, "mu": mus}

    gp = p + ("gaussian",)
    gau = ck.mapping(m.get("gaussian", {"type": "none"}), gp,
                     {"type", "steps", "s_grid", "t_grid", "values", "expr"}, ("type",))
    gkind = ck.choice(gau["type"], gp + ("type",), ("none", "brownian_sheet", "user_grid"))
    if gkind == "none":
        ck.mapping(gau, gp, {"type"})
        out["gaussian"] = {"type": gkind}
    elif gkind == "brownian_sheet":
        ck.mapping(gau, gp, {"type", "steps"})
        steps = ck.numbers(gau.get("steps", [100, 100]), gp + ("steps",), length=2, integer=True, positive=True)
        out["gaussian"] = {"type": gkind, "steps": steps}
    else:
        ck.mapping(gau, gp, {"type", "s_grid", "t_grid", "values", "expr"}, ("s_grid", "t_grid"))
        if ("values" in gau) == ("expr" in gau):
            ck.fail(gp, "user_grid needs exactly one of 'values' or 'expr'")
        g = {"type": gkind, "s_grid": ck.numbers(gau["s_grid"], gp + ("s_grid",), nonneg=True),
             "t_grid": ck.numbers(gau["t_grid"], gp + ("t_grid",), nonneg=True)}
        if "expr" in gau:
            g["expr"] = gau["expr"]
        else:
            g["values"] = gau["values"]
        out["gaussian"] = g

    S, T = ck.numbers(m["horizon"], p + ("horizon",), length=2, positive=True)
    out["horizon"] = [S, T]
    eps = m.get("trunc_eps", "auto")
    out["trunc_eps"] = eps if eps == "auto" else ck.number(eps, p + ("trunc_eps",), nonneg=True)
    out["drift_mode"] = ck.choice(m.get("drift_mode", "Quadrature"), p + ("drift_mode",), DRIFT_MODES)
    return out


def _check_run(ck, r, model):
    p = ("run",)
    ck.mapping(r, p, _RUN_KEYS)
    S, T = model["horizon"]
    out = {
        "n_paths": ck.number(r.get("n_paths", 10_000), p + ("n_paths",), integer=True, positive=True),
        "seed": ck.number(r.get("seed", DEFAULT_SEED), p + ("seed",), integer=True, nonneg=True),
        "workers": ck.number(r.get("workers", 1), p + ("workers",), integer=True, positive=True),
        "z_crit": ck.number(r.get("z_crit", 4.0), p + ("z_crit",), positive=True),
        "precision": ck.number(r.get("precision", 17), p + ("precision",), integer=True, positive=True),
    }
    if out["precision"] > 17:
        ck.fail(p + ("precision",), "at most 17 significant digits")

    sp = p + ("simulate",)
    ck.mapping(r.get("simulate", {}), sp, {"n_paths"})
    out["simulate"] = {k: ck.number(v, sp + (k,), integer=True, positive=True) for k, v in r.get("simulate", {}).items()}

    dp = p + ("drift_table",)
    d = ck.mapping(r.get("drift_table", {}), dp, {"s", "t"})
    out["drift_table"] = {"s": _grid_spec(ck, d.get("s", {"num": 21}), dp + ("s",), S),
                          "t": _grid_spec(ck, d.get("t", {"num": 21}), dp + ("t",), T)}

    pp = p + ("price",)
    pr = ck.mapping(r.get("price", {}), pp, {"points", "n_paths"})
    pts = pr.get("points", [[S / 2.0, T]])
    if not isinstance(pts, list) or not pts:
        ck.fail(pp + ("points",), "expected a non-empty list of [s, t] pairs")
    points = []
    for i, pt in enumerate(pts):
        s, t = ck.numbers(pt, pp + ("points", i), length=2, nonneg=True)
        if s > t or s > S or t > T:
            ck.fail(pp + ("points", i), f"need s <= t inside the horizon, got [{s}, {t}]")
        points.append([s, t])
    out["price"] = {"points": points}
    if "n_paths" in pr:
        out["price"]["n_paths"] = ck.number(pr["n_paths"], pp + ("n_paths",), integer=True, positive=True)

    vp = p + ("validate",)
    v = ck.mapping(r.get("validate", {"tests": []}), vp, {"tests"})
    tests = v.get("tests", [])
    if not isinstance(tests, list):
        ck.fail(vp + ("tests",), "expected a list of tests")
    out["validate"] = {"tests": [_check_test(ck, tst, vp + ("tests", i), S, T) for i, tst in enumerate(tests)]}
    return out


def _check_test(ck, tst, path, S, T):
    if not isinstance(tst, dict) or "type" not in tst:
        ck.fail(path, "each test needs a 'type'")
    kind = ck.choice(tst["type"], path + ("type",), tuple(_TESTS))
    required, optional = _TESTS[kind]
    ck.mapping(tst, path, required | optional | {"type"}, tuple(sorted(required)))
    out = {"type": kind}
    for k, val in tst.items():
        kp = path + (k,)
        if k == "type":
            continue
        if k == "name":
            if not isinstance(val, str):
                ck.fail(kp, "expected a string")
            out[k] = val
        elif k in ("n_paths", "triples", "seed"):
            out[k] = ck.number(val, kp, integer=True, nonneg=k == "seed", positive=k != "seed")
        elif k in ("s", "lambdas") and isinstance(val, list):
            out[k] = ck.numbers(val, kp, nonneg=k == "s")
        elif k == "points":
            if not isinstance(val, list) or not val:
                ck.fail(kp, "expected a list of [s, t] pairs")
            out[k] = [ck.numbers(pt, kp + (i,), length=2, nonneg=True) for i, pt in enumerate(val)]
        elif k == "grid":
            out[k] = ck.numbers(val, kp, length=2, integer=True, positive=True)
        elif k == "truncated":
            if not isinstance(val, bool):
                ck.fail(kp, "expected true or false")
            out[k] = val
        else:
            out[k] = ck.number(val, kp, nonneg=True)
    if kind == "martingale" and not isinstance(out["s"], list):
        out["s"] = [out["s"]]
    if kind in ("martingale", "identity6", "cf"):
        t = out["t"]
        if t > T:
            ck.fail(path + ("t",), f"t={t} beyond the horizon {T}")
    if kind == "identity6" and not out["s2"] <= out["s1"] <= out["t"]:
        ck.fail(path, "need s2 <= s1 <= t")
    return out


def parse_config(text: str) -> RunConfig:
    """Parse and validate a YAML document; errors name the key and line."""
    try:
        loader = yaml.SafeLoader(text)
        try:
            node = loader.get_single_node()
            data = loader.construct_document(node) if node is not None else None
        finally:
            loader.dispose()
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    ck = _Checker(_Lines(node) if node is not None else None)
    if not isinstance(data, dict):
        ck.fail((), "configuration must be a mapping")
    ck.mapping(data, (), {"schema_version", "model", "run"}, ("model",))
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        ck.fail(("schema_version",), f"unsupported schema version {version!r} (expected {SCHEMA_VERSION})")
    model = _check_model(ck, data["model"])
    run = _check_run(ck, data.get("run", {}) or {}, model)
    cfg = RunConfig(SCHEMA_VERSION, model, run)
    try:
        build_model(cfg)
    except ConfigError:
        raise
    except (ValueError, ArithmeticError) as exc:
        raise ConfigError(f"model: {exc}") from None
    return cfg


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


# ----------------------------------------------------------------- building


def _build_measure(spec):
    if spec["type"] == "poisson":
        return PointMass(spec["z"], spec["a"])
    if spec["type"] == "gamma":
        return GammaDensity(spec["z"])
    return UserDensity(compile_expr(spec["density"], ("tau",)), spec["upper"], spec["density"])


def _build_kappa(spec):
    if spec["type"] == "constant":
        return ConstantKappa(spec["value"])
    return CallableKappa(compile_expr(spec["expr"], ("x", "y")), spec["bound"], spec["expr"])


def _build_curve(spec):
    kind = spec["type"]
    if kind == "floor":
        return dr.FloorCurve(spec["base"])
    if kind == "constant":
        return dr.ConstantCurve(spec["value"])
    if kind == "affine":
        return dr.AffineCurve(spec["intercept"], spec["slope"])
    return dr.TableCurve(tuple(spec["t"]), tuple(spec["mu"]))


def _build_gaussian(spec, horizon):
    kind = spec["type"]
    if kind == "none":
        return dr.NoGaussian(), (100, 100)
    if kind == "brownian_sheet":
        return dr.BrownianSheetCovariance(), tuple(spec["steps"])
    s_grid = np.asarray(spec["s_grid"], dtype=float)
    t_grid = np.asarray(spec["t_grid"], dtype=float)
    if "expr" in spec:
        c = compile_expr(spec["expr"], ("s", "t1", "t2"))
        values = c(s_grid[:, None, None], t_grid[None, :, None], t_grid[None, None, :])
    else:
        values = np.asarray(spec["values"], dtype=float)
    if t_grid.size < 2 or t_grid[0] != 0.0:
        raise ValueError("covariance t_grid must start at 0")
    if s_grid[-1] < horizon[0] or t_grid[-1] < horizon[1]:
        raise ValueError("covariance lattice must cover the horizon")
    cov = dr.UserGridCovariance(s_grid, t_grid, values)
    return cov, (s_grid.size - 1, t_grid.size - 1)


def build_model(cfg: RunConfig) -> ModelSpec:
    """Instantiate the :class:`ModelSpec` described by ``cfg``."""
    m = cfg.model
    gaussian, steps = _build_gaussian(m["gaussian"], m["horizon"])
    return ModelSpec(
        measure=_build_measure(m["measure"]),
        kappa=_build_kappa(m["kappa"]),
        initial_curve=_build_curve(m["initial_curve"]),
        gaussian=gaussian,
        horizon=tuple(m["horizon"]),
        trunc_eps=m["trunc_eps"],
        drift_mode=m["drift_mode"],
        gaussian_steps=steps,
    )


def resolved(cfg: RunConfig, model: ModelSpec, **run_overrides: Any) -> RunConfig:
    """Copy of ``cfg`` with the automatic truncation level filled in and
    command-line overrides applied."""
    d = cfg.as_dict()
    d["model"]["trunc_eps"] = float(model.trunc_eps)
    d["run"].update({k: v for k, v in run_overrides.items() if v is not None})
    return RunConfig(d["schema_version"], d["model"], d["run"])


def dump_config(cfg: RunConfig) -> str:
    """YAML text that re-parses to an equivalent :class:`RunConfig`."""
    return yaml.safe_dump(cfg.as_dict(), sort_keys=False, default_flow_style=None)
