"""Command-line interface.

``levyfield {simulate,drift-table,price,validate} --config PATH --out DIR
[--seed N] [--workers N] [--n-paths N] [--precision P]``

Every flag can also be set through an environment variable with the
``LEVYFIELD_`` prefix (``LEVYFIELD_CONFIG``, ``LEVYFIELD_OUT``,
``LEVYFIELD_SEED``, ``LEVYFIELD_WORKERS``, ``LEVYFIELD_N_PATHS``,
``LEVYFIELD_PRECISION``). Precedence: flag, then environment, then the
config file, then built-in defaults.

Exit codes: 0 success (all validation tests pass), 1 a statistical test
failed, 2 configuration or precondition error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, build_model, dump_config, grid_values, load_config, resolved
from .montecarlo import map_blocks
from .term_structure import bond_price, discounted_price, forward_rate, spot_rate
from . import validation as val

__all__ = ["main", "run", "ENV_PREFIX"]

log = logging.getLogger("levyfield")

ENV_PREFIX = "LEVYFIELD_"
EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
SUBCOMMANDS = ("simulate", "drift-table", "price", "validate")
_FLAGS = {"config": str, "out": str, "seed": int, "workers": int, "n_paths": int, "precision": int}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file")
    common.add_argument("--out", help="output directory (created if missing)")
    common.add_argument("--seed", type=int, help="master seed (default: config value or fixed constant)")
    common.add_argument("--workers", type=int, help="worker processes")
    common.add_argument("--n-paths", dest="n_paths", type=int, help="number of Monte Carlo paths")
    common.add_argument("--precision", type=int, help="significant digits in CSV output (default 17)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser = argparse.ArgumentParser(prog="levyfield", description="Levy-field term-structure simulator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{" + ",".join(SUBCOMMANDS) + "}")
    helps = {
        "simulate": "dump the jump atoms (path_id, x, y, tau) of every path",
        "drift-table": "tabulate the martingale drift on a grid",
        "price": "pathwise forward, spot, bond and discounted bond prices",
        "validate": "run the configured validation tests",
    }
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def _apply_env(args):
    for name, kind in _FLAGS.items():
        if getattr(args, name) is not None:
            continue
        raw = os.environ.get(ENV_PREFIX + name.upper())
        if raw is None or raw == "":
            continue
        try:
            setattr(args, name, kind(raw))
        except ValueError:
            raise ConfigError(f"environment variable {ENV_PREFIX}{name.upper()}={raw!r} is not a valid {kind.__name__}")


class _Writer:
    """CSV rows with fixed column order and ``precision`` significant digits."""

    def __init__(self, precision):
        self.fmt = f".{int(precision)}g"

    def cell(self, v):
        if isinstance(v, (bool, np.bool_)):
            return "true" if v else "false"
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        if isinstance(v, (float, np.floating)):
            v = float(v)
            if math.isinf(v):
                return "inf" if v > 0 else "-inf"
            return format(v, self.fmt)
        return str(v)

    def write(self, path, header, rows):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([self.cell(v) for v in row])


# ---------------------------------------------------------------- commands


def _cmd_simulate(model, run, out, writer):
    n = run["simulate"].get("n_paths", run["n_paths"])

    def block(m, batch, gauss):
        return batch.path_ids(), batch.x, batch.y, batch.tau

    parts = map_blocks(model, n, run["seed"], block, run["workers"])
    pid, x, y, tau = (np.concatenate(c) for c in zip(*parts))
    writer.write(out / "atoms.csv", ["path_id", "x", "y", "tau"], zip(pid, x, y, tau))
    log.info("wrote %d atoms for %d paths", pid.size, n)
    return EXIT_OK


def _cmd_drift_table(model, run, out, writer):
    S, T = model.horizon
    s_grid = grid_values(run["drift_table"]["s"], S)
    t_grid = grid_values(run["drift_table"]["t"], T)
    rows = []
    for s in s_grid:
        for t in t_grid:
            if s <= t:
                mu0, jump, gauss = model.drift_parts(float(s), float(t))
                rows.append((s, t, mu0, jump, gauss, mu0 + jump + gauss))
    writer.write(out / "drift_table.csv",
                 ["s", "t", "mu0_t", "jump_increment", "gaussian_correction", "mu_s_t"], rows)
    return EXIT_OK


def _cmd_price(model, run, out, writer):
    points = [tuple(p) for p in run["price"]["points"]]
    n = run["price"].get("n_paths", run["n_paths"])
    for s, t in points:  # fill the deterministic caches before any fork
        model.mu(s, t), model.forward_mu_integral(s, t), model.diagonal_drift_integral(s)

    def block(m, batch, gauss):
        cols = []
        for s, t in points:
            cols.append(np.column_stack([
                forward_rate(m, batch, s, t, gauss), spot_rate(m, batch, s, gauss),
                bond_price(m, batch, s, t, gauss), discounted_price(m, batch, s, t, gauss)]))
        return batch.first_path_id + np.arange(batch.n_paths), np.stack(cols, axis=1)

    parts = map_blocks(model, n, run["seed"], block, run["workers"])
    ids = np.concatenate([p[0] for p in parts])
    vals = np.concatenate([p[1] for p in parts])

    def rows():
        for i, pid in enumerate(ids):
            for k, (s, t) in enumerate(points):
                yield (pid, s, t, *vals[i, k])

    writer.write(out / "prices.csv", ["path_id", "s", "t", "F_s_t", "R_s", "P_s_t", "Z_s_t"], rows())
    return EXIT_OK


def _ige_report(model, spec, seed):
    started = time.perf_counter()
    rng = np.random.default_rng(spec.get("seed", seed))
    S, T = model.horizon
    tol = spec.get("tol", 1e-6)
    worst = 0.0
    for _ in range(spec["triples"]):
        t = rng.uniform(0.0, T)
        s2, s1 = np.sort(rng.uniform(0.0, min(S, t), size=2))
        worst = max(worst, val.ige_identity_check(model, float(s2), float(s1), float(t), tol).error)
    passed = worst <= tol
    return val.ValidationReport(spec.get("name", "ige_identity"), f"triples={spec['triples']};tol={tol:g}",
                                0, worst, 0.0, 0.0, 0.0 if passed else math.inf, passed, 0.0,
                                time.perf_counter() - started)


def _run_test(model, spec, run):
    kind = spec["type"]
    n = spec.get("n_paths", run["n_paths"])
    kw = {"workers": run["workers"]}
    seed = run["seed"]
    z_crit = spec.get("z_crit", run["z_crit"])
    name = {"name": spec["name"]} if "name" in spec else {}
    sim = {}
    if "simulate_scale" in spec:
        sim = {"sim_model": model.with_measure(val.scaled_measure(model.measure, spec["simulate_scale"]))}
    if kind == "martingale":
        return val.mc_martingale_test(model, spec["t"], spec["s"], n, seed, z_crit=z_crit, **kw, **name)
    if kind == "identity6":
        return [val.mc_identity6_test(model, spec["s2"], spec["s1"], spec["t"], n, seed, z_crit=z_crit, **kw, **name)]
    if kind == "ige":
        return [_ige_report(model, spec, seed)]
    if kind == "cf":
        return val.cf_test(model, spec["s"], spec["t"], spec["lambdas"], n, seed, z_crit=z_crit, **kw, **sim, **name)
    if kind == "variance":
        return val.variance_check(model, spec["points"], n, seed, z_crit=z_crit,
                                  truncated=spec.get("truncated", False), **kw, **sim, **name)
    grid = tuple(spec.get("grid", (50, 50)))
    return [val.positivity_scan(model, grid, n, seed, **kw, **name)]


def _default_tests(model):
    S, T = model.horizon
    return [{"type": "martingale", "t": T, "s": [min(S, T) * f for f in (0.25, 0.5, 0.75)]}]


def _cmd_validate(model, run, out, writer, header):
    tests = run["validate"]["tests"] or _default_tests(model)
    reports = []
    for spec in tests:
        reports.extend(_run_test(model, spec, run))
    writer.write(out / "report.csv", list(val.ValidationReport.COLUMNS), (r.row() for r in reports))
    lines = [r.summary() for r in reports]
    n_fail = sum(not r.passed for r in reports)
    lines.append(f"{len(reports) - n_fail}/{len(reports)} passed")
    text = "\n".join(lines)
    with open(out / "report.txt", "w", encoding="utf-8") as fh:
        fh.write(header)
        fh.write(text + "\n")
    print(text)
    return EXIT_FAIL if n_fail else EXIT_OK


# ------------------------------------------------------------------- driver


def run(command, cfg, out, *, seed=None, workers=None, n_paths=None, precision=None):
    """Execute ``command`` for a parsed config; returns the exit code.

    Only files inside ``out`` are written: ``resolved_config.yaml`` plus the
    command's CSV (and ``report.txt`` for ``validate``).
    """
    model = build_model(cfg)
    final = resolved(cfg, model, seed=seed, workers=workers, n_paths=n_paths, precision=precision)
    run_cfg = final.run
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    echo = dump_config(final)
    with open(out / "resolved_config.yaml", "w", encoding="utf-8") as fh:
        fh.write(echo)
    header = "".join(f"# {line}\n" for line in echo.splitlines())
    writer = _Writer(run_cfg["precision"])
    if command == "simulate":
        return _cmd_simulate(model, run_cfg, out, writer)
    if command == "drift-table":
        return _cmd_drift_table(model, run_cfg, out, writer)
    if command == "price":
        return _cmd_price(model, run_cfg, out, writer)
    if command == "validate":
        return _cmd_validate(model, run_cfg, out, writer, header)
    raise ValueError(f"unknown command {command!r}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _apply_env(args)
        if not args.config:
            raise ConfigError("no configuration given (use --config or LEVYFIELD_CONFIG)")
        if not args.out:
            raise ConfigError("no output directory given (use --out or LEVYFIELD_OUT)")
        for name in ("workers", "n_paths", "precision"):
            v = getattr(args, name)
            if v is not None and v < 1:
                raise ConfigError(f"--{name.replace('_', '-')} must be positive")
        if args.precision is not None and args.precision > 17:
            raise ConfigError("--precision must be at most 17")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        try:
            cfg = load_config(args.config)
        except OSError as exc:
            raise ConfigError(f"cannot read configuration: {exc}") from None
        return run(args.command, cfg, args.out, seed=args.seed, workers=args.workers,
                   n_paths=args.n_paths, precision=args.precision)
    except ValueError as exc:  # ConfigError, FloorViolationError and domain errors
        print(f"levyfield: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
