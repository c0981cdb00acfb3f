"""Statistical and deterministic certification of a :class:`ModelSpec`.

Every Monte Carlo test returns :class:`ValidationReport` objects holding a
z-score against an exact reference. Passing means ``|z| <= z_crit``. Sample
means use numpy's pairwise summation over the full path array, which is
assembled in block order, so a report depends only on ``(model, seed,
n_paths)`` and never on the worker count.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import trim_mean

from . import drift as dr
from .levy_measure import GammaDensity, LevyMeasure, PointMass, UserDensity
from .montecarlo import DEFAULT_SEED, collect
from .quadrature import gl_rectangle
from .term_structure import ModelSpec, discounted_price

__all__ = [
    "Z_CRIT",
    "MIN_PATHS",
    "ValidationReport",
    "IdentityCheck",
    "FloorViolationError",
    "mc_martingale_test",
    "mc_identity6_test",
    "ige_identity_check",
    "cf_test",
    "cf_reference",
    "positivity_scan",
    "variance_check",
    "variance_reference",
    "truncation_bias",
    "scaled_measure",
]

Z_CRIT = 4.0
MIN_PATHS = 100
TRIM = 1e-4  # 0.01% per tail, diagnostic only


class FloorViolationError(ValueError):
    """The initial curve dips below the positivity floor."""


@dataclass(frozen=True)
class ValidationReport:
    test_name: str
    params: str
    n_paths: int
    estimate: float
    reference: float
    standard_error: float
    z_score: float
    passed: bool
    z_crit: float = Z_CRIT
    wall_time: float = 0.0
    trimmed_mean: float = math.nan

    COLUMNS = ("test_name", "params", "n_paths", "estimate", "reference", "standard_error",
               "z_score", "z_crit", "trimmed_mean", "passed")

    def row(self):
        """Report fields in :attr:`COLUMNS` order (wall time is left out so
        that rows are reproducible byte for byte)."""
        return [getattr(self, c) for c in self.COLUMNS]

    def summary(self):
        flag = "PASS" if self.passed else "FAIL"
        return (f"{flag} {self.test_name} [{self.params}] estimate={self.estimate:.8g} "
                f"reference={self.reference:.8g} se={self.standard_error:.3g} z={self.z_score:.3f} "
                f"n={self.n_paths} ({self.wall_time:.2f}s)")


@dataclass(frozen=True)
class IdentityCheck:
    s2: float
    s1: float
    t: float
    lhs: float
    rhs: float
    tol: float

    @property
    def error(self):
        return abs(self.lhs - self.rhs)

    @property
    def passed(self):
        return self.error <= self.tol


def _z(estimate, reference, se, atol=1e-12):
    if se > 0.0:
        return (estimate - reference) / se
    return 0.0 if abs(estimate - reference) <= atol * max(1.0, abs(reference)) else math.inf


def _mean_report(name, params, values, reference, z_crit, started):
    values = np.asarray(values, dtype=float)
    n = values.size
    est = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(n))
    z = _z(est, reference, se)
    return ValidationReport(name, params, n, est, float(reference), se, z, bool(abs(z) <= z_crit), z_crit,
                            time.perf_counter() - started, float(trim_mean(values, TRIM)))


def _require_paths(n_paths):
    if n_paths < MIN_PATHS:
        raise ValueError(f"refusing to run with {n_paths} paths: need at least {MIN_PATHS} for a meaningful SE")


def _fmt(**kw):
    return ";".join(f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}" for k, v in kw.items())


# ----------------------------------------------------------------- martingale


def mc_martingale_test(model: ModelSpec, t, s_list: Sequence[float], n_paths, seed=DEFAULT_SEED, *,
                       workers=1, z_crit=Z_CRIT, name="martingale"):
    """``E[Z(s, t)] = P(0, t)`` for each ``s`` in ``s_list``."""
    _require_paths(n_paths)
    s_list = [float(s) for s in s_list]
    t = float(t)
    for s in s_list:
        if not 0.0 <= s <= t:
            raise ValueError(f"s={s} outside [0, t={t}]")
        model.forward_mu_integral(s, t)  # fill the drift cache before forking
        model.diagonal_drift_integral(s)
    started = time.perf_counter()

    def block(m, batch, gauss):
        return np.column_stack([discounted_price(m, batch, s, t, gauss) for s in s_list])

    values = collect(model, n_paths, seed, block, workers)
    ref = model.initial_bond_price(t)
    return [_mean_report(name, _fmt(s=s, t=t), values[:, k], ref, z_crit, started)
            for k, s in enumerate(s_list)]


def _band_drift(model, s2, s1, t):
    return (model.forward_mu_integral(s1, t) - model.forward_mu_integral(s2, t)
            + model.diagonal_drift_integral(s1) - model.diagonal_drift_integral(s2))


def mc_identity6_test(model: ModelSpec, s2, s1, t, n_paths, seed=DEFAULT_SEED, *,
                      workers=1, z_crit=Z_CRIT, name="identity6"):
    """``E exp(-int_{s1}^t (F(s1,u) - F(s2,u)) du - int_{s2}^{s1} (F(u,u) - F(s2,u)) du) = 1``."""
    _require_paths(n_paths)
    s2, s1, t = float(s2), float(s1), float(t)
    if not 0.0 <= s2 <= s1 <= t:
        raise ValueError("identity test needs 0 <= s2 <= s1 <= t")
    det = _band_drift(model, s2, s1, t)
    started = time.perf_counter()

    def block(m, batch, gauss):
        expo = det + batch.integral_X_band(s2, s1, t)
        if gauss is not None:
            expo = expo + gauss.integral_Y_band(s2, s1, t)
        return np.exp(-expo)

    values = collect(model, n_paths, seed, block, workers)
    return _mean_report(name, _fmt(s2=s2, s1=s1, t=t), values, 1.0, z_crit, started)


def ige_identity_check(model: ModelSpec, s2, s1, t, tol=1e-6):
    """Deterministic form of the drift condition on a band.

    Left side: ``int_{s2}^{s1} int_0^t psi(k (t - max(x, y))) dy dx`` by 2-D
    quadrature. Right side: ``int_{s1}^t (D(s1,u) - D(s2,u)) du +
    int_{s2}^{s1} (D(u,u) - D(s2,u)) du`` by 1-D quadrature of the model's
    jump drift ``D``.
    """
    if not 0.0 <= s2 <= s1 <= t:
        raise ValueError("identity check needs 0 <= s2 <= s1 <= t")
    lhs = dr.psi_band_integral(model.measure, model.kappa, s2, s1, t)
    D = model.jump_drift
    rhs = (model._quad_u(lambda u: D(s1, u) - D(s2, u), s1, t)
           + model._quad_u(lambda u: D(u, u) - D(s2, u), s2, s1))
    return IdentityCheck(s2, s1, t, float(lhs), float(rhs), tol)


# ------------------------------------------------------------ characteristic


def cf_reference(measure: LevyMeasure, kappa, s, t, lam, n=64):
    """``E exp(i lam X(s, t)) = exp(int_0^s int_0^t eta(lam k(x, y)) dy dx)``
    with ``eta`` the characteristic exponent."""
    if s == 0.0 or t == 0.0 or lam == 0.0:
        return 1.0 + 0.0j
    if kappa.is_constant:
        return complex(np.exp(s * t * measure.char_exponent(lam * kappa.value)))

    def g(x, y):
        k = np.broadcast_to(kappa(x, y), np.broadcast(x, y).shape)
        return measure.char_exponent(lam * k)

    return complex(np.exp(gl_rectangle(g, 0.0, s, 0.0, t, n=n)))


def cf_test(model: ModelSpec, s, t, lambdas, n_paths, seed=DEFAULT_SEED, *, workers=1, z_crit=Z_CRIT,
            sim_model: Optional[ModelSpec] = None, name="cf"):
    """Empirical characteristic function of ``X(s, t)`` vs the exact one.

    Two reports per ``lam`` (real and imaginary parts). ``sim_model``, when
    given, is simulated instead of ``model`` while references still come
    from ``model``; this builds negative controls.
    """
    _require_paths(n_paths)
    lambdas = [float(v) for v in lambdas]
    started = time.perf_counter()
    x = collect(sim_model or model, n_paths, seed, lambda m, b, g: b.eval_X(s, t), workers)
    reports = []
    for lam in lambdas:
        ref = cf_reference(model.measure, model.kappa, s, t, lam)
        reports.append(_mean_report(f"{name}_re", _fmt(s=s, t=t, lam=lam), np.cos(lam * x), ref.real, z_crit, started))
        reports.append(_mean_report(f"{name}_im", _fmt(s=s, t=t, lam=lam), np.sin(lam * x), ref.imag, z_crit, started))
    return reports


# ------------------------------------------------------------------ variance


def variance_reference(model: ModelSpec, s, t, truncated=False):
    """``Var X(s, t) = int tau^2 sigma(dtau) * int_0^s int_0^t k^2``; with
    ``truncated`` the jumps below the truncation level are left out."""
    m2 = model.measure.second_moment()
    if truncated:
        m2 -= model.measure.small_jump_l2(model.trunc_eps)
    return m2 * model.kappa.integral_sq(s, t)


def truncation_bias(measure: LevyMeasure, kappa, s, t, eps):
    """Variance lost by dropping jumps below ``eps``."""
    return measure.small_jump_l2(eps) * kappa.integral_sq(s, t)


def variance_check(model: ModelSpec, points, n_paths, seed=DEFAULT_SEED, *, workers=1, z_crit=Z_CRIT,
                   truncated=False, sim_model: Optional[ModelSpec] = None, name="variance"):
    """Sample variance of ``X(s, t)`` at each point against the exact value.

    The standard error of the sample variance is estimated from the fourth
    central moment, ``sqrt((m4 - v^2) / n)``, which stays valid for the
    strongly non-Gaussian jump fields.
    """
    _require_paths(n_paths)
    points = [(float(s), float(t)) for s, t in points]
    started = time.perf_counter()

    def block(m, batch, gauss):
        return np.column_stack([batch.eval_X(s, t) for s, t in points])

    x = collect(sim_model or model, n_paths, seed, block, workers)
    reports = []
    for k, (s, t) in enumerate(points):
        col = x[:, k]
        n = col.size
        dev = col - col.mean()
        v = float(np.sum(dev * dev) / (n - 1))
        m4 = float(np.mean(dev ** 4))
        se = math.sqrt(max(m4 - v * v, 0.0) / n)
        ref = variance_reference(model, s, t, truncated)
        z = _z(v, ref, se)
        reports.append(ValidationReport(name, _fmt(s=s, t=t, eps=model.trunc_eps), n, v, ref, se, z,
                                        bool(abs(z) <= z_crit), z_crit, time.perf_counter() - started))
    return reports


# ---------------------------------------------------------------- positivity


def positivity_scan(model: ModelSpec, grid=(50, 50), n_paths=10_000, seed=DEFAULT_SEED, *, workers=1,
                    check_floor=True, name="positivity"):
    """Count negative forward and spot rates over every path and grid node.

    This is an exact property rather than a statistical one: the test
    passes only with zero violations. The initial curve is checked against
    the positivity floor first (disable with ``check_floor=False`` only to
    demonstrate that violations then appear).
    """
    if model.gaussian.active:
        raise ValueError("positivity scan applies to jump-only models")
    if not model.measure.has_finite_mean:
        raise ValueError("positivity floor unavailable: the Levy measure has an infinite first moment")
    if check_floor:
        bad = model.floor_violation()
        if bad is not None:
            raise FloorViolationError(
                f"initial curve is below the positivity floor at t={bad:.6g} "
                f"(mu(0,t)={model.mu0(bad):.6g}, floor={dr.positivity_floor(model.measure, model.kappa, bad):.6g})")
    comp = model.measure.truncated_mean(model.trunc_eps)
    assert comp <= model.measure.first_moment() * (1.0 + 1e-12), "simulated compensator exceeds the floor mean"
    S, T = model.horizon
    ns, nt = grid
    s_grid = np.linspace(0.0, S, int(ns))
    t_grid = np.linspace(0.0, T, int(nt))
    started = time.perf_counter()
    mask = s_grid[:, None] <= t_grid[None, :]
    mu = np.full(mask.shape, np.nan)
    for i, s in enumerate(s_grid):
        for j, t in enumerate(t_grid):
            if mask[i, j]:
                mu[i, j] = model.mu(s, t)
    spots = s_grid[s_grid <= T]
    mu_diag = np.array([model.mu(s, s) for s in spots])

    def block(m, batch, gauss):
        F = mu[None] + batch.grid_X(s_grid, t_grid)
        F = np.where(mask[None], F, np.inf)
        R = mu_diag[None] + np.column_stack([batch.eval_X(s, s) for s in spots])
        return np.column_stack([(F < 0.0).sum(axis=(1, 2)), (R < 0.0).sum(axis=1),
                                F.min(axis=(1, 2)), R.min(axis=1)])

    out = collect(model, n_paths, seed, block, workers)
    violations = int(out[:, 0].sum() + out[:, 1].sum())
    low = float(min(out[:, 2].min(), out[:, 3].min()))
    passed = violations == 0
    params = _fmt(grid=f"{ns}x{nt}", forward_viol=int(out[:, 0].sum()), spot_viol=int(out[:, 1].sum()), min_rate=low)
    return ValidationReport(name, params, int(n_paths), float(violations), 0.0, 0.0,
                            0.0 if passed else math.inf, passed, 0.0, time.perf_counter() - started)


# --------------------------------------------------------- negative controls


def scaled_measure(measure: LevyMeasure, factor: float) -> LevyMeasure:
    """``factor * sigma``: used to build perturbed-model controls."""
    if isinstance(measure, PointMass):
        return PointMass(measure.z * factor, measure.a)
    if isinstance(measure, GammaDensity):
        return GammaDensity(measure.z * factor)
    if isinstance(measure, UserDensity):
        f = measure.func
        return UserDensity(lambda tau: factor * f(tau), measure.upper, f"{factor:g}*{measure.label}")
    raise TypeError(f"cannot scale {type(measure).__name__}")
