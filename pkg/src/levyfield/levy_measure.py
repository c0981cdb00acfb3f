"""Levy measures on the positive half-line.

Three families are supported: a point mass ``z * delta_a`` (the Poisson
sheet when ``a = 1``), the gamma density ``z * exp(-tau) / tau`` and a
user-supplied density. Every measure must have a finite second moment.

The transforms used by the drift and validation code are

* ``phi(lam)   = int tau (1 - exp(-lam tau)) sigma(dtau)``
* ``psi(lam)   = int (exp(-lam tau) - 1 + lam tau) sigma(dtau)``
* ``char_exponent(lam) = int (exp(i lam tau) - 1 - i lam tau) sigma(dtau)``

and ``phi`` is the derivative of ``psi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import optimize, special
from scipy.interpolate import PchipInterpolator

from .quadrature import QuadratureError, gauss_legendre, integrate

__all__ = [
    "DivergentIntegralError",
    "LevyMeasure",
    "PointMass",
    "GammaDensity",
    "UserDensity",
    "auto_truncation",
]

EPSABS = 1e-10
EPSREL = 1e-9
N_KNOTS = 4096
MAX_EXPECTED_ATOMS = 1e8
TAU_MIN = 1e-60  # sigma-integrals reaching 0 are closed below this by a power law


class DivergentIntegralError(ArithmeticError):
    """A sigma-integral that the caller needs is infinite."""


def _em1x(x):
    """``exp(-x) - 1 + x`` without cancellation for small ``x``."""
    x = np.asarray(x, dtype=float)
    out = np.atleast_1d(np.expm1(-x) + x)
    xs = np.atleast_1d(x)
    small = np.abs(xs) < 1e-3
    if np.any(small):
        xs = xs[small]
        out[small] = xs * xs * (0.5 - xs * (1.0 / 6.0 - xs * (1.0 / 24.0 - xs / 120.0)))
    return out.reshape(x.shape)


def _sinx_minus_x(x):
    x = np.asarray(x, dtype=float)
    out = np.atleast_1d(np.sin(x) - x)
    xs = np.atleast_1d(x)
    small = np.abs(xs) < 1e-3
    if np.any(small):
        xs = xs[small]
        x3 = xs ** 3
        out[small] = -x3 / 6.0 + x3 * xs * xs / 120.0
    return out.reshape(x.shape)


class LevyMeasure:
    """Common interface; concrete measures are the frozen dataclasses below."""

    kind = "abstract"

    def second_moment(self) -> float:
        raise NotImplementedError

    def first_moment(self) -> float:
        raise NotImplementedError

    @property
    def has_finite_mean(self) -> bool:
        return math.isfinite(self.first_moment())

    @property
    def is_zero(self) -> bool:
        return self.second_moment() == 0.0

    def phi(self, lam):
        raise NotImplementedError

    def psi(self, lam):
        raise NotImplementedError

    def char_exponent(self, lam):
        raise NotImplementedError

    def truncated_intensity(self, eps: float) -> float:
        raise NotImplementedError

    def truncated_mean(self, eps: float) -> float:
        raise NotImplementedError

    def small_jump_l2(self, eps: float) -> float:
        raise NotImplementedError

    def sample_jump(self, eps: float, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def describe(self) -> dict:
        raise NotImplementedError


def _check_intensity(z):
    if not (z >= 0.0 and math.isfinite(z)):
        raise ValueError(f"intensity must be positive (or zero for a jump-free model), got {z}")


@dataclass(frozen=True)
class PointMass(LevyMeasure):
    """``z * delta_a``: jumps of constant size ``a`` arriving at rate ``z``."""

    z: float
    a: float = 1.0
    kind = "point_mass"

    def __post_init__(self):
        _check_intensity(self.z)
        if not (self.a > 0.0 and math.isfinite(self.a)):
            raise ValueError(f"jump location must be positive, got {self.a}")

    def second_moment(self):
        return self.z * self.a * self.a

    def first_moment(self):
        return self.z * self.a

    def phi(self, lam):
        lam = np.asarray(lam, dtype=float)
        return self.z * self.a * -np.expm1(-lam * self.a)

    def psi(self, lam):
        lam = np.asarray(lam, dtype=float)
        return self.z * _em1x(lam * self.a)

    def char_exponent(self, lam):
        x = np.asarray(lam, dtype=float) * self.a
        re = -2.0 * np.sin(0.5 * x) ** 2
        return self.z * (re + 1j * _sinx_minus_x(x))

    def truncated_intensity(self, eps):
        return self.z if eps < self.a else 0.0

    def truncated_mean(self, eps):
        return self.z * self.a if eps < self.a else 0.0

    def small_jump_l2(self, eps):
        return self.z * self.a * self.a if self.a <= eps else 0.0

    def sample_jump(self, eps, rng, size=None):
        if eps >= self.a:
            raise ValueError("no jumps above the truncation level")
        return self.a if size is None else np.full(size, self.a)

    def describe(self):
        return {"type": "poisson", "z": self.z, "a": self.a}


class _DensityMeasure(LevyMeasure):
    """Shared sigma-integration and sampling machinery for absolutely
    continuous measures ``sigma(dtau) = d(tau) dtau``."""

    upper: Optional[float] = None

    def density(self, tau):
        raise NotImplementedError

    def sigma_integral(self, h, lo=0.0, hi=None, *, epsabs=EPSABS, epsrel=EPSREL):
        """``int_lo^hi h(tau) d(tau) dtau`` with ``h`` vectorised over nodes.

        The range is cut at ``tau = 1``. Below 1 a logarithmic substitution
        tames ``1/tau``-type singularities; a range reaching 0 is integrated
        down to ``TAU_MIN`` and closed by :meth:`_origin_remainder`. Above 1
        the unbounded tail is folded onto ``(0, 1]`` by ``tau = c/u``.
        """
        top = self.upper if hi is None else (hi if self.upper is None else min(hi, self.upper))
        if top is not None and top <= lo:
            probe = np.asarray(h(np.array([1.0])))
            return np.zeros(probe.shape[1:])[()] if probe.ndim > 1 else 0.0
        total = 0.0
        split = 1.0 if top is None else min(1.0, top)
        if lo < split:
            a = lo if lo > 0.0 else TAU_MIN

            def f_log(v):
                tau = np.exp(v)
                return _bcast(h(tau), self.density(tau) * tau)

            val, _ = integrate(f_log, math.log(a), math.log(split), epsabs=epsabs, epsrel=epsrel)
            total = total + val
            if lo <= 0.0:
                total = total + self._origin_remainder(h)
        start = max(lo, split)
        if top is None:
            def f_tail(u):
                tau = start / u
                return _bcast(h(tau), self.density(tau) * start / (u * u))
            val, _ = integrate(f_tail, 0.0, 1.0, epsabs=epsabs, epsrel=epsrel)
            total = total + val
        elif start < top:
            def f_lin2(tau):
                return _bcast(h(tau), self.density(tau))
            val, _ = integrate(f_lin2, start, top, epsabs=epsabs, epsrel=epsrel)
            total = total + val
        return total

    def _origin_remainder(self, h):
        """``int_0^TAU_MIN h d`` from the local power law of ``g = tau h d``.

        With ``g ~ C tau^q`` near 0 the remainder is ``g(TAU_MIN) / q``;
        ``q <= 0`` means the integral diverges at the origin.
        """
        taus = np.array([TAU_MIN, TAU_MIN * 1e-20])
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            g = _bcast(h(taus), self.density(taus) * taus)
        g1, g2 = np.abs(g[0]), np.abs(g[1])
        if not (np.all(np.isfinite(g1)) and np.all(np.isfinite(g2))):
            raise QuadratureError("integrand is not finite near tau = 0")
        nonzero = g1 > 0.0
        # g2 underflowing to 0 while g1 > 0 means steep decay: the remainder vanishes
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(nonzero & (g2 > 0.0), np.log(g1 / np.where(g2 > 0.0, g2, 1.0)) / math.log(1e20), np.inf)
        if np.any(nonzero & (q <= 1e-3)):
            raise QuadratureError("integral diverges at tau = 0")
        return np.where(nonzero, g[0] / np.where(nonzero, q, 1.0), 0.0)[()]

    # quadrature versions of the transforms; subclasses may override with closed forms
    def _phi_quad(self, lam):
        lam = np.asarray(lam, dtype=float)
        flat = lam.ravel()
        if flat.size == 0:
            return lam.copy()
        out = self.sigma_integral(lambda tau: tau[:, None] * -np.expm1(-tau[:, None] * flat[None, :]))
        return np.reshape(out, lam.shape)

    def _psi_quad(self, lam):
        lam = np.asarray(lam, dtype=float)
        flat = lam.ravel()
        if flat.size == 0:
            return lam.copy()
        out = self.sigma_integral(lambda tau: _em1x(tau[:, None] * flat[None, :]))
        return np.reshape(out, lam.shape)

    def _char_quad(self, lam):
        lam = np.asarray(lam, dtype=float)
        flat = lam.ravel()
        if flat.size == 0:
            return lam.astype(complex)

        def h(tau):
            x = tau[:, None] * flat[None, :]
            return np.concatenate([-2.0 * np.sin(0.5 * x) ** 2, _sinx_minus_x(x)], axis=1)

        out = self.sigma_integral(h)
        n = flat.size
        return np.reshape(out[:n] + 1j * out[n:], lam.shape)

    def sample_jump(self, eps, rng, size=None):
        table = self._table(eps)
        e = rng.standard_exponential(size=1 if size is None else size)
        tau = table(e)
        return float(tau[0]) if size is None else tau

    def _table(self, eps):
        cache = self._cache
        key = ("table", float(eps))
        if key not in cache:
            cache[key] = _InverseSurvivalTable.build(self, float(eps))
        return cache[key]

    def _survival_knots(self, eps, knots):
        """Mass of sigma on ``(knots[k], inf)`` for every knot."""
        u, w = gauss_legendre(16)
        a, b = knots[:-1], knots[1:]
        nodes = a[:, None] + (b - a)[:, None] * u[None, :]
        seg = ((b - a)[:, None] * w[None, :] * self.density(nodes)).sum(axis=1)
        tail = self.sigma_integral(lambda tau: np.ones_like(tau), lo=float(knots[-1])) if (
            self.upper is None or knots[-1] < self.upper) else 0.0
        surv = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]]) + tail
        return surv


def _bcast(hv, dv):
    hv = np.asarray(hv)
    dv = np.asarray(dv)
    return hv * dv.reshape(dv.shape + (1,) * (hv.ndim - dv.ndim))


@dataclass(frozen=True)
class GammaDensity(_DensityMeasure):
    """``z * exp(-tau) / tau dtau``: the gamma sheet's Levy measure."""

    z: float
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)
    kind = "gamma"
    upper = None

    def __post_init__(self):
        _check_intensity(self.z)

    def density(self, tau):
        tau = np.asarray(tau, dtype=float)
        return self.z * np.exp(-tau) / tau

    def second_moment(self):
        return self.z

    def first_moment(self):
        return self.z

    def phi(self, lam):
        lam = np.asarray(lam, dtype=float)
        return self.z * lam / (1.0 + lam)

    def psi(self, lam):
        lam = np.asarray(lam, dtype=float)
        return self.z * (lam - np.log1p(lam))

    def char_exponent(self, lam):
        if self.z == 0.0:
            return np.zeros(np.shape(lam), dtype=complex)[()]
        return self._char_quad(lam)[()]

    def truncated_intensity(self, eps):
        if self.z == 0.0:
            return 0.0
        if eps <= 0.0:
            raise DivergentIntegralError(
                "gamma measure has infinite activity; a positive truncation level is required")
        return self.z * float(special.exp1(eps))

    def truncated_mean(self, eps):
        return self.z * math.exp(-max(eps, 0.0))

    def small_jump_l2(self, eps):
        if eps <= 0.0:
            return 0.0
        return self.z * (-math.expm1(-eps) - eps * math.exp(-eps))

    def _survival_knots(self, eps, knots):
        return self.z * special.exp1(knots)

    def describe(self):
        return {"type": "gamma", "z": self.z}


@dataclass(frozen=True)
class UserDensity(_DensityMeasure):
    """Levy measure given by a vectorised density on ``(0, inf)``.

    ``upper`` declares a bounded support. Without it the tail is integrated
    to infinity, which assumes the density decays fast enough for the
    second moment to converge. That is checked at construction.
    """

    func: Callable[[np.ndarray], np.ndarray]
    upper: Optional[float] = None
    label: str = "user"
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)
    kind = "user"

    def __post_init__(self):
        if self.upper is not None and not self.upper > 0.0:
            raise ValueError("support upper bound must be positive")
        probe = np.asarray(self.func(np.array([0.5, 1.0, 2.0])), dtype=float)
        if probe.shape != (3,) or np.any(probe < 0.0) or not np.all(np.isfinite(probe)):
            raise ValueError("density must be a vectorised, finite, nonnegative function")
        try:
            m2 = float(self.sigma_integral(lambda tau: tau * tau))
        except QuadratureError as exc:
            raise ValueError(f"second moment of the density does not converge: {exc}") from None
        if not math.isfinite(m2):
            raise ValueError("second moment of the density is infinite")
        self._cache["m2"] = m2

    def density(self, tau):
        return np.asarray(self.func(np.asarray(tau, dtype=float)), dtype=float)

    def second_moment(self):
        return self._cache["m2"]

    def first_moment(self):
        if "m1" not in self._cache:
            try:
                m1 = float(self.sigma_integral(lambda tau: tau))
            except QuadratureError:
                m1 = math.inf
            self._cache["m1"] = m1 if math.isfinite(m1) else math.inf
        return self._cache["m1"]

    def phi(self, lam):
        return self._phi_quad(lam)[()]

    def psi(self, lam):
        return self._psi_quad(lam)[()]

    def char_exponent(self, lam):
        return self._char_quad(lam)[()]

    def truncated_intensity(self, eps):
        key = ("n", float(eps))
        if key not in self._cache:
            try:
                val = float(self.sigma_integral(lambda tau: np.ones_like(tau), lo=max(eps, 0.0)))
            except QuadratureError:
                val = math.inf
            self._cache[key] = val
        val = self._cache[key]
        if not math.isfinite(val):
            raise DivergentIntegralError(
                f"density has infinite mass above {eps}; use a positive truncation level")
        return val

    def truncated_mean(self, eps):
        if eps <= 0.0:
            return self.first_moment()
        return float(self.sigma_integral(lambda tau: tau, lo=eps))

    def small_jump_l2(self, eps):
        if eps <= 0.0:
            return 0.0
        return float(self.sigma_integral(lambda tau: tau * tau, lo=0.0, hi=eps))

    def describe(self):
        return {"type": "user", "label": self.label, "upper": self.upper}


class _InverseSurvivalTable:
    """Monotone-cubic inverse of ``-log S(tau)`` on a fixed knot set, where
    ``S`` is the normalised sigma-mass above ``tau`` (truncated at ``eps``).
    Evaluating it at standard exponential variates samples the jump law."""

    def __init__(self, levels, knots):
        self.interp = PchipInterpolator(levels, knots, extrapolate=False)
        self.lmax = levels[-1]
        self.tmin = knots[0]
        self.tmax = knots[-1]

    def __call__(self, e):
        e = np.asarray(e, dtype=float)
        out = self.interp(np.minimum(e, self.lmax))
        return np.clip(out, self.tmin, self.tmax)

    @classmethod
    def build(cls, measure: _DensityMeasure, eps: float):
        total = measure.truncated_intensity(eps)
        if not (total > 0.0):
            raise ValueError("no jumps above the truncation level")
        upper = measure.upper
        if upper is None:
            upper = max(eps, 1.0)
            while measure.sigma_integral(lambda tau: np.ones_like(tau), lo=upper) > 1e-17 * total:
                upper *= 2.0
        lo = eps
        half = N_KNOTS // 2
        pieces = [np.linspace(lo, upper, half)]
        if lo > 0.0:
            pieces.append(np.geomspace(lo, upper, half))
        else:
            pieces.append(np.geomspace(upper * 1e-12, upper, half))
        knots = np.unique(np.concatenate(pieces))
        surv = measure._survival_knots(eps, knots)
        surv = np.asarray(surv, dtype=float) / total
        surv[0] = 1.0
        with np.errstate(divide="ignore"):
            levels = -np.log(surv)
        ok = np.isfinite(levels)
        levels, knots = levels[ok], knots[ok]
        keep = np.concatenate([[True], np.diff(levels) > 0.0])
        return cls(levels[keep], knots[keep])


def auto_truncation(measure: LevyMeasure, area: float, kappa_sup: float, budget: float = 1e-6) -> float:
    """Smallest-cost truncation level whose neglected small-jump variance
    ``small_jump_l2(eps) * area * kappa_sup**2`` stays below ``budget``.

    Finite-activity measures return 0 (no truncation needed).
    """
    if measure.is_zero or isinstance(measure, PointMass):
        return 0.0
    try:
        if math.isfinite(measure.truncated_intensity(0.0)):
            return 0.0
    except DivergentIntegralError:
        pass
    scale = area * kappa_sup * kappa_sup
    if scale <= 0.0:
        return 0.0
    target = budget / scale
    hi = 1e3
    if measure.small_jump_l2(hi) <= target:
        return hi

    def gap(log_eps):
        return math.log(max(measure.small_jump_l2(math.exp(log_eps)), 1e-300)) - math.log(target)

    root = optimize.brentq(gap, math.log(1e-15), math.log(hi), xtol=1e-6)
    eps = math.exp(root)
    # stay on the safe side of the budget
    while measure.small_jump_l2(eps) > target:
        eps *= 0.999
    return eps
