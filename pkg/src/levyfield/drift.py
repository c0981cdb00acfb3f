"""Martingale drift of the Levy-field forward-rate model.

The drift increment ``mu(s, t) - mu(0, t)`` that makes every discounted bond
price a martingale is

    D(s, t) = int_0^s int_0^t k(x, y) phi(k(x, y) (t - max(x, y))) dy dx,

with ``phi`` the measure transform from :mod:`levyfield.levy_measure`. For the
Poisson sheet (``z delta_1``) and the gamma sheet with ``k = 1`` the double
integral has closed forms; otherwise it is computed by adaptive quadrature
on the two triangles either side of the diagonal ``y = x``, where the
integrand is smooth.

A Gaussian component with covariance ``c(s ^ s', t, t')`` adds
``int_0^t c(s ^ u, u, t) du`` to the drift.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .levy_measure import GammaDensity, LevyMeasure, PointMass
from .quadrature import gl_rectangle, integrate, integrate_2d
from .random_fields import ConstantKappa, ScalingFunction, simulate_brownian_sheet, simulate_gaussian_grid

log = logging.getLogger(__name__)

__all__ = [
    "drift_poisson_closed",
    "drift_gamma_closed",
    "drift_increment",
    "drift_increment_quadrature",
    "closed_form_available",
    "psi_band_integral",
    "positivity_floor",
    "InitialCurve",
    "ConstantCurve",
    "AffineCurve",
    "TableCurve",
    "FloorCurve",
    "GaussianCovariance",
    "NoGaussian",
    "BrownianSheetCovariance",
    "UserGridCovariance",
]

DRIFT_EPSABS = 1e-11
DRIFT_EPSREL = 1e-11


def drift_poisson_closed(z, s, t):
    """Drift increment of the Poisson sheet ``z delta_1`` with unit scaling."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s > t):
        raise ValueError("drift needs s <= t")
    return (z * ((2.0 - s) * np.exp(s - t) - 2.0 * np.exp(-t) - s + s * t))[()]


def drift_gamma_closed(z, s, t):
    """Drift increment of the gamma sheet ``z exp(-tau)/tau`` with unit scaling."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s > t):
        raise ValueError("drift needs s <= t")
    gap = np.log1p(t - s)
    return (z * (s * t + 2.0 * s + 2.0 * (1.0 + t) * (gap - np.log1p(t)) - s * gap))[()]


def _poisson_forward_integral(z, s, t):
    """``int_s^t D(s, u) du`` for the Poisson closed form."""
    return 0.5 * z * (s * (t * t - 2.0 * t - s * s + 2.0 * s)
                      + 2.0 * (2.0 - s - 2.0 * math.exp(-s)) * -math.expm1(s - t))


def _poisson_diagonal_integral(z, s):
    """``int_0^s D(u, u) du`` for the Poisson closed form."""
    return z * ((s ** 3 - 3.0 * s * s + 6.0 * s - 6.0) + 6.0 * math.exp(-s)) / 3.0


def _gamma_forward_integral(z, s, t):
    gap = math.log1p(t - s)
    return 0.5 * z * (s * t * t + 4.0 * s * t - s ** 3 - 4.0 * s * s
                      + (2.0 * t * (t - s + 2.0) - 2.0 * (s - 1.0)) * gap
                      + 2.0 * (1.0 + s) ** 2 * math.log1p(s) - 2.0 * (1.0 + t) ** 2 * math.log1p(t))


def _gamma_diagonal_integral(z, s):
    return z * (2.0 * s ** 3 + 9.0 * s * s + 6.0 * s - 6.0 * (1.0 + s) ** 2 * math.log1p(s)) / 6.0


def closed_form_available(measure: LevyMeasure, kappa: ScalingFunction) -> bool:
    """Closed forms exist for ``PointMass(z, a=1)`` and ``GammaDensity(z)``
    under the constant scaling ``k = 1``."""
    unit = isinstance(kappa, ConstantKappa) and kappa.value == 1.0
    if not unit:
        return False
    if isinstance(measure, PointMass):
        return measure.a == 1.0
    return isinstance(measure, GammaDensity)


def _closed(measure, s, t):
    if isinstance(measure, PointMass):
        return drift_poisson_closed(measure.z, s, t)
    return drift_gamma_closed(measure.z, s, t)


def _diag_split(h, kappa, x_lo, x_hi, t, epsabs, epsrel):
    """``int_{x_lo}^{x_hi} int_0^t h(k(x,y), t - max(x,y)) dy dx``
    split along the diagonal; ``h`` receives ``(k, gap)`` arrays."""
    if x_hi <= x_lo:
        return 0.0

    def below(x, y):  # y <= x
        k = kappa(x, y) if not kappa.is_constant else np.full(np.broadcast(x, y).shape, kappa.value)
        return h(k, np.broadcast_to(t - x, k.shape))

    def above(x, y):  # y >= x
        k = kappa(x, y) if not kappa.is_constant else np.full(np.broadcast(x, y).shape, kappa.value)
        return h(k, t - y)

    lower, _ = integrate_2d(below, x_lo, x_hi, 0.0, lambda x: x, epsabs=epsabs, epsrel=epsrel)
    upper, _ = integrate_2d(above, x_lo, x_hi, lambda x: x, t, epsabs=epsabs, epsrel=epsrel)
    return float(lower + upper)


def drift_increment_quadrature(measure, kappa, s, t, *, raw_sigma=False,
                               epsabs=DRIFT_EPSABS, epsrel=DRIFT_EPSREL):
    """Generic drift increment by adaptive quadrature.

    With ``raw_sigma`` the measure transform is itself integrated against the
    density, even when a closed form for it exists.
    """
    if s > t:
        raise ValueError(f"drift needs s <= t, got s={s}, t={t}")
    if s == 0.0 or measure.is_zero:
        return 0.0
    if raw_sigma and hasattr(measure, "_phi_quad"):
        phi = measure._phi_quad
    else:
        phi = measure.phi
    return _diag_split(lambda k, gap: k * phi(k * gap), kappa, 0.0, s, t, epsabs, epsrel)


def drift_increment(measure, kappa, s, t, method="auto"):
    """``mu(s, t) - mu(0, t)`` for the jump part.

    ``method`` is ``"closed"``, ``"quadrature"`` or ``"auto"`` (closed form
    when one exists).
    """
    if s > t:
        raise ValueError(f"drift needs s <= t, got s={s}, t={t}")
    if method == "closed" or (method == "auto" and closed_form_available(measure, kappa)):
        if not closed_form_available(measure, kappa):
            raise ValueError("closed form requires constant κ = 1 with a Poisson (a = 1) or gamma measure")
        return float(_closed(measure, s, t))
    return drift_increment_quadrature(measure, kappa, s, t)


def psi_band_integral(measure, kappa, s2, s1, t, epsabs=1e-12, epsrel=1e-11):
    """``int_{s2}^{s1} int_0^t psi(k(x,y) (t - max(x, y))) dy dx``."""
    return _diag_split(lambda k, gap: measure.psi(k * gap), kappa, s2, s1, t, epsabs, epsrel)


def closed_forward_integral(measure, s, t):
    """``int_s^t D(s, u) du`` in closed form."""
    if isinstance(measure, PointMass):
        return _poisson_forward_integral(measure.z, s, t)
    return _gamma_forward_integral(measure.z, s, t)


def closed_diagonal_integral(measure, s):
    """``int_0^s D(u, u) du`` in closed form."""
    if isinstance(measure, PointMass):
        return _poisson_diagonal_integral(measure.z, s)
    return _gamma_diagonal_integral(measure.z, s)


def kappa_square_integral(kappa, t):
    """``int_0^t int_0^t k(x, y) dx dy``."""
    if kappa.is_constant:
        return kappa.value * t * t
    return float(gl_rectangle(kappa, 0.0, t, 0.0, t)) if t > 0.0 else 0.0


def positivity_floor(measure, kappa, t):
    """Smallest initial forward rate at maturity ``t`` that keeps every forward
    and spot rate nonnegative: ``<tau> * int_{[0,t]^2} k``."""
    mean = measure.first_moment()
    if not math.isfinite(mean):
        raise ValueError("positivity floor unavailable: the Levy measure has an infinite first moment")
    if t == 0.0:
        return 0.0
    return mean * kappa_square_integral(kappa, t)


# ----------------------------------------------------------------- initial curve


class InitialCurve:
    """Initial forward curve ``mu(0, t)``."""

    def __call__(self, t):
        raise NotImplementedError

    def integral(self, a, b):
        """``int_a^b mu(0, u) du``."""
        val, _ = integrate(lambda u: np.asarray(self(u), dtype=float), a, b, epsabs=1e-13, epsrel=1e-12)
        return float(val)

    def bind(self, measure, kappa):
        return self

    def describe(self):
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantCurve(InitialCurve):
    value: float

    def __call__(self, t):
        return np.full(np.shape(t), self.value, dtype=float)[()]

    def integral(self, a, b):
        return self.value * (b - a)

    def describe(self):
        return {"type": "constant", "value": self.value}


@dataclass(frozen=True)
class AffineCurve(InitialCurve):
    intercept: float
    slope: float

    def __call__(self, t):
        return (self.intercept + self.slope * np.asarray(t, dtype=float))[()]

    def integral(self, a, b):
        return self.intercept * (b - a) + 0.5 * self.slope * (b * b - a * a)

    def describe(self):
        return {"type": "affine", "intercept": self.intercept, "slope": self.slope}


@dataclass(frozen=True)
class TableCurve(InitialCurve):
    """Piecewise-linear curve through knots, flat outside the knot range."""

    knots_t: tuple
    knots_mu: tuple
    _warned: list = field(default_factory=list, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        kt = np.asarray(self.knots_t, dtype=float)
        km = np.asarray(self.knots_mu, dtype=float)
        if kt.ndim != 1 or kt.size < 1 or kt.size != km.size:
            raise ValueError("table curve needs matching, nonempty knot lists")
        if np.any(np.diff(kt) <= 0.0):
            raise ValueError("table curve knots must be strictly increasing in t")
        if not np.all(np.isfinite(km)):
            raise ValueError("table curve values must be finite")

    def __call__(self, t):
        kt = np.asarray(self.knots_t, dtype=float)
        tt = np.asarray(t, dtype=float)
        if not self._warned and np.any(tt > kt[-1]):
            log.warning("initial curve extrapolated flat beyond its last knot t=%g", kt[-1])
            self._warned.append(True)
        return np.interp(tt, kt, np.asarray(self.knots_mu, dtype=float))[()]

    def integral(self, a, b):
        if a == b:
            return 0.0
        kt = np.asarray(self.knots_t, dtype=float)
        nodes = np.unique(np.concatenate([[a, b], kt[(kt > a) & (kt < b)]]))
        vals = np.asarray(self(nodes), dtype=float)
        return float(np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(nodes)))

    def describe(self):
        return {"type": "table", "knots": [[float(a), float(b)] for a, b in zip(self.knots_t, self.knots_mu)]}


@dataclass(frozen=True)
class FloorCurve(InitialCurve):
    """``base + <tau> int_{[0,t]^2} k``: the positivity floor shifted by ``base >= 0``.

    Must be bound to a measure and scaling with :meth:`bind` before use.
    """

    base: float = 0.0
    mean: Optional[float] = None
    kappa: Optional[ScalingFunction] = None

    def __post_init__(self):
        if self.base < 0.0:
            raise ValueError("floor offset must be nonnegative")

    def bind(self, measure, kappa):
        mean = measure.first_moment()
        if not math.isfinite(mean):
            raise ValueError("positivity floor unavailable: the Levy measure has an infinite first moment")
        return FloorCurve(self.base, mean, kappa)

    def _require(self):
        if self.mean is None:
            raise RuntimeError("floor curve used before being bound to a model")

    def __call__(self, t):
        self._require()
        tt = np.asarray(t, dtype=float)
        if self.kappa.is_constant:
            return (self.base + self.mean * self.kappa.value * tt * tt)[()]
        vals = np.vectorize(lambda v: kappa_square_integral(self.kappa, v))(tt)
        return (self.base + self.mean * vals)[()]

    def integral(self, a, b):
        self._require()
        if self.kappa.is_constant:
            return self.base * (b - a) + self.mean * self.kappa.value * (b ** 3 - a ** 3) / 3.0
        return super().integral(a, b)

    def describe(self):
        return {"type": "floor", "base": self.base}


# --------------------------------------------------------- Gaussian covariances


class GaussianCovariance:
    """Covariance ``c(s, t1, t2)`` of an independent Gaussian field ``Y`` with
    ``Cov(Y(s1,t1), Y(s2,t2)) = c(min(s1,s2), t1, t2)``."""

    kind = "none"

    def c(self, s, t1, t2):
        raise NotImplementedError

    def drift_correction(self, s, t, method="auto"):
        """``int_0^t c(min(s, u), u, t) du``."""
        raise NotImplementedError

    def correction_quadrature(self, s, t, points=()):
        if s > t:
            raise ValueError("drift needs s <= t")
        if t == 0.0 or s == 0.0:
            return 0.0

        def f(u):
            return np.asarray(self.c(np.minimum(s, u), u, np.full_like(u, t)), dtype=float)

        val, _ = integrate(f, 0.0, t, epsabs=1e-13, epsrel=1e-12, points=(s, *points))
        return float(val)

    def forward_integral(self, s, t):
        """``int_s^t correction(s, u) du``."""
        val, _ = integrate(lambda u: np.array([self.drift_correction(s, v) for v in u]), s, t,
                           epsabs=1e-12, epsrel=1e-11)
        return float(val)

    def diagonal_integral(self, s):
        """``int_0^s correction(u, u) du``."""
        val, _ = integrate(lambda u: np.array([self.drift_correction(v, v) for v in u]), 0.0, s,
                           epsabs=1e-12, epsrel=1e-11)
        return float(val)

    def simulate(self, rng, n_paths, s_grid, t_grid):
        raise NotImplementedError

    @property
    def active(self):
        return True

    def describe(self):
        return {"type": self.kind}


class NoGaussian(GaussianCovariance):
    kind = "none"

    def c(self, s, t1, t2):
        return np.zeros(np.broadcast(s, t1, t2).shape)[()]

    def drift_correction(self, s, t, method="auto"):
        return 0.0

    def forward_integral(self, s, t):
        return 0.0

    def diagonal_integral(self, s):
        return 0.0

    @property
    def active(self):
        return False

    def __eq__(self, other):
        return isinstance(other, NoGaussian)

    def __hash__(self):
        return hash("none")


class BrownianSheetCovariance(GaussianCovariance):
    """``c(s, t1, t2) = s min(t1, t2)``: Kennedy's Brownian-sheet model."""

    kind = "brownian_sheet"

    def c(self, s, t1, t2):
        return (np.asarray(s, dtype=float) * np.minimum(t1, t2))[()]

    def drift_correction(self, s, t, method="auto"):
        if s > t:
            raise ValueError("drift needs s <= t")
        if method == "quadrature":
            return self.correction_quadrature(s, t)
        return s * t * t / 2.0 - s ** 3 / 6.0

    def forward_integral(self, s, t):
        return s * (t ** 3 - s ** 3) / 6.0 - s ** 3 * (t - s) / 6.0

    def diagonal_integral(self, s):
        return s ** 4 / 12.0

    def simulate(self, rng, n_paths, s_grid, t_grid):
        return simulate_brownian_sheet(s_grid, t_grid, rng, n_paths)

    def __eq__(self, other):
        return isinstance(other, BrownianSheetCovariance)

    def __hash__(self):
        return hash("brownian_sheet")


class UserGridCovariance(GaussianCovariance):
    """Covariance tabulated on a lattice: ``values[k, i, j] = c(s_k, t_i, t_j)``.

    Off-lattice values are multilinear interpolants. The row increments
    ``c(s_{k+1},.,.) - c(s_k,.,.)`` must be positive semidefinite, which is
    checked (and factorised for simulation) at construction.
    """

    kind = "user_grid"

    def __init__(self, s_grid, t_grid, values, tol=1e-10):
        self.s_grid = np.asarray(s_grid, dtype=float)
        self.t_grid = np.asarray(t_grid, dtype=float)
        self.values = np.asarray(values, dtype=float)
        ns, nt = self.s_grid.size, self.t_grid.size
        if self.values.shape != (ns, nt, nt):
            raise ValueError(f"covariance table must have shape ({ns}, {nt}, {nt})")
        if self.s_grid[0] != 0.0 or np.any(np.diff(self.s_grid) <= 0.0) or np.any(np.diff(self.t_grid) <= 0.0):
            raise ValueError("covariance lattice must be strictly increasing with s starting at 0")
        if np.any(self.values[0] != 0.0):
            raise ValueError("covariance must vanish at s = 0")
        if not np.allclose(self.values, np.swapaxes(self.values, 1, 2), atol=tol, rtol=0.0):
            raise ValueError("covariance must be symmetric in (t1, t2)")
        self.factors = []
        for k in range(1, ns):
            inc = self.values[k] - self.values[k - 1]
            inc = 0.5 * (inc + inc.T)
            lam, vec = np.linalg.eigh(inc)
            scale = max(1.0, float(np.max(np.abs(lam))))
            if lam[0] < -tol * scale:
                raise ValueError(
                    f"covariance increment between s={self.s_grid[k - 1]} and s={self.s_grid[k]} "
                    f"is not positive semidefinite (eigenvalue {lam[0]:.3e})")
            self.factors.append(vec * np.sqrt(np.clip(lam, 0.0, None))[None, :])

    def _locate(self, grid, q, name):
        q = np.asarray(q, dtype=float)
        if np.any(q < grid[0] - 1e-12) or np.any(q > grid[-1] + 1e-12):
            raise ValueError(f"{name} outside the covariance lattice [{grid[0]}, {grid[-1]}]")
        j = np.clip(np.searchsorted(grid, q, side="right") - 1, 0, grid.size - 2)
        frac = np.clip((q - grid[j]) / (grid[j + 1] - grid[j]), 0.0, 1.0)
        return j, frac

    def c(self, s, t1, t2):
        s, t1, t2 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (s, t1, t2)))
        k, fs = self._locate(self.s_grid, s, "s")
        i, f1 = self._locate(self.t_grid, t1, "t")
        j, f2 = self._locate(self.t_grid, t2, "t")
        out = np.zeros(s.shape)
        for dk, wk in ((0, 1.0 - fs), (1, fs)):
            for di, wi in ((0, 1.0 - f1), (1, f1)):
                for dj, wj in ((0, 1.0 - f2), (1, f2)):
                    out += wk * wi * wj * self.values[k + dk, i + di, j + dj]
        return out[()]

    def drift_correction(self, s, t, method="auto"):
        return self.correction_quadrature(s, t, points=tuple(self.t_grid))

    def simulate(self, rng, n_paths, s_grid=None, t_grid=None):
        return simulate_gaussian_grid(self.factors, self.s_grid, self.t_grid, rng, n_paths)

    def describe(self):
        return {"type": "user_grid", "s_grid": self.s_grid.tolist(), "t_grid": self.t_grid.tolist(),
                "values": self.values.tolist()}
