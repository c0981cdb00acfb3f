"""Model assembly and pathwise pricing.

Forward rates are ``F(s, t) = mu(s, t) + X(s, t) [+ Y(s, t)]``. Bond prices
and discounted bond prices only need time integrals of ``F``; the jump part
of those integrals is exact per path (see :mod:`levyfield.random_fields`),
the deterministic part is a closed-form antiderivative or a 1-D quadrature,
and a Gaussian part (mixed model) uses the trapezoid rule on its lattice.

All pricing functions accept a single :class:`SheetRealization` (returning
floats) or a :class:`SheetBatch` (returning one value per path).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import drift as dr
from .levy_measure import LevyMeasure, auto_truncation
from .quadrature import integrate
from .random_fields import CallableKappa, GaussianRealization, ScalingFunction, SheetBatch, SheetRealization

__all__ = [
    "DRIFT_MODES",
    "ModelSpec",
    "forward_rate",
    "spot_rate",
    "bond_price",
    "discounted_price",
    "log_discounted_price",
]

DRIFT_MODES = ("ClosedForm", "Quadrature", "CrossCheck", "Zero")
CROSSCHECK_TOL = 1e-7
U_EPSABS = 1e-12
U_EPSREL = 1e-10


class CrossCheckError(AssertionError):
    """Closed-form and quadrature drifts disagree beyond tolerance."""


@dataclass(frozen=True)
class ModelSpec:
    """Complete model: Levy measure, scaling, initial curve, optional Gaussian
    covariance, simulation horizon, truncation level and drift mode.

    ``drift_mode`` ``"Zero"`` freezes ``mu(s, t) = mu(0, t)``; it exists only
    to build negative controls that must fail the martingale tests.
    """

    measure: LevyMeasure
    kappa: ScalingFunction
    initial_curve: dr.InitialCurve
    gaussian: dr.GaussianCovariance = field(default_factory=dr.NoGaussian)
    horizon: tuple = (1.0, 1.0)
    trunc_eps: Union[float, str] = "auto"
    drift_mode: str = "Quadrature"
    gaussian_steps: tuple = (100, 100)
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        S, T = (float(v) for v in self.horizon)
        if not (S > 0.0 and T > 0.0):
            raise ValueError("horizon must be positive")
        object.__setattr__(self, "horizon", (S, T))
        if self.drift_mode not in DRIFT_MODES:
            raise ValueError(f"drift_mode must be one of {DRIFT_MODES}, got {self.drift_mode!r}")
        if self.drift_mode in ("ClosedForm", "CrossCheck") and not dr.closed_form_available(self.measure, self.kappa):
            if not self.kappa.is_constant or self.kappa.value != 1.0:
                raise ValueError("closed form requires constant κ = 1")
            raise ValueError("closed form requires a Poisson (a = 1) or gamma measure")
        if isinstance(self.kappa, CallableKappa):
            self.kappa.check_bound(S, T)
        object.__setattr__(self, "initial_curve", self.initial_curve.bind(self.measure, self.kappa))
        if self.trunc_eps == "auto":
            eps = auto_truncation(self.measure, S * T, self.kappa.bound)
        else:
            eps = float(self.trunc_eps)
            if eps < 0.0:
                raise ValueError("truncation level must be nonnegative")
        object.__setattr__(self, "trunc_eps", eps)
        ns, nt = (int(v) for v in self.gaussian_steps)
        if ns < 1 or nt < 1:
            raise ValueError("Gaussian grid needs at least one step per axis")
        object.__setattr__(self, "gaussian_steps", (ns, nt))

    # ------------------------------------------------------------------ drift

    def gaussian_grid(self):
        S, T = self.horizon
        ns, nt = self.gaussian_steps
        return np.linspace(0.0, S, ns + 1), np.linspace(0.0, T, nt + 1)

    def _check(self, s, t):
        S, T = self.horizon
        if not (0.0 <= s <= t):
            raise ValueError(f"need 0 <= s <= t, got s={s}, t={t}")
        if s > S or t > T:
            raise ValueError(f"({s}, {t}) lies outside the horizon [0, {S}] x [0, {T}]")

    def _memo(self, key, fn):
        cache = self._cache
        if key not in cache:
            cache[key] = fn()
        return cache[key]

    def jump_drift(self, s, t):
        """Jump part of ``mu(s, t) - mu(0, t)`` under the configured mode."""
        mode = self.drift_mode
        if mode == "Zero" or s == 0.0 or self.measure.is_zero:
            return 0.0
        if mode == "ClosedForm":
            return dr.drift_increment(self.measure, self.kappa, s, t, method="closed")

        def quad():
            return dr.drift_increment_quadrature(self.measure, self.kappa, s, t)

        q = self._memo(("jd", s, t), quad)
        if mode == "CrossCheck":
            c = dr.drift_increment(self.measure, self.kappa, s, t, method="closed")
            if abs(c - q) > CROSSCHECK_TOL:
                raise CrossCheckError(f"drift cross-check failed at ({s}, {t}): closed {c!r} vs quadrature {q!r}")
        return q

    def gaussian_drift(self, s, t):
        if self.drift_mode == "Zero" or not self.gaussian.active:
            return 0.0
        return self._memo(("gd", s, t), lambda: self.gaussian.drift_correction(s, t))

    def mu0(self, t):
        return float(self.initial_curve(t))

    def mu(self, s, t):
        """Deterministic part ``mu(s, t)`` of the forward rate."""
        if s > t:
            raise ValueError(f"need s <= t, got s={s}, t={t}")
        return self.mu0(t) + self.jump_drift(s, t) + self.gaussian_drift(s, t)

    def drift_parts(self, s, t):
        return self.mu0(t), self.jump_drift(s, t), self.gaussian_drift(s, t)

    def _quad_u(self, f, a, b):
        if a == b:
            return 0.0
        val, _ = integrate(lambda u: np.array([f(v) for v in u]), a, b, epsabs=U_EPSABS, epsrel=U_EPSREL)
        return float(val)

    def _jump_forward_integral(self, s, t):
        mode = self.drift_mode
        if mode == "Zero" or s == 0.0 or s == t or self.measure.is_zero:
            return 0.0
        if mode == "ClosedForm":
            return dr.closed_forward_integral(self.measure, s, t)
        q = self._memo(("jf", s, t), lambda: self._quad_u(lambda u: self.jump_drift(s, u), s, t))
        if mode == "CrossCheck":
            c = dr.closed_forward_integral(self.measure, s, t)
            if abs(c - q) > CROSSCHECK_TOL * max(1.0, abs(c)):
                raise CrossCheckError(f"forward-integral cross-check failed at ({s}, {t}): {c!r} vs {q!r}")
        return q

    def _jump_diagonal_integral(self, s):
        mode = self.drift_mode
        if mode == "Zero" or s == 0.0 or self.measure.is_zero:
            return 0.0
        if mode == "ClosedForm":
            return dr.closed_diagonal_integral(self.measure, s)
        q = self._memo(("jdiag", s), lambda: self._quad_u(lambda u: self.jump_drift(u, u), 0.0, s))
        if mode == "CrossCheck":
            c = dr.closed_diagonal_integral(self.measure, s)
            if abs(c - q) > CROSSCHECK_TOL * max(1.0, abs(c)):
                raise CrossCheckError(f"diagonal-integral cross-check failed at {s}: {c!r} vs {q!r}")
        return q

    def forward_mu_integral(self, s, t):
        """``int_s^t mu(s, u) du``."""
        self._check(s, t)
        total = self.initial_curve.integral(s, t) + self._jump_forward_integral(s, t)
        if self.gaussian.active and self.drift_mode != "Zero":
            total += self._memo(("gf", s, t), lambda: self.gaussian.forward_integral(s, t))
        return total

    def diagonal_drift_integral(self, s):
        """``int_0^s mu(u, u) du``."""
        self._check(s, s)
        total = self.initial_curve.integral(0.0, s) + self._jump_diagonal_integral(s)
        if self.gaussian.active and self.drift_mode != "Zero":
            total += self._memo(("gdiag", s), lambda: self.gaussian.diagonal_integral(s))
        return total

    def initial_bond_price(self, t):
        """``P(0, t) = exp(-int_0^t mu(0, u) du)``, the same for every path."""
        return math.exp(-self.initial_curve.integral(0.0, t))

    def floor_violation(self, n=401):
        """First maturity in the horizon where ``mu(0, t)`` is below the
        positivity floor, or ``None``."""
        T = max(self.horizon)
        ts = np.linspace(0.0, T, n)
        mu0 = np.asarray(self.initial_curve(ts), dtype=float)
        floor = np.array([dr.positivity_floor(self.measure, self.kappa, t) for t in ts])
        bad = np.nonzero(mu0 < floor - 1e-12 * np.maximum(1.0, floor))[0]
        return None if bad.size == 0 else float(ts[bad[0]])

    def with_drift_mode(self, mode):
        return ModelSpec(self.measure, self.kappa, self.initial_curve, self.gaussian, self.horizon,
                         self.trunc_eps, mode, self.gaussian_steps)

    def with_measure(self, measure):
        return ModelSpec(measure, self.kappa, self.initial_curve, self.gaussian, self.horizon,
                         self.trunc_eps, self.drift_mode, self.gaussian_steps)


# ------------------------------------------------------------------- pricing

Path = Union[SheetRealization, SheetBatch]


def _need_gauss(model, gauss):
    if model.gaussian.active and gauss is None:
        raise ValueError("mixed model needs a Gaussian realisation")


def forward_rate(model: ModelSpec, path: Path, s, t, gauss: Optional[GaussianRealization] = None):
    """``F(s, t) = mu(s, t) + X(s, t) [+ Y(s, t)]``."""
    model._check(s, t)
    _need_gauss(model, gauss)
    out = model.mu(s, t) + path.eval_X(s, t)
    if gauss is not None and model.gaussian.active:
        out = out + gauss.eval_Y(s, t)
    return out


def spot_rate(model: ModelSpec, path: Path, s, gauss: Optional[GaussianRealization] = None):
    """``R(s) = F(s, s)``."""
    return forward_rate(model, path, s, s, gauss)


def _forward_exponent(model, path, s, t, gauss):
    model._check(s, t)
    _need_gauss(model, gauss)
    out = model.forward_mu_integral(s, t) + path.integral_X_forward(s, t)
    if gauss is not None and model.gaussian.active:
        out = out + gauss.integral_Y_forward(s, t)
    return out


def _spot_exponent(model, path, s, gauss):
    model._check(s, s)
    out = model.diagonal_drift_integral(s) + path.integral_X_spot(s)
    if gauss is not None and model.gaussian.active:
        out = out + gauss.integral_Y_spot(s)
    return out


def bond_price(model: ModelSpec, path: Path, s, t, gauss: Optional[GaussianRealization] = None):
    """``P(s, t) = exp(-int_s^t F(s, u) du)``."""
    return np.exp(-_forward_exponent(model, path, s, t, gauss))[()]


def log_discounted_price(model: ModelSpec, path: Path, s, t, gauss: Optional[GaussianRealization] = None):
    return -(_forward_exponent(model, path, s, t, gauss) + _spot_exponent(model, path, s, gauss))


def discounted_price(model: ModelSpec, path: Path, s, t, gauss: Optional[GaussianRealization] = None):
    """``Z(s, t) = P(s, t) exp(-int_0^s R(u) du)``."""
    return np.exp(log_discounted_price(model, path, s, t, gauss))[()]
