"""Sample paths of the compensated Levy sheet and of Gaussian grid fields.

A path of the jump sheet is a finite list of atoms ``(x, y, tau)`` on the
rectangle ``[0, S] x [0, T]``. Every linear functional of the field that the
model needs is an exact atom sum minus a deterministic compensator:

    X(s, t)                 = sum_{x<=s, y<=t} tau k(x,y) - m * int k
    int_s^t X(s, u) du      = sum tau k (t - max(s, y))    - m * int k (t - max(s, y))
    int_0^s X(u, u) du      = sum tau k (s - max(x, y))    - m * int k (s - max(x, y))

Atoms are stored without the scaling function ``k`` applied, so one
realisation can be reused under different scalings. Many paths are packed in
CSR form (``offsets`` into flat atom arrays) so the reductions run in the
compiled kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from .levy_measure import MAX_EXPECTED_ATOMS, DivergentIntegralError, LevyMeasure
from .quadrature import gl_rectangle, gl_rectangle_diagonal

__all__ = [
    "ScalingFunction",
    "ConstantKappa",
    "CallableKappa",
    "SheetBatch",
    "SheetRealization",
    "simulate_sheet",
    "simulate_batch",
    "GaussianRealization",
    "simulate_brownian_sheet",
    "simulate_gaussian_grid",
    "validate_grid",
]

# kernel weight modes
INDICATOR, FORWARD, DIAGONAL = 0, 1, 2


class ScalingFunction:
    """Nonnegative, locally bounded scaling ``k(x, y)`` of the jump sizes."""

    is_constant = False
    bound: float

    def __call__(self, x, y):
        raise NotImplementedError

    def compensator(self, x_lo, x_hi, y_hi, mode=INDICATOR, T=0.0, c=0.0):
        """``int_{x_lo}^{x_hi} int_0^{y_hi} k(x, y) weight(x, y) dy dx`` with the
        same weight conventions as :func:`levyfield.kernels.rect_sums`."""
        raise NotImplementedError

    def integral_sq(self, s, t):
        """``int_0^s int_0^t k(x, y)^2 dy dx``."""
        raise NotImplementedError

    def describe(self):
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantKappa(ScalingFunction):
    value: float = 1.0
    is_constant = True

    def __post_init__(self):
        if not (self.value >= 0.0 and math.isfinite(self.value)):
            raise ValueError(f"scaling constant must be finite and nonnegative, got {self.value}")

    @property
    def bound(self):
        return self.value

    def __call__(self, x, y):
        return np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, self.value)[()]

    def compensator(self, x_lo, x_hi, y_hi, mode=INDICATOR, T=0.0, c=0.0):
        width = x_hi - x_lo
        if width <= 0.0 or y_hi <= 0.0:
            return 0.0
        if mode == INDICATOR:
            return self.value * width * y_hi
        if mode == FORWARD:
            if c >= y_hi:
                per_x = (T - c) * y_hi
            else:
                c0 = max(c, 0.0)
                per_x = c0 * (T - c0) + 0.5 * ((T - c0) ** 2 - (T - y_hi) ** 2)
            return self.value * width * per_x
        if c <= 0.0:
            return self.value * (T * width * y_hi - _int_max_xy(x_lo, x_hi, y_hi))
        return self.value * gl_rectangle_diagonal(
            lambda x, y: T - np.maximum(np.maximum(c, x), y), x_lo, x_hi, 0.0, y_hi, y_breaks=(c,))

    def integral_sq(self, s, t):
        return self.value * self.value * s * t

    def describe(self):
        return self.value


def _int_max_xy(a, b, h):
    """``int_a^b int_0^h max(x, y) dy dx`` for ``0 <= a <= b``."""
    total = 0.0
    lo, hi = a, min(b, h)
    if hi > lo:
        total += 0.5 * ((hi ** 3 - lo ** 3) / 3.0 + h * h * (hi - lo))
    lo = max(a, h)
    if b > lo:
        total += 0.5 * h * (b * b - lo * lo)
    return total


@dataclass(frozen=True)
class CallableKappa(ScalingFunction):
    """Scaling given by a vectorised function with a declared upper bound.

    Compensators are tensor Gauss-Legendre integrals (64 x 64 nodes per
    smooth piece) memoised per query, which assumes ``func`` is smooth away
    from the diagonal.
    """

    func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    bound: float
    expr: Optional[str] = None
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if not (self.bound >= 0.0 and math.isfinite(self.bound)):
            raise ValueError("scaling bound must be finite and nonnegative")
        g = np.linspace(0.0, 1.0, 9)
        vals = np.asarray(self.func(g[:, None], g[None, :]), dtype=float)
        if vals.shape != (9, 9):
            raise ValueError("scaling function must be vectorised over (x, y)")
        if np.any(vals < 0.0) or not np.all(np.isfinite(vals)):
            raise ValueError("scaling function must be finite and nonnegative")

    def __call__(self, x, y):
        return np.asarray(self.func(np.asarray(x, dtype=float), np.asarray(y, dtype=float)), dtype=float)

    def check_bound(self, S, T, n=65):
        xs = np.linspace(0.0, S, n)
        ys = np.linspace(0.0, T, n)
        vals = self(xs[:, None], ys[None, :])
        if np.any(vals < 0.0):
            raise ValueError("scaling function takes negative values on the domain")
        if np.max(vals) > self.bound * (1.0 + 1e-12):
            raise ValueError(
                f"scaling function exceeds its declared bound {self.bound} (max {np.max(vals)})")

    def compensator(self, x_lo, x_hi, y_hi, mode=INDICATOR, T=0.0, c=0.0):
        if x_hi <= x_lo or y_hi <= 0.0:
            return 0.0
        key = (x_lo, x_hi, y_hi, mode, T, c)
        cache = self._cache
        if key not in cache:
            if mode == INDICATOR:
                val = gl_rectangle(self, x_lo, x_hi, 0.0, y_hi)
            elif mode == FORWARD:
                val = gl_rectangle(
                    lambda x, y: self(x, y) * (T - np.maximum(c, y)), x_lo, x_hi, 0.0, y_hi, y_breaks=(c,))
            else:
                val = gl_rectangle_diagonal(
                    lambda x, y: self(x, y) * (T - np.maximum(np.maximum(c, x), y)),
                    x_lo, x_hi, 0.0, y_hi, y_breaks=(c,) if c > 0.0 else ())
            cache[key] = float(val)
        return cache[key]

    def integral_sq(self, s, t):
        return float(gl_rectangle(lambda x, y: self(x, y) ** 2, 0.0, s, 0.0, t))

    def describe(self):
        return {"expr": self.expr, "bound": self.bound} if self.expr else {"bound": self.bound}


def _check_point(s, t, domain):
    S, T = domain
    if not (0.0 <= s <= S and 0.0 <= t <= T):
        raise ValueError(f"({s}, {t}) lies outside the simulated domain [0, {S}] x [0, {T}]")


@dataclass(frozen=True)
class SheetBatch:
    """Atoms of ``n_paths`` independent sheet realisations in CSR layout."""

    offsets: np.ndarray
    x: np.ndarray
    y: np.ndarray
    tau: np.ndarray
    domain: tuple
    trunc_eps: float
    comp_mean: float
    kappa: ScalingFunction
    first_path_id: int = 0
    _w: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    @property
    def n_paths(self):
        return self.offsets.size - 1

    @property
    def counts(self):
        return np.diff(self.offsets)

    @property
    def weights(self):
        """Scaled jump sizes ``tau * k(x, y)``."""
        if "w" not in self._w:
            if self.kappa.is_constant:
                self._w["w"] = self.tau * self.kappa.value
            else:
                self._w["w"] = self.tau * self.kappa(self.x, self.y)
        return self._w["w"]

    def functional(self, x_lo, x_hi, y_hi, mode=INDICATOR, T=0.0, c=0.0):
        """Per-path atom sum minus compensator for one weighted rectangle.

        Atoms count when ``x_lo < x <= x_hi`` (``x_lo < 0`` includes the
        left edge) and ``y <= y_hi``.
        """
        sums = kernels.rect_sums(self.offsets, self.x, self.y, self.weights,
                                 float(x_lo), float(x_hi), float(y_hi), int(mode), float(T), float(c))
        if self.comp_mean == 0.0:
            return sums
        comp = self.kappa.compensator(max(x_lo, 0.0), x_hi, y_hi, mode, T, c)
        return sums - self.comp_mean * comp

    def eval_X(self, s, t):
        _check_point(s, t, self.domain)
        return self.functional(-1.0, s, t)

    def integral_X_forward(self, s, t):
        """``int_s^t X(s, u) du`` for every path, exactly."""
        if s > t:
            raise ValueError(f"forward integral needs s <= t, got s={s}, t={t}")
        _check_point(s, t, self.domain)
        return self.functional(-1.0, s, t, FORWARD, t, s)

    def integral_X_spot(self, s):
        """``int_0^s X(u, u) du`` for every path, exactly."""
        _check_point(s, s, self.domain)
        return self.functional(-1.0, s, s, DIAGONAL, s, 0.0)

    def integral_X_band(self, s2, s1, t):
        """``int_{s1}^t (X(s1,u) - X(s2,u)) du + int_{s2}^{s1} (X(u,u) - X(s2,u)) du``,
        which pairs the field with ``1[s2,s1](x) 1[0,t](y) k (t - max(x, y))``."""
        if not 0.0 <= s2 <= s1 <= t:
            raise ValueError("band integral needs 0 <= s2 <= s1 <= t")
        _check_point(s1, t, self.domain)
        return self.functional(s2 if s2 > 0.0 else -1.0, s1, t, DIAGONAL, t, 0.0)

    def grid_X(self, s_grid, t_grid):
        """``X`` on a lattice: array of shape ``(n_paths, len(s_grid), len(t_grid))``."""
        s_grid = np.ascontiguousarray(s_grid, dtype=float)
        t_grid = np.ascontiguousarray(t_grid, dtype=float)
        _check_point(s_grid[-1], t_grid[-1], self.domain)
        out = kernels.grid_sums(self.offsets, self.x, self.y, self.weights, s_grid, t_grid)
        if self.comp_mean != 0.0:
            comp = np.array([[self.kappa.compensator(0.0, s, t) for t in t_grid] for s in s_grid])
            out -= self.comp_mean * comp
        return out

    def path(self, i):
        lo, hi = self.offsets[i], self.offsets[i + 1]
        return SheetRealization(self.x[lo:hi], self.y[lo:hi], self.tau[lo:hi], self.domain,
                                self.trunc_eps, self.comp_mean, self.kappa)

    def path_ids(self):
        return self.first_path_id + np.repeat(np.arange(self.n_paths), self.counts)


@dataclass(frozen=True)
class SheetRealization:
    """One sample path of the compensated jump sheet."""

    x: np.ndarray
    y: np.ndarray
    tau: np.ndarray
    domain: tuple
    trunc_eps: float
    comp_mean: float
    kappa: ScalingFunction

    @classmethod
    def from_atoms(cls, atoms, domain, comp_mean, kappa=None, trunc_eps=0.0):
        """Build a realisation from explicit ``(x, y, tau)`` triples."""
        arr = np.asarray(atoms, dtype=float).reshape(-1, 3)
        order = np.lexsort((arr[:, 1], arr[:, 0]))
        arr = arr[order]
        S, T = domain
        if np.any(arr[:, 0] < 0) or np.any(arr[:, 0] > S) or np.any(arr[:, 1] < 0) or np.any(arr[:, 1] > T):
            raise ValueError("atom outside the domain")
        return cls(arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy(), tuple(domain),
                   float(trunc_eps), float(comp_mean), kappa or ConstantKappa(1.0))

    @property
    def n_atoms(self):
        return self.x.size

    def as_batch(self):
        return SheetBatch(np.array([0, self.x.size], dtype=np.int64), self.x, self.y, self.tau,
                          self.domain, self.trunc_eps, self.comp_mean, self.kappa)

    def eval_X(self, s, t):
        return float(self.as_batch().eval_X(s, t)[0])

    def integral_X_forward(self, s, t):
        return float(self.as_batch().integral_X_forward(s, t)[0])

    def integral_X_spot(self, s):
        return float(self.as_batch().integral_X_spot(s)[0])

    def integral_X_band(self, s2, s1, t):
        return float(self.as_batch().integral_X_band(s2, s1, t)[0])


def _intensity(measure, eps, area):
    try:
        rate = measure.truncated_intensity(eps)
    except DivergentIntegralError as exc:
        raise ValueError(f"{exc}; choose a larger truncation level") from None
    expected = rate * area
    if expected > MAX_EXPECTED_ATOMS:
        raise ValueError(
            f"truncation level {eps} implies {expected:.3g} expected atoms per path; "
            "choose a larger truncation level")
    return rate


def simulate_batch(measure: LevyMeasure, kappa: ScalingFunction, domain, eps: float,
                   rng: np.random.Generator, n_paths: int, first_path_id: int = 0) -> SheetBatch:
    """Draw ``n_paths`` independent truncated, compensated sheets.

    Counts are Poisson with mean ``truncated_intensity(eps) * S * T``;
    positions are uniform on the rectangle and sizes follow ``sigma``
    restricted to ``(eps, inf)``. Within a path atoms are sorted by ``x``,
    which keeps dumps readable (the order only matters at roundoff level).
    The draws consume ``rng`` in a fixed order (counts, x, y, sizes), so a
    batch is a pure function of the generator state.
    """
    S, T = map(float, domain)
    if not (S > 0.0 and T > 0.0):
        raise ValueError("domain must be positive")
    eps = float(eps)
    rate = _intensity(measure, eps, S * T)
    counts = rng.poisson(rate * S * T, size=n_paths).astype(np.int64)
    total = int(counts.sum())
    x = rng.uniform(0.0, S, size=total)
    y = rng.uniform(0.0, T, size=total)
    tau = measure.sample_jump(eps, rng, size=total) if total else np.zeros(0)
    offsets = np.zeros(n_paths + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    if total:
        # one stable argsort on pid * W + x, W a power of two >= 2S so that
        # pid * W is exact: paths stay exactly grouped, x ordered to ~1e-12 W
        width = 2.0 ** math.ceil(math.log2(2.0 * S))
        pid = np.repeat(np.arange(n_paths), counts)
        order = np.argsort(pid * width + x, kind="stable")
        x, y, tau = x[order], y[order], np.asarray(tau, dtype=float)[order]
    comp_mean = measure.truncated_mean(eps)
    return SheetBatch(offsets, x, y, tau, (S, T), eps, float(comp_mean), kappa, first_path_id)


def simulate_sheet(measure, kappa, domain, eps, rng) -> SheetRealization:
    """Draw one realisation; see :func:`simulate_batch`."""
    return simulate_batch(measure, kappa, domain, eps, rng, 1).path(0)


# --------------------------------------------------------------------- Gaussian

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


def validate_grid(grid):
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size < 2 or g[0] != 0.0 or np.any(np.diff(g) <= 0.0):
        raise ValueError("grid coordinates must start at 0 and increase strictly")
    return g


def _locate(grid, q):
    """Cell index and fractional position of each query point on ``grid``."""
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if np.any(q < grid[0] - 1e-12) or np.any(q > grid[-1] + 1e-12):
        raise ValueError("query outside the Gaussian grid")
    j = np.clip(np.searchsorted(grid, q, side="right") - 1, 0, grid.size - 2)
    frac = np.clip((q - grid[j]) / (grid[j + 1] - grid[j]), 0.0, 1.0)
    return j, frac


@dataclass(frozen=True)
class GaussianRealization:
    """Gaussian field sampled on a lattice; ``values[..., i, j] = Y(s_i, t_j)``.

    A leading axis, when present, indexes paths. Off-lattice values are
    bilinear interpolants and time integrals use the trapezoid rule on the
    lattice nodes, so they carry an ``O(h^2)`` discretisation bias.
    """

    s_grid: np.ndarray
    t_grid: np.ndarray
    values: np.ndarray
    covariance_id: str = "brownian_sheet"

    def _bilinear(self, s, t):
        """``Y`` at the points ``(s[k], t[k])``: shape ``(..., k)``."""
        s, t = np.broadcast_arrays(np.atleast_1d(np.asarray(s, dtype=float)),
                                   np.atleast_1d(np.asarray(t, dtype=float)))
        i, fs = _locate(self.s_grid, s)
        j, ft = _locate(self.t_grid, t)
        v = self.values
        return ((1.0 - fs) * ((1.0 - ft) * v[..., i, j] + ft * v[..., i, j + 1])
                + fs * ((1.0 - ft) * v[..., i + 1, j] + ft * v[..., i + 1, j + 1]))

    def eval_Y(self, s, t):
        return self._bilinear(s, t)[..., 0]

    def _t_nodes(self, a, b):
        g = self.t_grid
        return np.unique(np.concatenate([[a, b], g[(g > a) & (g < b)]]))

    def _diag_nodes(self, a, b):
        grid = np.union1d(self.s_grid, self.t_grid)
        return np.unique(np.concatenate([[a, b], grid[(grid > a) & (grid < b)]]))

    def _zero(self):
        return np.zeros(self.values.shape[:-2])[()]

    def _row_integral(self, s, a, b):
        """Trapezoid ``int_a^b Y(s, u) du``."""
        if a == b:
            return self._zero()
        nodes = self._t_nodes(a, b)
        return _trapezoid(self._bilinear(s, nodes), nodes, axis=-1)

    def _diag_integral(self, a, b):
        """Trapezoid ``int_a^b Y(u, u) du``."""
        if a == b:
            return self._zero()
        nodes = self._diag_nodes(a, b)
        return _trapezoid(self._bilinear(nodes, nodes), nodes, axis=-1)

    def integral_Y_forward(self, s, t):
        """Trapezoid approximation of ``int_s^t Y(s, u) du``."""
        if s > t:
            raise ValueError("forward integral needs s <= t")
        return self._row_integral(s, s, t)

    def integral_Y_spot(self, s):
        """Trapezoid approximation of ``int_0^s Y(u, u) du``."""
        return self._diag_integral(0.0, s)

    def integral_Y_band(self, s2, s1, t):
        """``int_{s1}^t (Y(s1,u) - Y(s2,u)) du + int_{s2}^{s1} (Y(u,u) - Y(s2,u)) du``."""
        if not 0.0 <= s2 <= s1 <= t:
            raise ValueError("band integral needs 0 <= s2 <= s1 <= t")
        return (self._row_integral(s1, s1, t) - self._row_integral(s2, s2, t)
                + self._diag_integral(s2, s1))


def simulate_brownian_sheet(s_grid, t_grid, rng, n_paths=None) -> GaussianRealization:
    """Brownian sheet on a lattice: i.i.d. cell increments ``N(0, ds dt)``
    summed cumulatively in both directions, with zeros on both axes."""
    s_grid = validate_grid(s_grid)
    t_grid = validate_grid(t_grid)
    lead = () if n_paths is None else (n_paths,)
    scale = np.sqrt(np.outer(np.diff(s_grid), np.diff(t_grid)))
    inc = rng.standard_normal(lead + scale.shape) * scale
    vals = np.zeros(lead + (s_grid.size, t_grid.size))
    vals[..., 1:, 1:] = np.cumsum(np.cumsum(inc, axis=-1), axis=-2)
    return GaussianRealization(s_grid, t_grid, vals, "brownian_sheet")


def simulate_gaussian_grid(factors, s_grid, t_grid, rng, n_paths=None, covariance_id="user_grid"):
    """Gaussian field with independent increments in ``s``.

    ``factors[k]`` is a square root of the covariance of the row increment
    ``Y(s_{k+1}, .) - Y(s_k, .)``; rows start from ``Y(0, .) = 0``.
    """
    s_grid = validate_grid(s_grid)
    t_grid = np.asarray(t_grid, dtype=float)
    lead = () if n_paths is None else (n_paths,)
    nt = t_grid.size
    vals = np.zeros(lead + (s_grid.size, nt))
    for k, L in enumerate(factors):
        xi = rng.standard_normal(lead + (L.shape[1],))
        vals[..., k + 1, :] = vals[..., k, :] + xi @ L.T
    return GaussianRealization(s_grid, t_grid, vals, covariance_id)
