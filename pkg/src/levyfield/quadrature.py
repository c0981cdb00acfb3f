"""Numerical integration used throughout the package.

Two families live here:

* an adaptive, globally-subdividing Gauss-Kronrod (G10/K21) rule that is
  vectorised both over nodes and over the integrand's output components, so
  a single call can integrate a whole family of functions (for instance the
  Laplace-type transforms of a Levy measure for many arguments at once);
* fixed tensor-product Gauss-Legendre rules on rectangles whose integrand is
  only piecewise smooth, with the kink along the diagonal ``y = x``.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Callable

import numpy as np

__all__ = [
    "QuadratureError",
    "integrate",
    "integrate_2d",
    "gauss_legendre",
    "gl_rectangle",
    "gl_rectangle_diagonal",
]

# Kronrod abscissae on [-1, 1]; the odd entries are the 10 Gauss nodes.
_XK = np.array([
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.0,
    -0.148874338981631210884826001129720,
    -0.294392862701460198131126603103866,
    -0.433395394129247190799265943165784,
    -0.562757134668604683339000099272694,
    -0.679409568299024406234327365114874,
    -0.780817726586416897063717578345042,
    -0.865063366688984510732096688423493,
    -0.930157491355708226001207180059508,
    -0.973906528517171720077964012084452,
    -0.995657163025808080735527280689003,
])
_WK = np.array([
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077958109831074,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
    0.147739104901338491374841515972068,
    0.142775938577060080797094273138717,
    0.134709217311473325928054001771707,
    0.123491976262065851077958109831074,
    0.109387158802297641899210590325805,
    0.093125454583697605535065465083366,
    0.075039674810919952767043140916190,
    0.054755896574351996031381300244580,
    0.032558162307964727478818972459390,
    0.011694638867371874278064396062192,
])
_WG = np.zeros(21)
_WG[1::2] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
    0.295524224714752870173892994651338,
    0.269266719309996355091226921569469,
    0.219086362515982043995534934228163,
    0.149451349150580593145776339657697,
    0.066671344308688137593568809893332,
]


class QuadratureError(ArithmeticError):
    """Adaptive integration did not reach the requested tolerance."""

    def __init__(self, message, value=None, error=None):
        super().__init__(message)
        self.value = value
        self.error = error


def _gk_batch(f, lo, hi):
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    nodes = mid[:, None] + half[:, None] * _XK[None, :]
    vals = np.asarray(f(nodes.ravel()))
    vals = vals.reshape((lo.size, 21) + vals.shape[1:])
    scale = half.reshape((-1,) + (1,) * (vals.ndim - 2))
    kron = scale * np.tensordot(_WK, vals, axes=([0], [1]))
    gauss = scale * np.tensordot(_WG, vals, axes=([0], [1]))
    return kron, np.abs(kron - gauss)


def integrate(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    *,
    epsabs: float = 1e-10,
    epsrel: float = 1e-9,
    points=(),
    limit: int = 20000,
):
    """Adaptive G10/K21 integral of ``f`` over ``[a, b]``.

    ``f`` receives a 1-D array of nodes and returns an array whose first axis
    runs over the nodes; any trailing axes are integrated component-wise and
    the tolerance must hold for every component. ``points`` are interior
    breakpoints (kinks, discontinuities) that seed the initial partition.

    Returns ``(value, abserr)``; raises :class:`QuadratureError` when the
    partition exceeds ``limit`` intervals or collapses to roundoff.
    """
    a = float(a)
    b = float(b)
    if a == b:
        probe = np.asarray(f(np.array([a])))
        zero = np.zeros(probe.shape[1:], dtype=probe.dtype)
        return (zero if zero.ndim else zero[()]), (np.zeros(zero.shape) if zero.ndim else 0.0)
    sign = 1.0
    if b < a:
        a, b = b, a
        sign = -1.0
    edges = [a] + sorted(float(p) for p in points if a < p < b) + [b]
    edges = np.unique(np.asarray(edges))
    lo, hi = edges[:-1].copy(), edges[1:].copy()
    val, err = _gk_batch(f, lo, hi)
    min_width = 64 * np.finfo(float).eps * max(abs(a), abs(b), 1e-300)

    while True:
        total = val.sum(axis=0)
        total_err = err.sum(axis=0)
        tol = np.maximum(epsabs, epsrel * np.abs(total))
        failing = total_err > tol
        if not np.any(failing):
            break
        share = tol / lo.size
        over = (err > share) & failing
        bad = over.reshape(lo.size, -1).any(axis=1) if over.ndim > 1 else over
        bad &= (hi - lo) > min_width
        if not bad.any() or lo.size + bad.sum() > limit:
            raise QuadratureError(
                f"adaptive quadrature on [{a}, {b}] stalled at {lo.size} intervals; "
                f"achieved error {np.max(total_err):.3e} vs tolerance {np.min(tol):.3e}",
                value=sign * total,
                error=total_err,
            )
        keep = ~bad
        mids = 0.5 * (lo[bad] + hi[bad])
        new_lo = np.concatenate([lo[bad], mids])
        new_hi = np.concatenate([mids, hi[bad]])
        new_val, new_err = _gk_batch(f, new_lo, new_hi)
        lo = np.concatenate([lo[keep], new_lo])
        hi = np.concatenate([hi[keep], new_hi])
        val = np.concatenate([val[keep], new_val])
        err = np.concatenate([err[keep], new_err])

    total = sign * val.sum(axis=0)
    total_err = err.sum(axis=0)
    if np.ndim(total) == 0:
        return total[()], float(total_err)
    return total, total_err


def integrate_2d(g, x_lo, x_hi, y_lo, y_hi, *, epsabs=1e-10, epsrel=1e-9, x_points=()):
    """Iterated adaptive integral of ``g(x, y)`` for ``x`` in ``[x_lo, x_hi]``.

    ``y_lo`` and ``y_hi`` are constants or vectorised callables of ``x``. The
    inner range is mapped onto ``[0, 1]`` so that one adaptive partition
    serves every outer node at once. ``g`` must broadcast over its arguments.
    """
    lo_fn = y_lo if callable(y_lo) else (lambda x, c=float(y_lo): np.full_like(x, c))
    hi_fn = y_hi if callable(y_hi) else (lambda x, c=float(y_hi): np.full_like(x, c))
    width = max(float(x_hi) - float(x_lo), 1e-300)
    inner_abs = epsabs / width / 4.0
    inner_rel = epsrel / 4.0

    def outer(xs):
        ylo = lo_fn(xs)
        span = hi_fn(xs) - ylo

        def inner(v):
            y = ylo[None, :] + span[None, :] * v[:, None]
            return g(xs[None, :], y) * span[None, :]

        value, _ = integrate(inner, 0.0, 1.0, epsabs=inner_abs, epsrel=inner_rel)
        return value

    return integrate(outer, x_lo, x_hi, epsabs=epsabs, epsrel=epsrel, points=x_points)


@lru_cache(maxsize=16)
def gauss_legendre(n: int):
    """Gauss-Legendre nodes and weights on ``[0, 1]``."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def gl_rectangle(g, x_lo, x_hi, y_lo, y_hi, n=64, y_breaks=()):
    """Tensor Gauss-Legendre integral of ``g`` over a rectangle.

    ``y_breaks`` split the y-range into separately integrated strips.
    """
    u, w = gauss_legendre(n)
    xs = x_lo + (x_hi - x_lo) * u
    wx = (x_hi - x_lo) * w
    edges = [y_lo] + sorted(b for b in y_breaks if y_lo < b < y_hi) + [y_hi]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        ys = a + (b - a) * u
        vals = g(xs[:, None], ys[None, :])
        total = total + wx @ vals @ ((b - a) * w)
    return total


def gl_rectangle_diagonal(g, x_lo, x_hi, y_lo, y_hi, n=64, y_breaks=()):
    """Tensor Gauss-Legendre integral of ``g`` over ``[x_lo,x_hi]x[y_lo,y_hi]``
    where ``g`` is smooth on either side of the diagonal ``y = x`` only.

    The outer x-range is cut where the diagonal enters or leaves the
    rectangle, and for every outer node the inner y-range is cut at ``y = x``
    (and at any fixed ``y_breaks``).
    """
    if x_hi <= x_lo or y_hi <= y_lo:
        return 0.0
    u, w = gauss_legendre(n)
    cuts = [x_lo] + sorted(c for c in (y_lo, y_hi) if x_lo < c < x_hi) + [x_hi]
    fixed = sorted(b for b in y_breaks if y_lo < b < y_hi)
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        xs = a + (b - a) * u
        wx = (b - a) * w
        diag = np.clip(xs, y_lo, y_hi)
        # per outer node: breakpoints y_lo, fixed..., diag, y_hi
        bounds = np.sort(
            np.column_stack([np.full(n, y_lo), *(np.full(n, f) for f in fixed), diag, np.full(n, y_hi)]),
            axis=1,
        )
        for j in range(bounds.shape[1] - 1):
            lo_y = bounds[:, j]
            span = bounds[:, j + 1] - lo_y
            ys = lo_y[:, None] + span[:, None] * u[None, :]
            vals = g(xs[:, None], ys)
            total = total + np.sum(wx * span * (vals @ w))
    return total
