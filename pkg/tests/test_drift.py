import logging
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate as si

from levyfield import drift as dr
from levyfield.levy_measure import GammaDensity, PointMass, UserDensity
from levyfield.random_fields import CallableKappa, ConstantKappa

ONE = ConstantKappa(1.0)


def oracle_drift(measure, s, t):
    """Direct scipy dblquad of int_0^s int_0^t Phi(t - max(x,y)) dy dx."""
    f = lambda y, x: float(measure.phi(t - max(x, y)))
    below, _ = si.dblquad(f, 0, s, 0, lambda x: x, epsabs=1e-12, epsrel=1e-12)
    above, _ = si.dblquad(f, 0, s, lambda x: x, t, epsabs=1e-12, epsrel=1e-12)
    return below + above


@pytest.mark.parametrize("fn, args, expected", [
    (dr.drift_poisson_closed, (1.0, 1.0, 2.0), 1.0972089),
    (dr.drift_poisson_closed, (1.0, 1.0, 1.0), 0.2642411),
    (dr.drift_poisson_closed, (2.0, 1.0, 2.0), 2.1944178),
    (dr.drift_gamma_closed, (1.0, 1.0, 2.0), 0.8740622),
    (dr.drift_gamma_closed, (1.0, 1.0, 1.0), 0.2274113),
    (dr.drift_poisson_closed, (1.0, 0.0, 3.0), 0.0),
    (dr.drift_gamma_closed, (1.0, 0.0, 3.0), 0.0),
])
def test_closed_form_examples(fn, args, expected):
    assert fn(*args) == pytest.approx(expected, abs=1e-7)  # tabulated to 7 decimals


def test_diagonal_values_exact():
    assert dr.drift_poisson_closed(1.0, 1.0, 1.0) == pytest.approx(1.0 - 2 * math.exp(-1), abs=1e-15)
    assert dr.drift_gamma_closed(1.0, 1.0, 1.0) == pytest.approx(3 - 4 * math.log(2), abs=1e-15)


@pytest.mark.parametrize("measure", [PointMass(1.0), GammaDensity(1.0)])
def test_closed_forms_match_independent_scipy_oracle(measure):
    for s, t in [(1.0, 2.0), (0.3, 0.4), (2.5, 4.0)]:
        assert dr.drift_increment(measure, ONE, s, t) == pytest.approx(oracle_drift(measure, s, t), abs=1e-9)


def test_drift_increment_examples_and_errors():
    assert dr.drift_increment(PointMass(1.0), ONE, 1.0, 2.0) == pytest.approx(1.0972089, abs=1e-7)
    assert dr.drift_increment(GammaDensity(1.0), ONE, 1.0, 2.0) == pytest.approx(0.8740622, abs=1e-7)
    assert dr.drift_increment(GammaDensity(1.0), ONE, 0.0, 2.0) == 0.0
    with pytest.raises(ValueError):
        dr.drift_increment(PointMass(1.0), ONE, 2.0, 1.0)
    with pytest.raises(ValueError, match="closed form"):
        dr.drift_increment(PointMass(1.0, 2.0), ONE, 1.0, 2.0, method="closed")


def test_callable_kappa_quadrature_against_scipy():
    kap = CallableKappa(lambda x, y: 1.0 + 0.5 * np.sin(x * y), 1.5)
    m = PointMass(1.0)
    s, t = 0.8, 1.5
    f = lambda y, x: float(kap(x, y) * m.phi(kap(x, y) * (t - max(x, y))))
    ref = sum(si.dblquad(f, 0, s, lo, hi, epsabs=1e-12, epsrel=1e-12)[0]
              for lo, hi in ((0, lambda x: x), (lambda x: x, t)))
    assert dr.drift_increment(m, kap, s, t) == pytest.approx(ref, abs=1e-9)


MEASURES = [PointMass(1.0), PointMass(0.5, 2.0), GammaDensity(1.0)]


@pytest.mark.parametrize("m", MEASURES)
@given(a=st.floats(0.0, 3.0), b=st.floats(0.0, 3.0), t=st.floats(0.0, 3.0))
def test_drift_nonnegative_and_nondecreasing_in_s(m, a, b, t):
    s1, s2 = sorted((a, b))
    t = max(t, s2)
    d1 = dr.drift_increment(m, ONE, s1, t)
    d2 = dr.drift_increment(m, ONE, s2, t)
    assert d1 >= -1e-14
    assert d2 >= d1 - 1e-12


# scipy may warn on near-empty intervals; the comparison below still decides
@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
@pytest.mark.parametrize("m", [PointMass(2.0), GammaDensity(0.5)])
@given(s=st.floats(0.0, 3.0), dt=st.floats(0.0, 2.0))
def test_closed_antiderivatives_match_quadrature(m, s, dt):
    t = s + dt
    fwd, _ = si.quad(lambda u: dr.drift_increment(m, ONE, s, u), s, t, epsabs=1e-12, epsrel=1e-12)
    diag, _ = si.quad(lambda u: dr.drift_increment(m, ONE, u, u), 0, s, epsabs=1e-12, epsrel=1e-12)
    assert dr.closed_forward_integral(m, s, t) == pytest.approx(fwd, abs=1e-9)
    assert dr.closed_diagonal_integral(m, s) == pytest.approx(diag, abs=1e-9)


def test_psi_band_integral_matches_scipy():
    m = GammaDensity(1.0)
    s2, s1, t = 0.4, 1.1, 1.7
    f = lambda y, x: float(m.psi(t - max(x, y)))
    ref = sum(si.dblquad(f, s2, s1, lo, hi, epsabs=1e-12, epsrel=1e-12)[0]
              for lo, hi in ((0, lambda x: x), (lambda x: x, t)))
    assert dr.psi_band_integral(m, ONE, s2, s1, t) == pytest.approx(ref, abs=1e-9)


# -------------------------------------------------------------------- Gaussian

def test_gaussian_corrections():
    assert dr.NoGaussian().drift_correction(1.0, 2.0) == 0.0
    b = dr.BrownianSheetCovariance()
    assert b.drift_correction(1.0, 2.0) == pytest.approx(1.8333333, abs=5e-8)
    assert b.drift_correction(0.0, 2.0) == 0.0
    for s, t in [(1.0, 2.0), (0.3, 0.9), (1.5, 1.5)]:
        assert b.drift_correction(s, t, method="quadrature") == pytest.approx(b.drift_correction(s, t), abs=1e-9)
        fwd, _ = si.quad(lambda u: b.drift_correction(s, u), s, t)
        assert b.forward_integral(s, t) == pytest.approx(fwd, abs=1e-12)
    diag, _ = si.quad(lambda u: b.drift_correction(u, u), 0, 1.3)
    assert b.diagonal_integral(1.3) == pytest.approx(diag, abs=1e-12)


def test_user_grid_correction_matches_brownian_on_lattice():
    s_grid, t_grid = np.linspace(0, 1, 5), np.linspace(0, 2, 9)
    values = s_grid[:, None, None] * np.minimum(t_grid[None, :, None], t_grid[None, None, :])
    cov = dr.UserGridCovariance(s_grid, t_grid, values)
    b = dr.BrownianSheetCovariance()
    assert cov.drift_correction(0.5, 1.5) == pytest.approx(b.drift_correction(0.5, 1.5), abs=1e-9)
    with pytest.raises(ValueError, match="outside"):
        cov.drift_correction(0.5, 3.0)


# ------------------------------------------------------------ floor and curves

def test_positivity_floor_examples():
    assert dr.positivity_floor(PointMass(1.0), ONE, 2.0) == pytest.approx(4.0)
    assert dr.positivity_floor(GammaDensity(1.0), ONE, 2.0) == pytest.approx(4.0)
    assert dr.positivity_floor(PointMass(1.0), ONE, 0.0) == 0.0


def test_positivity_floor_unavailable_for_infinite_mean():
    heavy = UserDensity(lambda tau: np.where(tau < 1.0, tau ** -2.5, 0.0), upper=1.0)
    with pytest.raises(ValueError, match="floor unavailable"):
        dr.positivity_floor(heavy, ONE, 1.0)


def test_floor_curve_and_integral():
    c = dr.FloorCurve(0.5).bind(PointMass(1.0), ONE)
    assert c(2.0) == pytest.approx(4.5)
    assert c.integral(0.0, 2.0) == pytest.approx(1.0 + 8.0 / 3.0)
    kap = CallableKappa(lambda x, y: 1.0 + 0 * x * y, 1.0)
    c2 = dr.FloorCurve().bind(PointMass(1.0), kap)
    assert c2(2.0) == pytest.approx(4.0, rel=1e-12)
    assert c2.integral(0.0, 2.0) == pytest.approx(8.0 / 3.0, rel=1e-9)


def test_table_curve_interpolation_and_warning(caplog):
    c = dr.TableCurve((0.0, 1.0, 2.0), (0.0, 1.0, 4.0))
    assert c(1.5) == pytest.approx(2.5)
    assert c.integral(0.0, 2.0) == pytest.approx(0.5 + 2.5)
    with caplog.at_level(logging.WARNING):
        assert c(3.0) == 4.0
    assert "extrapolated" in caplog.text
    with pytest.raises(ValueError):
        dr.TableCurve((0.0, 0.0), (1.0, 2.0))
