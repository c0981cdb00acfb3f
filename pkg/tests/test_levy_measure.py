import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate as si
from scipy.special import exp1

from levyfield.levy_measure import (DivergentIntegralError, GammaDensity, PointMass, UserDensity,
                                    auto_truncation)


def gamma_as_user(z=1.0):
    return UserDensity(lambda tau: z * np.exp(-tau) / tau, label="gamma")


# ------------------------------------------------------------------ moments

@pytest.mark.parametrize("m, expected", [
    (PointMass(1.0, 1.0), 1.0),
    (GammaDensity(2.0), 2.0),
    (PointMass(3.0, 2.0), 12.0),
])
def test_second_moment_examples(m, expected):
    assert m.second_moment() == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("m, expected", [
    (PointMass(1.0, 1.0), 1.0),
    (GammaDensity(1.0), 1.0),
    (GammaDensity(0.5), 0.5),
])
def test_first_moment_examples(m, expected):
    assert m.first_moment() == pytest.approx(expected, rel=1e-12)


def test_user_density_moments_by_quadrature_oracle():
    d = lambda tau: 2.0 * np.exp(-2.0 * tau) / tau ** 1.5
    m = UserDensity(d)
    ref1, _ = si.quad(lambda t: t * d(t), 0, np.inf, epsabs=1e-13, limit=200)
    ref2, _ = si.quad(lambda t: t * t * d(t), 0, np.inf, epsabs=1e-13, limit=200)
    assert m.first_moment() == pytest.approx(ref1, rel=1e-9)
    assert m.second_moment() == pytest.approx(ref2, rel=1e-9)


def test_user_density_with_infinite_second_moment_is_rejected():
    with pytest.raises(ValueError, match="second moment"):
        UserDensity(lambda tau: tau ** -3.5)
    with pytest.raises(ValueError, match="second moment"):
        UserDensity(lambda tau: 1.0 / (1.0 + tau) ** 2.5)


def test_user_density_with_infinite_first_moment_is_flagged_not_fatal():
    m = UserDensity(lambda tau: 1.0 / (1.0 + tau ** 4))
    assert m.has_finite_mean
    heavy = UserDensity(lambda tau: np.where(tau < 1.0, tau ** -2.5, 0.0), upper=1.0)
    assert not heavy.has_finite_mean


def test_negative_intensity_rejected():
    with pytest.raises(ValueError, match="intensity must be positive"):
        GammaDensity(-1.0)
    with pytest.raises(ValueError, match="intensity must be positive"):
        PointMass(-0.5)


# ---------------------------------------------------------- transforms

@pytest.mark.parametrize("m, lam, expected", [
    (PointMass(1.0), 0.0, 0.0),
    (PointMass(1.0), 1.0, 1.0 - math.exp(-1.0)),
    (GammaDensity(1.0), 1.0, 0.5),
])
def test_phi_examples(m, lam, expected):
    assert float(m.phi(lam)) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("m, lam, expected", [
    (GammaDensity(1.0), 0.0, 0.0),
    (PointMass(1.0), 1.0, math.exp(-1.0)),
    (GammaDensity(1.0), 1.0, 1.0 - math.log(2.0)),
])
def test_psi_examples(m, lam, expected):
    assert float(m.psi(lam)) == pytest.approx(expected, abs=1e-12)


def test_char_exponent_examples():
    assert complex(PointMass(1.0).char_exponent(0.0)) == 0j
    assert complex(PointMass(1.0).char_exponent(math.pi)) == pytest.approx(-2.0 - 1j * math.pi, abs=1e-12)
    # gamma: -(log(1 - i lam) + i lam) z
    got = complex(GammaDensity(1.0).char_exponent(1.0))
    assert got == pytest.approx(-(np.log(1 - 1j) + 1j), abs=1e-9)
    # independent oracle: scipy quadrature of the real and imaginary parts
    re, _ = si.quad(lambda t: (math.cos(t) - 1) * math.exp(-t) / t, 0, np.inf, limit=400)
    im, _ = si.quad(lambda t: (math.sin(t) - t) * math.exp(-t) / t, 0, np.inf, limit=400)
    assert got == pytest.approx(complex(re, im), abs=1e-8)


MEASURES = [PointMass(1.0), PointMass(2.5, 0.7), GammaDensity(1.0), GammaDensity(0.3)]


@pytest.mark.parametrize("m", MEASURES)
@given(lam=st.floats(0.0, 50.0), mu=st.floats(0.0, 50.0))
def test_phi_monotone_and_bounded(m, lam, mu):
    lo, hi = sorted((lam, mu))
    assert float(m.phi(lo)) <= float(m.phi(hi)) + 1e-15
    assert float(m.phi(lam)) <= min(m.first_moment(), lam * m.second_moment()) * (1 + 1e-12) + 1e-15


@pytest.mark.parametrize("m", MEASURES)
@given(lam=st.floats(0.01, 20.0))
def test_psi_derivative_is_phi_richardson(m, lam):
    errs = []
    for h in (1e-3, 1e-4):
        fd = (float(m.psi(lam + h)) - float(m.psi(lam - h))) / (2 * h)
        errs.append(abs(fd - float(m.phi(lam))))
    # O(h^2): shrinking h tenfold shrinks the error (down to roundoff)
    assert errs[1] <= max(errs[0], 1e-8)
    assert errs[0] <= 1e-5 * max(1.0, m.second_moment())


@pytest.mark.parametrize("m", MEASURES)
@given(a=st.floats(0.0, 10.0), b=st.floats(0.0, 10.0), w=st.floats(0.0, 1.0))
def test_psi_convex(m, a, b, w):
    mid = w * a + (1 - w) * b
    assert float(m.psi(mid)) <= w * float(m.psi(a)) + (1 - w) * float(m.psi(b)) + 1e-12


@pytest.mark.parametrize("m", MEASURES)
@given(lam=st.floats(-30.0, 30.0))
def test_char_exponent_properties(m, lam):
    c = complex(m.char_exponent(lam))
    assert c.real <= 1e-14
    assert complex(m.char_exponent(-lam)) == pytest.approx(c.conjugate(), abs=1e-10)


def test_closed_forms_match_user_density_quadrature():
    g, u = GammaDensity(1.0), gamma_as_user()
    lam = np.array([0.0, 1e-3, 0.1, 1.0, 7.0, 200.0])
    assert np.allclose(u.phi(lam), g.phi(lam), rtol=1e-9, atol=1e-15)
    assert np.allclose(u.psi(lam), g.psi(lam), rtol=1e-9, atol=1e-15)
    assert np.allclose(u.char_exponent(lam), -(np.log(1 - 1j * lam) + 1j * lam), rtol=1e-9, atol=1e-12)


# ----------------------------------------------------------- truncation

def test_truncation_examples():
    g = GammaDensity(1.0)
    assert g.truncated_intensity(0.1) == pytest.approx(1.8229240, abs=1e-7)
    assert g.truncated_mean(0.1) == pytest.approx(0.9048374, abs=1e-7)
    p = PointMass(2.0, 1.0)
    assert (p.truncated_intensity(0.5), p.truncated_mean(0.5), p.small_jump_l2(0.5)) == (2.0, 2.0, 0.0)


@pytest.mark.parametrize("eps", [1e-4, 0.01, 0.1, 1.0, 3.0])
def test_gamma_truncation_matches_user_density(eps):
    g, u = GammaDensity(1.0), gamma_as_user()
    assert u.truncated_intensity(eps) == pytest.approx(g.truncated_intensity(eps), rel=1e-9)
    assert u.truncated_intensity(eps) == pytest.approx(exp1(eps), rel=1e-9)
    assert u.truncated_mean(eps) == pytest.approx(g.truncated_mean(eps), rel=1e-9)
    assert u.small_jump_l2(eps) == pytest.approx(g.small_jump_l2(eps), rel=1e-9)


def test_infinite_activity_reports_divergence():
    with pytest.raises(DivergentIntegralError):
        GammaDensity(1.0).truncated_intensity(0.0)
    with pytest.raises(DivergentIntegralError):
        gamma_as_user().truncated_intensity(0.0)


def test_small_jump_l2_monotone_to_zero():
    g = GammaDensity(1.0)
    vals = [g.small_jump_l2(e) for e in (1.0, 0.2, 0.1, 0.05, 0.01, 1e-4)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-8
    assert g.small_jump_l2(0.01) == pytest.approx(0.01 ** 2 / 2, rel=0.01)


def test_auto_truncation_meets_budget():
    g = GammaDensity(1.0)
    eps = auto_truncation(g, 4.0, 1.0)
    assert g.small_jump_l2(eps) * 4.0 <= 1e-6
    assert g.small_jump_l2(eps * 1.01) * 4.0 > 1e-6 * 0.99
    assert auto_truncation(PointMass(1.0), 4.0, 1.0) == 0.0


# -------------------------------------------------------------- sampling

def test_point_mass_samples_are_constant(rng):
    assert np.all(PointMass(1.0).sample_jump(0.5, rng, size=100) == 1.0)


def test_gamma_sampling_mean_and_support(rng):
    g = GammaDensity(1.0)
    eps = 0.1
    x = g.sample_jump(eps, rng, size=1_000_000)
    assert np.all(x > eps)
    ref = g.truncated_mean(eps) / g.truncated_intensity(eps)
    assert ref == pytest.approx(0.4963, abs=1e-4)
    se = x.std(ddof=1) / math.sqrt(x.size)
    assert abs(x.mean() - ref) <= 4 * se


def test_gamma_sampling_distribution_ks(rng):
    from scipy import stats
    g = GammaDensity(1.0)
    eps = 0.05
    x = g.sample_jump(eps, rng, size=200_000)
    cdf = lambda t: 1.0 - exp1(np.maximum(t, eps)) / exp1(eps)
    assert stats.kstest(x, cdf).pvalue > 1e-4


def test_user_density_sampling_matches_quadrature_mean(rng):
    u = UserDensity(lambda tau: 2.0 * np.exp(-2.0 * tau) / tau ** 1.5)
    eps = 0.01
    x = u.sample_jump(eps, rng, size=400_000)
    ref = u.truncated_mean(eps) / u.truncated_intensity(eps)
    se = x.std(ddof=1) / math.sqrt(x.size)
    assert np.all(x > eps)
    assert abs(x.mean() - ref) <= 4 * se


def test_log_divergent_second_moment_is_rejected():
    with pytest.raises(ValueError, match="second moment"):
        UserDensity(lambda tau: 1.0 / (1.0 + tau ** 3))
