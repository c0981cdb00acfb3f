import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from levyfield import drift as dr
from levyfield.levy_measure import GammaDensity, PointMass
from levyfield.montecarlo import collect
from levyfield.random_fields import CallableKappa, ConstantKappa, SheetRealization, simulate_batch
from levyfield.term_structure import (ModelSpec, bond_price, discounted_price, forward_rate,
                                      log_discounted_price, spot_rate)

ONE = ConstantKappa(1.0)
TWO_ATOMS = [(0.5, 0.3, 1.0), (0.8, 1.5, 1.0)]


def poisson(mode="ClosedForm", curve=None, horizon=(2.0, 2.0)):
    return ModelSpec(PointMass(1.0), ONE, curve or dr.FloorCurve(), horizon=horizon, trunc_eps=0.0,
                     drift_mode=mode)


def flat(r=0.03):
    return ModelSpec(PointMass(1e-300), ONE, dr.ConstantCurve(r), horizon=(3.0, 3.0), trunc_eps=0.0)


def test_forward_rate_example():
    # mu(0,1) = 1 plus the closed-form drift at (0.6, 1.0), plus X(0.6,1.0) = 0.4
    m = poisson()
    path = SheetRealization.from_atoms(TWO_ATOMS, (2.0, 2.0), 1.0)
    expected = 1.0 + dr.drift_poisson_closed(1.0, 0.6, 1.0) + 0.4
    assert forward_rate(m, path, 0.6, 1.0) == pytest.approx(expected, abs=1e-14)
    assert forward_rate(m, path, 0.6, 1.0) == pytest.approx(1.6026892, abs=1e-7)


def test_mu_example_and_s_zero():
    m = poisson()
    assert m.mu(1.0, 2.0) == pytest.approx(5.0972089, abs=1e-7)
    path = SheetRealization.from_atoms(TWO_ATOMS, (2.0, 2.0), 1.0)
    for t in (0.0, 0.9, 2.0):
        assert forward_rate(m, path, 0.0, t) == m.mu0(t)
    assert m.diagonal_drift_integral(0.0) == 0.0


def test_deterministic_model():
    m = flat(0.03)
    path = SheetRealization.from_atoms([], (3.0, 3.0), 0.0)
    for s, t in [(0.0, 1.0), (0.5, 2.5), (2.0, 2.0)]:
        assert forward_rate(m, path, s, t) == pytest.approx(0.03)
        assert spot_rate(m, path, s) == pytest.approx(0.03)
        assert bond_price(m, path, s, t) == pytest.approx(math.exp(-0.03 * (t - s)), rel=1e-14)
        assert discounted_price(m, path, s, t) == pytest.approx(math.exp(-0.03 * t), rel=1e-14)


def test_bond_price_examples():
    m = poisson()
    b = simulate_batch(m.measure, m.kappa, m.horizon, 0.0, np.random.default_rng(1), 20)
    assert np.all(bond_price(m, b, 1.3, 1.3) == 1.0)
    assert np.all(bond_price(m, b, 0.0, 2.0) == math.exp(-8.0 / 3.0))
    assert math.exp(-8.0 / 3.0) == pytest.approx(0.0694835, abs=1e-7)
    assert np.all(discounted_price(m, b, 0.0, 2.0) == bond_price(m, b, 0.0, 2.0))
    spot = np.exp(-(m.diagonal_drift_integral(1.1) + b.integral_X_spot(1.1)))
    assert np.allclose(discounted_price(m, b, 1.1, 1.1), spot, rtol=1e-14)


@given(s=st.floats(0.0, 2.0), u=st.floats(0.0, 1.0), seed=st.integers(0, 1000))
def test_prices_positive_and_bounded_under_floor(s, u, seed):
    m = poisson()
    t = s + u * (2.0 - s)
    b = simulate_batch(m.measure, m.kappa, m.horizon, 0.0, np.random.default_rng(seed), 10)
    p = bond_price(m, b, s, t)
    z = discounted_price(m, b, s, t)
    assert np.all(p > 0) and np.all(p <= 1.0)
    assert np.all(z > 0) and np.all(z <= 1.0)
    assert np.allclose(np.log(z), log_discounted_price(m, b, s, t))


@given(s=st.floats(0.0, 2.0), a=st.floats(0.0, 1.0), b=st.floats(0.0, 1.0))
def test_mu_integral_monotone_in_t(s, a, b):
    m = poisson()
    t1, t2 = sorted((s + a * (2.0 - s), s + b * (2.0 - s)))
    assert m.forward_mu_integral(s, t1) <= m.forward_mu_integral(s, t2) + 1e-14


@pytest.mark.parametrize("measure", [PointMass(1.0), GammaDensity(1.0)])
def test_crosscheck_bond_prices_agree(measure):
    rng = np.random.default_rng(3)
    closed = ModelSpec(measure, ONE, dr.FloorCurve(), horizon=(2.0, 2.0), drift_mode="ClosedForm")
    quad = closed.with_drift_mode("Quadrature")
    cross = closed.with_drift_mode("CrossCheck")
    b = simulate_batch(measure, ONE, (2.0, 2.0), closed.trunc_eps, rng, 5)
    for _ in range(10):
        t = rng.uniform(0.1, 2.0)
        s = rng.uniform(0.0, t)
        pc, pq = bond_price(closed, b, s, t), bond_price(quad, b, s, t)
        assert np.allclose(pc, pq, rtol=1e-6, atol=0)
        assert np.allclose(discounted_price(closed, b, s, t), discounted_price(cross, b, s, t), rtol=1e-6)


def test_model_errors():
    with pytest.raises(ValueError, match="horizon"):
        ModelSpec(PointMass(1.0), ONE, dr.FloorCurve(), horizon=(0.0, 1.0))
    with pytest.raises(ValueError, match="drift_mode"):
        ModelSpec(PointMass(1.0), ONE, dr.FloorCurve(), drift_mode="Fast")
    with pytest.raises(ValueError, match="constant κ = 1"):
        ModelSpec(PointMass(1.0), CallableKappa(lambda x, y: 1.0 + 0 * x * y, 1.0), dr.FloorCurve(),
                  drift_mode="ClosedForm")
    with pytest.raises(ValueError, match="Poisson"):
        ModelSpec(PointMass(1.0, 2.0), ONE, dr.FloorCurve(), drift_mode="CrossCheck")
    m = poisson()
    path = SheetRealization.from_atoms([], (2.0, 2.0), 1.0)
    with pytest.raises(ValueError):
        forward_rate(m, path, 1.5, 1.0)
    with pytest.raises(ValueError, match="outside"):
        forward_rate(m, path, 1.0, 2.5)


def test_mixed_model_requires_gaussian():
    m = ModelSpec(PointMass(1.0), ONE, dr.FloorCurve(), dr.BrownianSheetCovariance(), horizon=(1.0, 1.0),
                  trunc_eps=0.0)
    path = SheetRealization.from_atoms([], (1.0, 1.0), 1.0)
    with pytest.raises(ValueError, match="Gaussian"):
        bond_price(m, path, 0.5, 1.0)
    assert m.mu(0.5, 1.0) == pytest.approx(1.0 + dr.drift_poisson_closed(1.0, 0.5, 1.0) + 0.25 - 0.125 / 6)


def test_expected_spot_rate_is_diagonal_drift():
    m = poisson()
    s = 1.2
    r = collect(m, 50_000, 8, lambda mm, b, g: spot_rate(mm, b, s))
    ref = s * s + (2 - 2 * s + s * s - 2 * math.exp(-s))
    assert m.mu(s, s) == pytest.approx(ref, abs=1e-12)
    assert abs(r.mean() - ref) <= 4 * r.std(ddof=1) / math.sqrt(r.size)


def test_table_curve_model_uses_trapezoid_integral():
    curve = dr.TableCurve((0.0, 1.0, 2.0), (4.0, 4.5, 5.0))
    m = ModelSpec(PointMass(1.0), ONE, curve, horizon=(2.0, 2.0), trunc_eps=0.0)
    assert m.initial_bond_price(2.0) == pytest.approx(math.exp(-9.0))
    assert m.floor_violation() is None
