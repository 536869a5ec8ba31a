import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from torusheat.asymptotics import (
    S4Series,
    bernoulli_numbers,
    bv_h,
    bv_q,
    coth_taylor,
    flat_torus_coefficients,
    form_factor_limits,
    large_t_heat,
    large_t_terms,
    s4_coefficient,
    s4_extract,
    s4_heat_trace,
    s4_optimal_truncation,
    s4_spectral_sum,
    small_t_heat,
    small_t_terms,
    torus_leading,
)
from torusheat.duhamel import form_factor_v, heat_trace_second_order
from torusheat.errors import DomainError, SecularZeroModeError
from torusheat.fields import FourierField, field_strength
from torusheat.lattice import ConstantMetric, theta_sum
from torusheat.oracle import assemble_laplace, exact_heat_trace, spectrum

from helpers import cos_field, random_field, random_gauge

CIRCLE = ConstantMetric.identity(1)


def h_quad(z):
    return quad(lambda x: math.exp(-x * (1 - x) * z), 0, 1, epsabs=0, epsrel=1e-13)[0]


@pytest.mark.parametrize("z", [0.0, 1e-8, 0.3, 0.999, 1.0, 1.001, 7.0, 120.0, 2500.0])
def test_h_against_quadrature(z):
    assert bv_h(z) == pytest.approx(h_quad(z), rel=1e-12)


@pytest.mark.parametrize("z", [1e-6, 0.5, 0.999, 1.001, 3.0, 90.0])
def test_q_against_quadrature(z):
    assert bv_q(z) == pytest.approx((1 - h_quad(z)) / (2 * z), rel=1e-9)


def test_h_q_at_origin_and_infinity():
    assert bv_h(0.0) == 1.0
    assert bv_q(0.0) == pytest.approx(1 / 12, rel=1e-15)
    assert 0.95 <= 400 * bv_h(400) / 2 <= 1.05
    assert bv_h(1e6) * 1e6 / 2 == pytest.approx(1.0, rel=1e-5)


@given(z=st.floats(0, 1e4))
def test_h_q_bounds_and_monotone(z):
    h, q = bv_h(z), bv_q(z)
    assert 0 < h <= 1 and 0 < q <= 1 / 12 + 1e-16
    assert bv_h(z * 1.01 + 1e-6) <= h


def test_series_switch_is_continuous():
    for f in (bv_h, bv_q):
        below, above = f(1 - 1e-12), f(1 + 1e-12)
        assert abs(below - above) <= 1e-12


def test_bernoulli_numbers():
    B = bernoulli_numbers(12)
    assert B[:5] == [1, Fraction(-1, 2), Fraction(1, 6), 0, Fraction(-1, 30)]
    assert B[12] == Fraction(-691, 2730)
    with pytest.raises(DomainError):
        bernoulli_numbers(-1)


def test_s4_rationals():
    assert s4_coefficient(0) == Fraction(11, 90)
    assert s4_coefficient(1) == Fraction(31, 1890)


def test_s4_lower_bounds_hold():
    assert S4Series.build(50).violations() == []


def test_s4_series_diverges():
    a = [float(s4_coefficient(k)) for k in range(8, 30)]
    assert all(b / c > 1 for c, b in zip(a, a[1:]))


@pytest.mark.parametrize("t", [0.05, 0.1, 0.2])
def test_s4_optimal_truncation_matches_spectral_sum(t):
    opt = s4_optimal_truncation(t)
    exact = s4_spectral_sum(t)
    assert abs(opt.value - exact) <= 2 * opt.error_estimate + 1e-12 * exact


def test_s4_spectral_sum_direct():
    n = np.arange(2, 400)
    assert s4_spectral_sum(0.01) == pytest.approx(
        math.fsum((4 / 3) * (n**3 - n) * np.exp(-0.01 * n * n)), rel=1e-13)


def test_s4_coefficient_extraction():
    lead, second, third = s4_extract(1e-3)
    assert lead == pytest.approx(2 / 3, abs=1e-3)
    assert second == pytest.approx(-2 / 3, abs=1e-3)
    assert third == pytest.approx(11 / 90, abs=1e-3)
    assert s4_heat_trace(0.05, 3) == pytest.approx(s4_spectral_sum(0.05), rel=1e-6)


def test_coth_taylor():
    assert abs(coth_taylor(0.1) - 1 / math.tanh(0.05)) < 1e-8
    assert coth_taylor(0.1, n_terms=8) == pytest.approx(1 / math.tanh(0.05), rel=1e-15)


def test_torus_leading_circle():
    # Poisson: θ(1) - √π = 2√π sum_n exp(-π²n²)
    gap = theta_sum(CIRCLE, 1.0).value - torus_leading(CIRCLE, 1.0)
    assert gap == pytest.approx(2 * math.sqrt(math.pi) * math.exp(-math.pi**2), rel=1e-6)
    assert gap == pytest.approx(1.83e-4, rel=1e-2)


@pytest.mark.parametrize("p", [1, 3, 10])
def test_form_factor_limit_laws(p):
    lim = form_factor_limits(p, 0.01)
    assert lim.bv == pytest.approx(form_factor_v(p, 0.01), rel=1e-9)
    big_t = form_factor_limits(p, 60.0)
    assert big_t.large_t == pytest.approx(form_factor_v(p, 60.0), rel=1e-9)
    large = form_factor_limits(1000 * p, 0.5)
    assert large.large_p == pytest.approx(form_factor_v(1000 * p, 0.5), rel=1e-5)


def test_form_factor_limits_at_zero_momentum():
    assert form_factor_limits(0, 0.5, ("bv",)).bv == pytest.approx(0.5**1.5 / (4 * math.sqrt(math.pi)))
    with pytest.raises(DomainError):
        form_factor_limits(0, 0.5)


def _second_order_difference(metric, E, om, t):
    b = heat_trace_second_order(metric, E, om, t, tol=1e-14)
    return b.K1 + b.K2


@pytest.mark.parametrize("t", [1e-2, 1e-3])
def test_small_t_regime(t):
    rng = np.random.default_rng(4)
    m = ConstantMetric([[1.0, 0.3], [0.3, 0.8]])
    # abelian: the field strength has no commutator terms beyond second order
    E = random_field(rng, 2, 1, [(1, 0), (0, 0), (1, 2)], "hermitian")
    om = random_gauge(rng, 2, 1, [[(0, 1)], [(1, 1)]])
    approx = small_t_heat(m, E, field_strength(om), t)
    assert approx == pytest.approx(_second_order_difference(m, E, om, t), rel=1e-12)


def test_large_t_regime():
    rng = np.random.default_rng(6)
    m = ConstantMetric([[1.0, 0.3], [0.3, 0.8]])
    E = random_field(rng, 2, 1, [(1, 0), (1, 2)], "hermitian")
    om = random_gauge(rng, 2, 1, [[(0, 1)], [(1, 1)]])
    t = 50.0
    approx = large_t_heat(m, E, field_strength(om), t)
    assert approx == pytest.approx(_second_order_difference(m, E, om, t), rel=1e-9)


def test_large_t_linear_only_with_zero_mode():
    E = cos_field(0.1, constant=0.5)
    with pytest.raises(SecularZeroModeError):
        large_t_terms(CIRCLE, E, None, 10.0)
    terms = large_t_terms(CIRCLE, E, None, 10.0, quadratic=False)
    assert terms.quadratic_E == 0.0 and terms.linear > 0


def test_regime_terms_total():
    E = cos_field(0.2, constant=0.1)
    r = small_t_terms(CIRCLE, E, None, 0.1)
    assert r.total == r.linear + r.quadratic_E + r.quadratic_omega


def test_flat_torus_coefficients_structure():
    m = ConstantMetric([[1.0, 0.2], [0.2, 0.5]])
    c = flat_torus_coefficients(m, fiber_rank=3)
    assert c[0] == pytest.approx(3 * m.volume / (4 * math.pi))
    assert c[1] == c[3] == 0.0 and c[2] == 0.0 and c[4] == 0.0
    with pytest.raises(DomainError):
        c[6]


def test_flat_torus_a4_from_oracle():
    # d=2: K(t) = a0/t + a2 + a4 t + O(t²)
    m = ConstantMetric.identity(2)
    E = FourierField(2, 1, {(1, 0): [[0.15]], (-1, 0): [[0.15]], (0, 0): [[0.2]]}, "hermitian")
    c = flat_torus_coefficients(m, E)
    spec = spectrum(assemble_laplace(m, E, None, 40))
    est = [(exact_heat_trace(spec, t) - c[0] / t - c[2]) / t for t in (0.04, 0.02)]
    richardson = 2 * est[1] - est[0]
    assert richardson == pytest.approx(c[4], rel=1e-3)
