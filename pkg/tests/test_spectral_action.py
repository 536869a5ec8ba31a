import math

import numpy as np
import pytest

from torusheat.clifford import build_gammas
from torusheat.errors import DivergentMomentError, DomainError, InsufficientCutoffError
from torusheat.fields import FourierField, pure_gauge
from torusheat.lattice import ConstantMetric, theta_sum
from torusheat.oracle import assemble_dirac, counting, spectrum
from torusheat.spectral_action import (
    CutoffFunction,
    action_asymptotics,
    dirac_heat_coefficients,
    large_p_form_factor,
    moment_fk,
    moment_phi,
    moment_relation_residuals,
    required_cutoff,
    spectral_action_exact,
    universal_w_limit,
)

from helpers import random_gauge, single_abelian_mode

T2 = ConstantMetric.identity(2)
G2 = build_gammas(T2)


def cubic_density(t):
    # Laplace transform is (1 + s)^{-3}
    return 0.5 * t * t * math.exp(-t)


def test_indicator_moments():
    f = CutoffFunction.indicator_unit()
    assert moment_fk(f, 1) == pytest.approx(2 / math.sqrt(math.pi), rel=1e-14)
    assert moment_fk(f, 2) == pytest.approx(1.0, rel=1e-14)
    assert moment_fk(f, 4) == pytest.approx(0.5, rel=1e-14)
    assert f.value_at_zero == 1.0


def test_tabulated_moments():
    f = CutoffFunction.tabulated([0, 0.5, 1], [1, 0.5, 0])
    assert moment_fk(f, 2) == pytest.approx(0.5, rel=1e-12)
    # f = 1 - s on [0, 1]: f_4 = ∫ (1-s) s ds = 1/6
    assert moment_fk(f, 4) == pytest.approx(1 / 6, rel=1e-12)
    assert moment_fk(f, 1) == pytest.approx(4 / 3 / math.sqrt(math.pi), rel=1e-10)
    assert f(np.array([0.25, 2.0])).tolist() == [0.75, 0.0]


def test_laplace_density_moments_and_relations():
    f = CutoffFunction.laplace_density(cubic_density)
    assert f(0.0) == pytest.approx(1.0, rel=1e-10)
    assert f(1.0) == pytest.approx(0.125, rel=1e-10)
    assert moment_fk(f, 2) == pytest.approx(0.5, rel=1e-10)
    assert moment_fk(f, 4) == pytest.approx(0.5, rel=1e-10)
    assert moment_phi(f, 1) == pytest.approx(0.5, rel=1e-10)
    assert max(moment_relation_residuals(f).values()) < 1e-9


def test_exponential_relations_trivial():
    f = CutoffFunction.exponential()
    assert all(moment_fk(f, k) == 1.0 for k in (1, 2, 3, 4))
    assert max(moment_relation_residuals(f).values()) == 0.0


def test_divergent_moment_detected():
    f = CutoffFunction.laplace_density(lambda t: t * math.exp(-t))
    with pytest.raises(DivergentMomentError, match="t → 0"):
        moment_phi(f, 0)
    with pytest.raises(DivergentMomentError):
        moment_fk(f, 4)


def test_invalid_cutoffs():
    with pytest.raises(DomainError):
        CutoffFunction("gaussian")
    with pytest.raises(DomainError):
        CutoffFunction.tabulated([0.1, 1], [1, 0])
    with pytest.raises(DomainError):
        CutoffFunction.exponential()(-1.0)
    with pytest.raises(DomainError):
        moment_phi(CutoffFunction.indicator_unit(), 1)


def test_free_exponential_action_is_theta_squared():
    # Tr exp(-D²/Λ²) on T² = 2 θ(1/Λ²)²
    val = spectral_action_exact(T2, None, G2, CutoffFunction.exponential(), 5.0)
    assert val == pytest.approx(2 * theta_sum(ConstantMetric.identity(1), 1 / 25).value ** 2,
                                rel=1e-12)


def test_indicator_action_is_counting():
    f = CutoffFunction.indicator_unit()
    spec = spectrum(assemble_dirac(T2, None, G2, 12, margin=0))
    for lam in (1.0, 2.5, 5.0, 7.3):
        assert spectral_action_exact(T2, None, G2, f, lam, Q=12) == counting(spec, lam**2)
    vals = [spectral_action_exact(T2, None, G2, f, lam, Q=12) for lam in np.linspace(0.5, 8, 16)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_action_positive_with_field():
    rng = np.random.default_rng(0)
    A = random_gauge(rng, 2, 2, [[(1, 0)], [(0, 1)]], 0.3)
    val = spectral_action_exact(T2, A, G2, CutoffFunction.exponential(), 1.5, tol=1e-6)
    assert val > 0


def test_pure_gauge_action_unchanged():
    alpha = FourierField(2, 1, {(1, 0): [[0.2]], (-1, 0): [[0.2]]}, "hermitian")
    A = pure_gauge(alpha)
    f = CutoffFunction.exponential()
    gauged = spectral_action_exact(T2, A, G2, f, 3.0, Q=40)
    free = spectral_action_exact(T2, None, G2, f, 3.0, Q=40)
    assert gauged == pytest.approx(free, rel=1e-10)
    assert abs(spectral_action_exact(T2, A, G2, f, 3.0, Q=40, subtract_free=True)) < 1e-9


def test_insufficient_cutoff_reports_requirement():
    f = CutoffFunction.exponential()
    need = required_cutoff(T2, None, G2, f, 10.0, 1e-10)
    with pytest.raises(InsufficientCutoffError) as info:
        spectral_action_exact(T2, None, G2, f, 10.0, Q=10)
    assert info.value.required_q == need > 10


def test_asymptotic_series_with_field():
    # exponential cutoff on T²: Tr e^{-tD²} = a0/t + a2 + a4 t + ..., so the
    # remainder after the Λ² and Λ⁰ terms is a4/Λ² at leading order
    A = single_abelian_mode(2, (1, 0), 1, 0.3)
    f = CutoffFunction.exponential()
    coeffs = dirac_heat_coefficients(T2, A, G2)
    assert coeffs[2] == 0.0
    asym = action_asymptotics(coeffs, f)
    rem = [(spectral_action_exact(T2, A, G2, f, lam) - asym.evaluate(lam)) * lam**2
           for lam in (5.0, 10.0)]
    assert rem[1] == pytest.approx(coeffs[4], rel=0.02)
    assert abs(rem[1] - coeffs[4]) < abs(rem[0] - coeffs[4])


def test_free_asymptotics_match():
    f = CutoffFunction.exponential()
    asym = action_asymptotics(dirac_heat_coefficients(T2, None, G2), f)
    assert asym.terms[0][0] == 2
    assert asym.evaluate(10.0) == pytest.approx(200 * math.pi, rel=1e-15)


def test_large_p_plateau():
    rows = large_p_form_factor(T2, G2, [50, 75, 100], 1.0)
    p4w = [r.p4w for r in rows]
    assert max(p4w) - min(p4w) <= 5e-3 * abs(min(p4w))
    assert all(r.w < 0 for r in rows)


def test_large_p_small_lambda_suppression():
    w_small = large_p_form_factor(T2, G2, [10], 0.2)[0].w
    w_one = large_p_form_factor(T2, G2, [10], 1.0)[0].w
    assert abs(w_small / w_one) < 1e-6


@pytest.mark.parametrize("lam", [1.0, 2.0])
def test_large_p_near_universal_law(lam):
    row = large_p_form_factor(T2, G2, [100], lam)[0]
    ref = universal_w_limit(T2, G2.spinor_rank, 100.0**2, lam)
    assert row.w / ref == pytest.approx(1.0, abs=1e-2)
    assert universal_w_limit(T2, 2, 1.0, 1.0) == pytest.approx(-1 / math.pi, rel=1e-15)


def test_large_p_rejects_zero_momentum():
    with pytest.raises(DomainError):
        large_p_form_factor(T2, G2, [0], 1.0)
