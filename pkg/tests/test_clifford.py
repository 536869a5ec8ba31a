import numpy as np
import pytest
from hypothesis import given, strategies as st

from torusheat.clifford import build_gammas, dirac_endomorphism, flat_gammas
from torusheat.fields import field_strength
from torusheat.lattice import ConstantMetric

from helpers import random_gauge, spd_metric


@pytest.mark.parametrize("dim", range(1, 8))
def test_flat_gammas_clifford_relation(dim):
    g = flat_gammas(dim)
    N = 2 ** (dim // 2)
    assert g.shape == (dim, N, N)
    for a in range(dim):
        assert np.allclose(g[a], g[a].conj().T)
        for b in range(dim):
            ac = g[a] @ g[b] + g[b] @ g[a]
            assert np.allclose(ac, 2 * (a == b) * np.eye(N), atol=1e-14)


@given(seed=st.integers(0, 2**32 - 1), dim=st.integers(1, 6))
def test_curved_gammas_anticommutator(seed, dim):
    m = spd_metric(np.random.default_rng(seed), dim)
    g = build_gammas(m)
    assert g.anticommutator_residual() <= 1e-12 * max(1.0, m.lambda_max)
    for mu in range(dim):
        assert np.allclose(g[mu], g[mu].conj().T)


@given(seed=st.integers(0, 2**32 - 1), dim=st.integers(2, 4))
def test_dirac_endomorphism_hermitian_and_spinor_traceless(seed, dim):
    rng = np.random.default_rng(seed)
    m = spd_metric(rng, dim)
    g = build_gammas(m)
    modes = [[tuple(int(x) for x in rng.integers(-1, 2, dim))] for _ in range(dim)]
    A = random_gauge(rng, dim, 2, modes)
    E = dirac_endomorphism(field_strength(A), g)
    assert E.kind == "hermitian"
    N = g.spinor_rank
    for k in E.modes():
        block = E.coeff(k).reshape(N, 2, N, 2)
        assert np.allclose(np.einsum("aiaj->ij", block), 0, atol=1e-12)


def test_dirac_endomorphism_square_trace():
    # tr_s (¼[γ^μ,γ^ν]F_μν)² = -(N/2) F_μν F^μν for abelian F
    m = ConstantMetric([[1.0, 0.2, 0.0], [0.2, 0.9, 0.1], [0.0, 0.1, 1.2]])
    g = build_gammas(m)
    F = np.array([[0, 0.3, -0.1], [-0.3, 0, 0.7], [0.1, -0.7, 0]])
    E = 0.25 * sum(g.commutator(a, b) * F[a, b] for a in range(3) for b in range(3))
    G = m.inv_metric
    FF = np.einsum("ab,am,bn,mn->", F, G, G, F)
    assert np.trace(E @ E).real == pytest.approx(-(g.spinor_rank / 2) * FF)
