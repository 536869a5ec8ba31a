import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from torusheat.errors import DomainError, ShapeError
from torusheat.fields import (
    FourierField,
    GaugeField,
    field_strength,
    load_field,
    load_gauge_field,
    pure_gauge,
)

from helpers import random_field, random_gauge


def test_constant_field_evaluates_to_value():
    f = FourierField.constant(2.5, 3, "hermitian")
    assert np.allclose(f.evaluate_at([0.1, 0.2, 0.3]), 2.5)


def test_hermitian_reality_is_checked():
    with pytest.raises(DomainError):
        FourierField(1, 1, {(1,): [[1.0]], (-1,): [[2.0]]}, "hermitian")


def test_shape_mismatch_rejected():
    with pytest.raises(ShapeError):
        FourierField(1, 2, {(1,): np.eye(3)})


def test_gauge_field_requires_antihermitian():
    f = FourierField(1, 1, {(0,): [[1.0]]}, "hermitian")
    with pytest.raises(DomainError):
        GaugeField((f,))


@given(seed=st.integers(0, 2**32 - 1))
def test_hermitian_field_takes_hermitian_values(seed):
    rng = np.random.default_rng(seed)
    f = random_field(rng, 2, 2, [(1, 0), (1, -2), (0, 0)], "hermitian")
    v = f.evaluate_at(rng.uniform(0, 2 * math.pi, 2))
    assert np.allclose(v, v.conj().T, atol=1e-12)


@given(seed=st.integers(0, 2**32 - 1))
def test_multiply_matches_pointwise_product(seed):
    rng = np.random.default_rng(seed)
    a = random_field(rng, 1, 2, [(1,), (2,)], "hermitian")
    b = random_field(rng, 1, 2, [(0,), (1,)], "antihermitian")
    grid_a, grid_b = a.on_grid(16), b.on_grid(16)
    prod = a.multiply(b).on_grid(16)
    assert np.allclose(prod, grid_a @ grid_b, atol=1e-10)


@given(seed=st.integers(0, 2**32 - 1))
def test_integral_trace_product_matches_grid(seed):
    rng = np.random.default_rng(seed)
    a = random_field(rng, 2, 2, [(1, 0), (0, 1)], "hermitian")
    b = random_field(rng, 2, 2, [(1, 0), (1, 1)], "hermitian")
    N = 12
    ga, gb = a.on_grid(N), b.on_grid(N)
    grid = np.einsum("xyij,xyji->", ga, gb) * (2 * math.pi / N) ** 2
    assert a.integral_trace_product(b) == pytest.approx(grid, abs=1e-9)


@given(seed=st.integers(0, 2**32 - 1))
def test_serialization_round_trip(seed):
    rng = np.random.default_rng(seed)
    f = random_field(rng, 2, 2, [(1, 0), (2, -1)], "hermitian")
    doc = json.loads(json.dumps(f.to_dict()))
    assert FourierField.from_dict(doc) == f
    assert load_field(json.dumps(doc)) == f


def test_unknown_keys_rejected():
    doc = FourierField.constant(1.0, 1).to_dict()
    doc["extra"] = 1
    with pytest.raises(ShapeError):
        FourierField.from_dict(doc)


def test_gauge_round_trip():
    rng = np.random.default_rng(0)
    g = random_gauge(rng, 2, 1, [[(1, 0)], [(0, 1)]])
    back = load_gauge_field(json.loads(json.dumps(g.to_dict())))
    assert all(a == b for a, b in zip(g, back))


@given(seed=st.integers(0, 2**32 - 1))
def test_pure_gauge_has_zero_curvature(seed):
    rng = np.random.default_rng(seed)
    alpha = random_field(rng, 2, 1, [(1, 0), (1, 2)], "hermitian")
    F = field_strength(pure_gauge(alpha, fiber_rank=2))
    assert F.is_zero or all(
        np.max(np.abs(F.coeff_array(k))) < 1e-12 for k in F.modes())


def test_field_strength_abelian_single_mode():
    # ω_1 = i a cos(x_0)·c: Ω_01 = ∂_0 ω_1
    c = 2 * math.pi
    w1 = FourierField(2, 1, {(1, 0): [[0.5j * c]], (-1, 0): [[0.5j * c]]}, "antihermitian")
    om = GaugeField((FourierField.zero(2, 1, "antihermitian"), w1))
    F = field_strength(om)
    assert F[0, 1].coeff((1, 0))[0, 0] == pytest.approx(1j * 0.5j * c)
    assert F[1, 0].coeff((1, 0))[0, 0] == pytest.approx(-1j * 0.5j * c)


def test_nonabelian_commutator_term():
    rng = np.random.default_rng(4)
    om = random_gauge(rng, 2, 2, [[(0, 0)], [(0, 0)]])
    F = field_strength(om)
    x0, x1 = om[0].zero_mode, om[1].zero_mode
    expected = (2 * math.pi) ** -1 * (x0 @ x1 - x1 @ x0)
    assert np.allclose(F[0, 1].zero_mode, expected)
