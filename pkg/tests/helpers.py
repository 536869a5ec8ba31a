"""Random field builders shared by the test modules."""
import math

import numpy as np

from torusheat.fields import FourierField, GaugeField
from torusheat.lattice import ConstantMetric


def spd_metric(rng, dim, cond_max=10.0):
    Q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    w = np.exp(rng.uniform(0.0, math.log(cond_max), size=dim))
    w /= w.min()
    return ConstantMetric(Q @ np.diag(w) @ Q.T)


def random_matrix(rng, n, kind):
    X = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    if kind == "hermitian":
        return 0.5 * (X + X.conj().T)
    return 0.5 * (X - X.conj().T)


def random_field(rng, dim, n, modes, kind, amplitude=1.0):
    """A field of the given reality type with ``±k`` for every ``k`` in ``modes``."""
    coeffs = {}
    sign = 1.0 if kind == "hermitian" else -1.0
    for k in modes:
        k = tuple(k)
        neg = tuple(-x for x in k)
        X = amplitude * random_matrix(rng, n, kind)
        if k == neg:
            coeffs[k] = X
        else:
            X = amplitude * (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
            coeffs[k] = X
            coeffs[neg] = sign * X.conj().T
    return FourierField(dim, n, coeffs, kind)


def random_gauge(rng, dim, n, modes_per_component, amplitude=1.0):
    return GaugeField(tuple(random_field(rng, dim, n, modes, "antihermitian", amplitude)
                            for modes in modes_per_component))


def cos_field(eps, dim=1, constant=0.0):
    """Scalar ``E(x) = ε cos x_1 + ε·constant``."""
    c = (2 * math.pi) ** (dim / 2)
    e1 = tuple([1] + [0] * (dim - 1))
    m1 = tuple(-x for x in e1)
    coeffs = {e1: [[eps * c / 2]], m1: [[eps * c / 2]]}
    if constant:
        coeffs[(0,) * dim] = [[eps * constant * c]]
    return FourierField(dim, 1, coeffs, "hermitian")


def single_abelian_mode(dim, k, direction, amplitude):
    """``A_ν = i a δ_{ν,direction} cos(k·x)`` scaled so ``|Â(±k)| = a(2π)^{d/2}/2``."""
    c = (2 * math.pi) ** (dim / 2)
    k = tuple(k)
    neg = tuple(-x for x in k)
    comps = []
    for nu in range(dim):
        if nu == direction:
            v = [[1j * amplitude * c / 2]]
            comps.append(FourierField(dim, 1, {k: v, neg: v}, "antihermitian"))
        else:
            comps.append(FourierField.zero(dim, 1, "antihermitian"))
    return GaugeField(tuple(comps))
