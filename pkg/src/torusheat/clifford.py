"""Hermitian gamma matrices for a constant metric and the Dirac endomorphism."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .fields import FieldStrength, FourierField
from .lattice import ConstantMetric

__all__ = ["GammaRep", "flat_gammas", "build_gammas", "dirac_endomorphism"]

_S1 = np.array([[0, 1], [1, 0]], dtype=complex)
_S2 = np.array([[0, -1j], [1j, 0]], dtype=complex)
_S3 = np.array([[1, 0], [0, -1]], dtype=complex)


def flat_gammas(dim: int) -> np.ndarray:
    """Hermitian ``γ^a`` with ``{γ^a, γ^b} = 2 δ^{ab}``, shape ``(d, N, N)``, ``N = 2^{⌊d/2⌋}``.

    Even dimensions are built by doubling, ``γ ↦ σ1 ⊗ γ`` plus ``σ2 ⊗ 1``,
    ``σ3 ⊗ 1``; an odd dimension appends the (hermitian) chirality matrix of
    the even dimension below.
    """
    if dim < 1:
        raise ShapeError("dimension must be positive")
    if dim == 1:
        return np.ones((1, 1, 1), dtype=complex)
    gam = [_S1, _S2]
    cur = 2
    while cur + 2 <= dim:
        eye = np.eye(gam[0].shape[0])
        gam = [np.kron(_S1, g) for g in gam] + [np.kron(_S2, eye), np.kron(_S3, eye)]
        cur += 2
    if cur < dim:
        n = cur // 2
        chi = (1j) ** n * gam[0]
        for g in gam[1:]:
            chi = chi @ g
        gam.append(chi)
    return np.array(gam)


def _spd_sqrt(G: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(G)
    return (V * np.sqrt(w)) @ V.T


@dataclass(frozen=True, eq=False)
class GammaRep:
    """``γ^μ = e^μ_a γ^a`` with ``e`` the principal square root of ``g^{μν}``."""

    metric: ConstantMetric
    gammas: np.ndarray

    @property
    def dim(self) -> int:
        return self.metric.dim

    @property
    def spinor_rank(self) -> int:
        return self.gammas.shape[-1]

    def __getitem__(self, mu: int) -> np.ndarray:
        return self.gammas[mu]

    def commutator(self, mu: int, nu: int) -> np.ndarray:
        g = self.gammas
        return g[mu] @ g[nu] - g[nu] @ g[mu]

    def anticommutator_residual(self) -> float:
        g = self.gammas
        G = self.metric.inv_metric
        eye = np.eye(self.spinor_rank)
        worst = 0.0
        for mu in range(self.dim):
            for nu in range(self.dim):
                r = g[mu] @ g[nu] + g[nu] @ g[mu] - 2 * G[mu, nu] * eye
                worst = max(worst, float(np.max(np.abs(r))))
        return worst


def build_gammas(metric: ConstantMetric) -> GammaRep:
    frame = _spd_sqrt(metric.inv_metric)
    flat = flat_gammas(metric.dim)
    gam = np.einsum("ma,aij->mij", frame, flat)
    # exact hermiticity; the frame is real so this only removes rounding
    gam = 0.5 * (gam + np.conj(np.swapaxes(gam, -1, -2)))
    gam.setflags(write=False)
    return GammaRep(metric, gam)


def dirac_endomorphism(omega_f: FieldStrength, gammas: GammaRep) -> FourierField:
    """``E = ¼ [γ^μ, γ^ν] ⊗ Ω_{μν}`` on the fiber spinor ⊗ gauge.

    This is the endomorphism that makes ``D² = -(g^{μν}∇_μ∇_ν + E)`` for
    ``D = iγ^μ(∂_μ + A_μ)`` with ``Ω = F[A]``.
    """
    if omega_f.dim != gammas.dim:
        raise ShapeError(
            f"field strength dimension {omega_f.dim} != gamma dimension {gammas.dim}"
        )
    d, n, N = omega_f.dim, omega_f.fiber_rank, gammas.spinor_rank
    comms = np.array([[gammas.commutator(mu, nu) for nu in range(d)] for mu in range(d)])
    coeffs = {}
    for k in omega_f.modes():
        F = omega_f.coeff_array(k)
        coeffs[k] = 0.25 * np.einsum("mnab,mnij->aibj", comms, F).reshape(N * n, N * n)
    return FourierField(d, N * n, coeffs, "hermitian")
