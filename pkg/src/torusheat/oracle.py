"""Brute-force spectra of truncated operators in the plane-wave basis.

The basis is ``{e^{iqx} ⊗ e_a : |q_i| <= Q}`` ordered by ``q`` (row-major in
``q + Q``) and then by fiber index. Operators are composed from finite
matrices after truncation, so entries within ``2B`` of the cutoff (B the
field bandwidth) differ from the infinite operator; only the interior block
is exact.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .clifford import GammaRep
from .errors import DomainError, ShapeError
from .fields import FourierField, GaugeField, fourier_norm
from .lattice import ConstantMetric, _positive, box_tail
from .summation import exact_sum

__all__ = [
    "TruncatedOperator",
    "Spectrum",
    "lattice_basis",
    "convolution_matrix",
    "assemble_laplace",
    "assemble_dirac",
    "spectrum",
    "exact_heat_trace",
    "exact_spectral_action",
    "counting",
    "truncation_tail",
    "write_spectrum_csv",
    "DEFAULT_MAX_BLOCK",
]

DEFAULT_MAX_BLOCK = 6000
_HERMITIAN_TOL = 1e-12


def lattice_basis(dim: int, Q: int) -> np.ndarray:
    """All ``q`` with ``|q_i| <= Q`` in row-major order, shape ``((2Q+1)^d, d)``."""
    if Q < 0:
        raise DomainError("cutoff Q must be nonnegative")
    side = np.arange(-Q, Q + 1)
    grids = np.meshgrid(*([side] * dim), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)


def _index(q: np.ndarray, Q: int) -> np.ndarray:
    side = 2 * Q + 1
    idx = np.zeros(q.shape[0], dtype=np.int64)
    for i in range(q.shape[1]):
        idx = idx * side + (q[:, i] + Q)
    return idx


def convolution_matrix(f: FourierField, Q: int) -> sp.csr_matrix:
    """Multiplication by ``f`` on the truncated basis: block ``(q, q')`` is ``c f̂(q - q')``."""
    d, n = f.dim, f.fiber_rank
    c = fourier_norm(d)
    basis = lattice_basis(d, Q)
    M = basis.shape[0]
    rows, cols, vals = [], [], []
    for k in f.modes():
        target = basis + np.asarray(k, dtype=np.int64)
        inside = np.all(np.abs(target) <= Q, axis=1)
        src = np.nonzero(inside)[0]
        dst = _index(target[inside], Q)
        block = c * f.coeff(k)
        for a in range(n):
            for b in range(n):
                if block[a, b] == 0:
                    continue
                rows.append(dst * n + a)
                cols.append(src * n + b)
                vals.append(np.full(len(src), block[a, b]))
    if not rows:
        return sp.csr_matrix((M * n, M * n), dtype=complex)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(M * n, M * n), dtype=complex)


def _momentum(dim: int, Q: int, mu: int, rank: int) -> sp.csr_matrix:
    q = lattice_basis(dim, Q)[:, mu].astype(float)
    return sp.diags(np.repeat(1j * q, rank)).tocsr()


@dataclass(frozen=True, eq=False)
class TruncatedOperator:
    metric: ConstantMetric
    fiber_rank: int
    cutoff: int
    kind: str
    matrix: sp.csr_matrix
    bandwidth: int = 0
    warning: str | None = None

    @property
    def basis(self) -> list[tuple[tuple[int, ...], int]]:
        q = lattice_basis(self.metric.dim, self.cutoff)
        return [(tuple(int(x) for x in row), a) for row in q for a in range(self.fiber_rank)]

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def hermiticity_residual(self) -> float:
        diff = self.matrix - self.matrix.getH()
        return float(np.max(np.abs(diff.data))) if diff.nnz else 0.0

    def interior_indices(self, margin: int) -> np.ndarray:
        """Basis positions with every ``|q_i| <= Q - margin``."""
        q = lattice_basis(self.metric.dim, self.cutoff)
        inside = np.nonzero(np.all(np.abs(q) <= self.cutoff - margin, axis=1))[0]
        n = self.fiber_rank
        return (inside[:, None] * n + np.arange(n)[None, :]).ravel()

    def descriptor(self) -> dict:
        return {"kind": self.kind, "dim": self.metric.dim, "fiber_rank": self.fiber_rank,
                "cutoff": self.cutoff, "size": self.size}


def _check_cutoff(Q: int, bandwidth: int, margin: int) -> str | None:
    if Q < 2 * bandwidth + margin:
        msg = (f"cutoff Q={Q} is below 2B+{margin}={2 * bandwidth + margin} for field "
               f"bandwidth B={bandwidth}; truncation bias is not controlled")
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
        return msg
    return None


def _hermitian_part(raw: sp.spmatrix) -> sp.csr_matrix:
    """Check the residual of the composed matrix, then remove rounding asymmetry."""
    raw = raw.tocsr()
    scale = max(1.0, float(np.max(np.abs(raw.data))) if raw.nnz else 1.0)
    diff = raw - raw.getH()
    res = float(np.max(np.abs(diff.data))) if diff.nnz else 0.0
    if res > _HERMITIAN_TOL * scale:
        raise DomainError(f"assembled operator is not hermitian: residual {res:.3e}")
    return (0.5 * (raw + raw.getH())).tocsr()


def assemble_laplace(metric: ConstantMetric, E: FourierField | None, omega: GaugeField | None,
                     Q: int, margin: int = 4) -> TruncatedOperator:
    """``L = -g^{μν}(P_μ + W_μ)(P_ν + W_ν) - M_E`` on the truncated basis."""
    d = metric.dim
    ranks = {f.fiber_rank for f in (E, omega) if f is not None}
    if len(ranks) > 1:
        raise ShapeError(f"fiber rank mismatch between E and ω: {sorted(ranks)}")
    for f in (E, omega):
        if f is not None and f.dim != d:
            raise ShapeError(f"field dimension {f.dim} does not match metric dimension {d}")
    n = ranks.pop() if ranks else 1
    B = max(E.bandwidth if E is not None else 0, omega.bandwidth if omega is not None else 0)
    warning = _check_cutoff(Q, B, margin)
    G = metric.inv_metric
    D = []
    for mu in range(d):
        op = _momentum(d, Q, mu, n)
        if omega is not None and not omega[mu].is_zero:
            op = op + convolution_matrix(omega[mu], Q)
        D.append(op)
    L = sp.csr_matrix(D[0].shape, dtype=complex)
    for mu in range(d):
        for nu in range(d):
            if G[mu, nu] != 0:
                L = L - G[mu, nu] * (D[mu] @ D[nu])
    if E is not None and not E.is_zero:
        L = L - convolution_matrix(E, Q)
    return TruncatedOperator(metric, n, Q, "laplace_type", _hermitian_part(L), B, warning)


def assemble_dirac(metric: ConstantMetric, A: GaugeField | None, gammas: GammaRep, Q: int,
                   margin: int = 4) -> TruncatedOperator:
    """``D = iγ^μ(P_μ + W_μ[A])`` on plane waves ⊗ spinors ⊗ gauge fiber."""
    d = metric.dim
    if gammas.dim != d:
        raise ShapeError(f"gamma dimension {gammas.dim} does not match metric dimension {d}")
    if A is not None and A.dim != d:
        raise ShapeError(f"gauge field dimension {A.dim} does not match metric dimension {d}")
    N = gammas.spinor_rank
    n = A.fiber_rank if A is not None else 1
    B = A.bandwidth if A is not None else 0
    warning = _check_cutoff(Q, B, margin)
    M = (2 * Q + 1) ** d
    eye_n = sp.identity(n, dtype=complex, format="csr")
    eye_M = sp.identity(M, dtype=complex, format="csr")
    Dop = sp.csr_matrix((M * N * n, M * N * n), dtype=complex)
    for mu in range(d):
        cov = _momentum(d, Q, mu, N * n)
        if A is not None and not A[mu].is_zero:
            cov = cov + convolution_matrix(A[mu].tensor_identity(N), Q)
        gam = sp.kron(eye_M, sp.kron(sp.csr_matrix(1j * gammas[mu]), eye_n))
        Dop = Dop + gam @ cov
    return TruncatedOperator(metric, N * n, Q, "dirac", _hermitian_part(Dop), B, warning)


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    source: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.source.get("kind", "laplace_type")

    def __len__(self) -> int:
        return len(self.eigenvalues)

    def positive_part(self) -> np.ndarray:
        """Eigenvalues of the nonnegative operator: ``λ`` for L, ``λ²`` (sorted) for D."""
        if self.kind == "dirac":
            return np.sort(self.eigenvalues**2, kind="stable")
        return self.eigenvalues


def spectrum(op: TruncatedOperator, max_block: int = DEFAULT_MAX_BLOCK) -> Spectrum:
    """All eigenvalues, ascending; independent blocks are diagonalised separately."""
    A = op.matrix
    n_comp, labels = connected_components(abs(A) > 0, directed=False)
    order = np.argsort(labels, kind="stable")
    sizes = np.bincount(labels, minlength=n_comp)
    if sizes.max(initial=0) > max_block:
        raise DomainError(
            f"coupled block of dimension {sizes.max()} exceeds the limit {max_block}"
        )
    starts = np.concatenate([[0], np.cumsum(sizes)])
    by_size: dict[int, list[int]] = {}
    for c in range(n_comp):
        by_size.setdefault(int(sizes[c]), []).append(c)
    A = A.tocsr()
    out = []
    for size, comps in sorted(by_size.items()):
        idx = np.stack([order[starts[c]:starts[c + 1]] for c in comps])
        blocks = np.empty((len(comps), size, size), dtype=complex)
        for j, rows in enumerate(idx):
            blocks[j] = A[rows][:, rows].toarray()
        out.append(np.linalg.eigvalsh(blocks).ravel())
    ev = np.sort(np.concatenate(out) if out else np.zeros(0), kind="stable")
    return Spectrum(ev, op.descriptor())


def exact_heat_trace(spec: Spectrum, t: float) -> float:
    """``sum_i exp(-t λ_i)`` over the nonnegative operator (``D²`` for a Dirac spectrum)."""
    t = _positive(t, "t")
    return exact_sum([np.exp(-t * spec.positive_part())])


def exact_spectral_action(spec: Spectrum, f, Lambda: float) -> float:
    """``sum_i f(λ_i/Λ²)`` with ``λ_i`` the eigenvalues of ``D²`` (or of L)."""
    Lambda = _positive(Lambda, "Λ")
    s = spec.positive_part() / Lambda**2
    vals = np.asarray(f(s), dtype=float)
    if vals.shape != s.shape or not np.all(np.isfinite(vals)):
        bad = s[~np.isfinite(vals)] if vals.shape == s.shape else s[:1]
        raise DomainError(f"cutoff function is not finite at spectral point(s) {bad[:3]}")
    return exact_sum([vals])


def counting(spec: Spectrum, lam: float) -> int:
    """``N(λ)``: eigenvalues of the nonnegative operator that are ``<= λ``."""
    return int(np.searchsorted(spec.positive_part(), float(lam), side="right"))


def truncation_tail(op: TruncatedOperator, t: float) -> float:
    """Gaussian mass ``rank · sum e^{-t q²}`` of the free modes outside the interior box.

    The interior radius is ``Q - 2B``; modes beyond it are either missing or
    distorted by the cutoff, so this bounds the truncation bias of the free
    part and estimates it for weak fields. Free ``D²`` has the same
    eigenvalues ``q²`` per spinor component.
    """
    t = _positive(t, "t")
    r = op.cutoff - 2 * op.bandwidth + 1
    if r <= 0:
        return math.inf
    a = t * op.metric.lambda_min
    return op.fiber_rank * box_tail(a, r, op.metric.dim)


def write_spectrum_csv(spec: Spectrum, target=None) -> str:
    """Write ``index,eigenvalue`` rows; returns the CSV text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "eigenvalue"])
    for i, lam in enumerate(spec.eigenvalues):
        w.writerow([i, repr(float(lam))])
    text = buf.getvalue()
    if target is not None:
        if hasattr(target, "write"):
            target.write(text)
        else:
            with open(target, "w", newline="") as fh:
                fh.write(text)
    return text
