"""Constant metrics on T^d, Gaussian lattice sums and eigenvalue counting.

Coordinates on the torus are 2π-periodic, so the free Laplacian
``-g^{μν} ∂_μ ∂_ν`` has eigenvalues ``qᵀ G q`` for ``q ∈ Z^d`` where ``G`` is
the (constant) inverse metric. Everything here is a sum over that lattice.

Every truncated lattice sum carries a certified bound on the omitted terms.
The bounds are built from one-dimensional Gaussian tails using the smallest
eigenvalue of the quadratic form, so they are crude but rigorous.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.special import erfc, gammaln

from .errors import DomainError, ShapeError
from .summation import exact_sum, pruned_sum

__all__ = [
    "ConstantMetric",
    "ThetaResult",
    "theta_sum",
    "poisson_dual",
    "theta",
    "box_tail",
    "choose_cutoff",
    "box_chunks",
    "lattice_eigenvalues",
    "lattice_count",
    "weyl_count",
    "weyl_prediction",
    "coth_trace",
    "coth_trace_sum",
]

# Largest number of lattice points materialised at once.
_CHUNK_POINTS = 1 << 20


class ConstantMetric:
    """Constant flat metric on the 2π-periodic torus T^d.

    Parameters
    ----------
    inv_metric : array_like, shape (d, d)
        The contravariant metric ``g^{μν}``. Only its symmetric part is kept.
    """

    def __init__(self, inv_metric):
        G = np.atleast_2d(np.asarray(inv_metric, dtype=float))
        if G.ndim != 2 or G.shape[0] != G.shape[1]:
            raise ShapeError(f"inv_metric must be a square matrix, got shape {G.shape}")
        if not np.all(np.isfinite(G)):
            raise DomainError("inv_metric has non-finite entries")
        G = 0.5 * (G + G.T)
        evals = np.linalg.eigvalsh(G)
        if evals[0] <= 0.0:
            raise DomainError(
                f"inv_metric is not positive definite (smallest eigenvalue {evals[0]:.3e})"
            )
        g = np.linalg.inv(G)
        g = 0.5 * (g + g.T)
        cond = evals[-1] / evals[0]
        resid = np.max(np.abs(g @ G - np.eye(len(G))))
        if resid > 1e-12 * max(1.0, cond):
            raise DomainError(f"metric inversion residual {resid:.2e} too large")
        for arr in (G, g, evals):
            arr.setflags(write=False)
        self._G = G
        self._g = g
        self._evals = evals

    @classmethod
    def identity(cls, dim: int) -> "ConstantMetric":
        return cls(np.eye(dim))

    @classmethod
    def diagonal(cls, entries: Sequence[float]) -> "ConstantMetric":
        return cls(np.diag(np.asarray(entries, dtype=float)))

    @property
    def dim(self) -> int:
        return self._G.shape[0]

    @property
    def inv_metric(self) -> np.ndarray:
        return self._G

    @property
    def metric(self) -> np.ndarray:
        return self._g

    @property
    def sqrt_g(self) -> float:
        """``sqrt(det g_{μν})``."""
        return float(1.0 / math.sqrt(np.prod(self._evals)))

    @property
    def volume(self) -> float:
        return (2.0 * math.pi) ** self.dim * self.sqrt_g

    @property
    def lambda_min(self) -> float:
        return float(self._evals[0])

    @property
    def lambda_max(self) -> float:
        return float(self._evals[-1])

    def norm2(self, q) -> np.ndarray:
        """``qᵀ G q`` for each row of ``q``."""
        q = np.asarray(q, dtype=float)
        return np.sum((q @ self._G) * q, axis=-1)

    def raise_index(self, q) -> np.ndarray:
        """``q^μ = g^{μν} q_ν`` for each row of ``q``."""
        return np.asarray(q, dtype=float) @ self._G

    def scaled(self, c: float) -> "ConstantMetric":
        return ConstantMetric(c * self._G)

    def __eq__(self, other):
        return isinstance(other, ConstantMetric) and np.array_equal(self._G, other._G)

    def __hash__(self):
        return hash(self._G.tobytes())

    def __repr__(self):
        return f"ConstantMetric({self._G.tolist()!r})"


@dataclass(frozen=True)
class ThetaResult:
    value: float
    tail_bound: float
    cutoff_used: int


def _positive(x, name: str) -> float:
    x = float(x)
    if not (x > 0.0) or not math.isfinite(x):
        raise DomainError(f"{name} must be a positive finite number, got {x}")
    return x


def _one_sided_tail(a: float, r: float, weighted: bool) -> float:
    """Bound on ``sum_{m>=0} f(r+m)`` for ``f(x) = x^p exp(-a x^2)``, p in {0, 2}."""
    if r <= 0:
        return math.inf
    ra = r * math.sqrt(a)
    if not weighted:
        return math.exp(-a * r * r) + 0.5 * math.sqrt(math.pi / a) * erfc(ra)
    if ra < 1.0:
        # f is not yet decreasing at r
        return math.inf
    f_r = r * r * math.exp(-a * r * r)
    integral = r * math.exp(-a * r * r) / (2 * a) + math.sqrt(math.pi) / (4 * a**1.5) * erfc(ra)
    return f_r + integral


def box_tail(a: float, r: float, dim: int, weighted: bool = False) -> float:
    """Bound on the Gaussian mass of a (shifted) lattice outside a box.

    Bounds ``sum w(x) exp(-a |x|^2)`` over the points ``x`` of a translate of
    ``Z^d`` having at least one coordinate with ``|x_i| >= r``. The weight is
    ``w = 1``, or ``w = |x|^2`` when ``weighted``.
    """
    t0 = 2.0 * _one_sided_tail(a, r, False)
    s0 = 1.0 + math.sqrt(math.pi / a)
    if not weighted:
        return dim * t0 * s0 ** (dim - 1)
    t2 = 2.0 * _one_sided_tail(a, r, True)
    s2 = math.sqrt(math.pi) / (2 * a**1.5) + 2.0 / (math.e * a)
    per_axis = t2 * s0 ** (dim - 1)
    if dim > 1:
        per_axis += (dim - 1) * t0 * s2 * s0 ** (dim - 2)
    return dim * per_axis


def choose_cutoff(bound: Callable[[int], float], tol: float, q_max: int = 1 << 16) -> int:
    """Smallest ``Q >= 0`` with ``bound(Q) <= tol`` for a nonincreasing ``bound``."""
    if bound(0) <= tol:
        return 0
    hi = 1
    while bound(hi) > tol:
        hi *= 2
        if hi > q_max:
            raise DomainError(f"no lattice cutoff below {q_max} reaches tolerance {tol:g}")
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if bound(mid) <= tol:
            hi = mid
        else:
            lo = mid
    return hi


def box_chunks(lo, hi) -> Iterator[np.ndarray]:
    """Integer points of the box ``lo <= q <= hi`` in lexicographic order, in slabs."""
    lo = np.asarray(lo, dtype=np.int64)
    hi = np.asarray(hi, dtype=np.int64)
    d = len(lo)
    ranges = [np.arange(l, h + 1) for l, h in zip(lo, hi)]
    if any(len(r) == 0 for r in ranges):
        return
    rest = int(np.prod([len(r) for r in ranges[1:]])) if d > 1 else 1
    step = max(1, _CHUNK_POINTS // rest)
    first = ranges[0]
    for start in range(0, len(first), step):
        axes = [first[start:start + step]] + ranges[1:]
        grid = np.meshgrid(*axes, indexing="ij")
        yield np.stack([g.ravel() for g in grid], axis=-1)


def _drop_threshold(tol: float, Q: int, dim: int) -> float:
    """Per-term magnitude below which terms may be dropped at a cost of ``tol/1000``."""
    return 1e-3 * tol / (2 * Q + 1) ** dim


def _reduce_shift(shift, dim: int) -> np.ndarray:
    if shift is None:
        return np.zeros(dim)
    s = np.atleast_1d(np.asarray(shift, dtype=float))
    if s.shape != (dim,):
        raise ShapeError(f"shift must have length {dim}, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise DomainError("shift must be finite")
    # the lattice sum is periodic in the shift
    return s - np.round(s)


def theta_sum(metric: ConstantMetric, t: float, shift=None, tol: float = 1e-12) -> ThetaResult:
    """Direct evaluation of ``sum_q exp(-t (q+s)ᵀ G (q+s))`` over ``q ∈ Z^d``."""
    t = _positive(t, "t")
    tol = _positive(tol, "tol")
    d = metric.dim
    s = _reduce_shift(shift, d)
    a = t * metric.lambda_min
    offset = 1.0 - float(np.max(np.abs(s), initial=0.0))
    Q = choose_cutoff(lambda Q: box_tail(a, Q + offset, d), tol)
    tail = box_tail(a, Q + offset, d)
    value, dropped = pruned_sum(
        (np.exp(-t * metric.norm2(q + s)) for q in box_chunks([-Q] * d, [Q] * d)),
        _drop_threshold(tol, Q, d),
    )
    return ThetaResult(value, float(tail + dropped), Q)


def poisson_dual(metric: ConstantMetric, t: float, shift=None, tol: float = 1e-12) -> ThetaResult:
    """The same sum as :func:`theta_sum`, evaluated on the dual lattice.

    ``(π/t)^{d/2} det(G)^{-1/2} sum_k exp(-(π²/t) kᵀ G⁻¹ k) cos(2π k·s)``
    """
    t = _positive(t, "t")
    tol = _positive(tol, "tol")
    d = metric.dim
    s = _reduce_shift(shift, d)
    prefactor = (math.pi / t) ** (d / 2) * metric.sqrt_g
    a = math.pi**2 / (t * metric.lambda_max)
    Q = choose_cutoff(lambda Q: prefactor * box_tail(a, Q + 1.0, d), tol)
    tail = prefactor * box_tail(a, Q + 1.0, d)
    dual = ConstantMetric(metric.metric)
    c = math.pi**2 / t

    def terms(k):
        kf = k.astype(float)
        return np.exp(-c * dual.norm2(kf)) * np.cos(2 * math.pi * (kf @ s))

    total, dropped = pruned_sum(
        (terms(k) for k in box_chunks([-Q] * d, [Q] * d)), _drop_threshold(tol / prefactor, Q, d)
    )
    return ThetaResult(prefactor * total, float(tail + prefactor * dropped), Q)


def theta(metric: ConstantMetric, t: float, shift=None, tol: float = 1e-12) -> ThetaResult:
    """Pick the faster converging side: dual lattice for ``t < 1``, direct otherwise."""
    if float(t) < 1.0:
        return poisson_dual(metric, t, shift, tol)
    return theta_sum(metric, t, shift, tol)


def lattice_eigenvalues(metric: ConstantMetric, lam_max: float, shift=None) -> np.ndarray:
    """Sorted values ``(q+s)ᵀ G (q+s) <= lam_max`` with multiplicity."""
    d = metric.dim
    s = np.zeros(d) if shift is None else _reduce_shift(shift, d)
    lam_max = float(lam_max)
    if lam_max < 0:
        return np.zeros(0)
    # max |x_i| over the ellipsoid xᵀ G x <= λ is sqrt(λ g_ii)
    ext = np.floor(np.sqrt(lam_max * np.diag(metric.metric))).astype(np.int64) + 1
    out = []
    for q in box_chunks(-ext, ext):
        lam = metric.norm2(q + s)
        out.append(lam[lam <= lam_max])
    return np.sort(np.concatenate(out), kind="stable")


def lattice_count(metric: ConstantMetric, lam: float, shift=None) -> int:
    """Number of free-Laplacian eigenvalues ``<= lam`` (ties counted)."""
    return int(len(lattice_eigenvalues(metric, lam, shift)))


def weyl_count(eigenvalues, lam: float) -> int:
    """``N(λ) = #{eigenvalues <= λ}`` for an ascending array of eigenvalues."""
    ev = np.asarray(eigenvalues, dtype=float)
    return int(np.searchsorted(ev, float(lam), side="right"))


def weyl_prediction(metric: ConstantMetric, lam: float) -> float:
    d = metric.dim
    lam = float(lam)
    if lam < 0:
        raise DomainError("λ must be nonnegative")
    log_coeff = -0.5 * d * math.log(4 * math.pi) + math.log(metric.volume) - gammaln(d / 2 + 1)
    return math.exp(log_coeff) * lam ** (d / 2)


def coth_trace(t: float) -> float:
    """``Tr exp(-t sqrt(-Δ))`` on the unit circle, i.e. ``coth(t/2)``."""
    t = _positive(t, "t")
    return 1.0 / math.tanh(0.5 * t)


def coth_trace_sum(t: float, tol: float = 1e-14) -> float:
    """Direct sum ``sum_{q ∈ Z} exp(-t |q|)`` truncated with a geometric tail bound."""
    t = _positive(t, "t")
    tol = _positive(tol, "tol")
    ratio = -math.expm1(-t)
    # 2 sum_{q>N} e^{-tq} = 2 e^{-t(N+1)} / (1 - e^{-t})
    n_max = max(0, math.ceil(-math.log(tol * ratio / 2) / t))
    q = np.arange(1, n_max + 1, dtype=float)
    return 1.0 + 2.0 * exact_sum([np.exp(-t * q)])
