"""Closed-form regimes of the torus heat trace and the S⁴ asymptotic series."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.special import dawsn

from .errors import DomainError, SecularZeroModeError
from .fields import FieldStrength, FourierField
from .lattice import ConstantMetric, _positive
from .summation import exact_sum

__all__ = [
    "bv_h",
    "bv_q",
    "small_t_terms",
    "small_t_heat",
    "large_t_terms",
    "large_t_heat",
    "FormFactorLimits",
    "form_factor_limits",
    "bernoulli_numbers",
    "s4_coefficient",
    "S4Series",
    "S4_LEADING",
    "s4_heat_trace",
    "s4_spectral_sum",
    "s4_extract",
    "OptimalTruncation",
    "s4_optimal_truncation",
    "coth_taylor",
    "torus_leading",
    "HeatCoefficients",
    "flat_torus_coefficients",
]

# below this z, h and q use their Taylor series
_SERIES_Z = 1.0
_SERIES_TERMS = 30


def _h_series(z: float) -> float:
    # ∫₀¹ (α(1-α))^n dα = n!²/(2n+1)!
    term = 1.0
    out = []
    for n in range(_SERIES_TERMS):
        if n:
            term *= -z * n / ((2 * n) * (2 * n + 1))
        out.append(term)
    return math.fsum(out)


def _q_series(z: float) -> float:
    # (1 - h)/(2z) = ½ sum_{n>=1} (-1)^{n+1} z^{n-1} n!/(2n+1)!
    term = 1.0 / 6.0
    out = [term]
    for n in range(2, _SERIES_TERMS):
        term *= -z * n / ((2 * n) * (2 * n + 1))
        out.append(term)
    return 0.5 * math.fsum(out)


def bv_h(z) -> float:
    """``h(z) = ∫₀¹ exp(-α(1-α) z) dα``, via ``h(z) = 2 D(√z/2)/√z`` with D Dawson's integral."""
    z = float(z)
    if not z >= 0 or math.isinf(z):
        raise DomainError(f"z must be finite and nonnegative, got {z}")
    if z < _SERIES_Z:
        return _h_series(z)
    r = math.sqrt(z)
    return 2.0 * float(dawsn(0.5 * r)) / r


def bv_q(z) -> float:
    """``q(z) = -(h(z) - 1)/(2z)``, with ``q(0) = 1/12``."""
    z = float(z)
    if not z >= 0 or math.isinf(z):
        raise DomainError(f"z must be finite and nonnegative, got {z}")
    if z < _SERIES_Z:
        return _q_series(z)
    return 0.5 * (1.0 - bv_h(z)) / z


# --------------------------------------------------------------------------
# heat trace regimes


def _tr(a, b) -> complex:
    return complex(np.einsum("ij,ji->", a, b))


def _neg(k):
    return tuple(-x for x in k)


def _omega_contraction(metric: ConstantMetric, omega_f: FieldStrength, k) -> float:
    """``tr Ω̂_{μν}(-k) Ω̂^{μν}(k)``."""
    G = metric.inv_metric
    a = omega_f.coeff_array(_neg(k))
    b = omega_f.coeff_array(k)
    b_up = np.einsum("ma,nb,abij->mnij", G, G, b)
    return complex(np.einsum("mnij,mnji->", a, b_up)).real


def _e_contraction(E: FourierField, k) -> float:
    return _tr(E.coeff(_neg(k)), E.coeff(k)).real


@dataclass(frozen=True)
class RegimeTerms:
    """The three pieces of a regime formula; ``total`` is their sum."""

    linear: float
    quadratic_E: float
    quadratic_omega: float

    @property
    def total(self) -> float:
        return self.linear + self.quadratic_E + self.quadratic_omega


def small_t_terms(metric: ConstantMetric, E: FourierField | None,
                  omega_f: FieldStrength | None, t: float) -> RegimeTerms:
    """Pieces of ``(4πt)^{-d/2} ∫√g tr[tE + t² E ½h(-t∂²) E + t² Ω_{μν} q(-t∂²) Ω^{μν}]``."""
    t = _positive(t, "t")
    d = metric.dim
    pre = (4 * math.pi * t) ** (-0.5 * d) * metric.sqrt_g
    lin = qE = qW = 0.0
    if E is not None:
        lin = pre * t * (2 * math.pi) ** (0.5 * d) * float(np.trace(E.zero_mode).real)
        qE = pre * t * t * exact_sum([[0.5 * _e_contraction(E, k) * bv_h(t * metric.norm2(np.array(k, float)))
                                       for k in E.modes()]])
    if omega_f is not None:
        qW = pre * t * t * exact_sum([[_omega_contraction(metric, omega_f, k)
                                       * bv_q(t * metric.norm2(np.array(k, float)))
                                       for k in omega_f.modes()]])
    return RegimeTerms(lin, qE, qW)


def small_t_heat(metric, E, omega_f, t) -> float:
    """Small-t approximation of ``Tr exp(-tL) - Tr exp(-tL₀)``."""
    return small_t_terms(metric, E, omega_f, t).total


def large_t_terms(metric: ConstantMetric, E: FourierField | None,
                  omega_f: FieldStrength | None, t: float,
                  quadratic: bool = True) -> RegimeTerms:
    """Pieces of ``t/(2π)^d ∫ tr[E + E(-∂²)^{-1}E + ½ Ω_{μν}(-∂²)^{-1}Ω^{μν}]``."""
    t = _positive(t, "t")
    d = metric.dim
    zero = (0,) * d
    pre = t / (2 * math.pi) ** d
    lin = qE = qW = 0.0
    if E is not None:
        lin = pre * (2 * math.pi) ** (0.5 * d) * float(np.trace(E.zero_mode).real)
    if not quadratic:
        return RegimeTerms(lin, 0.0, 0.0)
    if E is not None and zero in E.modes():
        raise SecularZeroModeError(
            "E has a k=0 mode; the quadratic large-t formula holds only for k≠0 modes"
        )
    if omega_f is not None and zero in omega_f.modes():
        raise SecularZeroModeError(
            "Ω has a k=0 mode; the quadratic large-t formula holds only for k≠0 modes"
        )
    if E is not None:
        qE = pre * exact_sum([[_e_contraction(E, k) / metric.norm2(np.array(k, float))
                               for k in E.modes()]])
    if omega_f is not None:
        qW = pre * exact_sum([[0.5 * _omega_contraction(metric, omega_f, k)
                               / metric.norm2(np.array(k, float)) for k in omega_f.modes()]])
    return RegimeTerms(lin, qE, qW)


def large_t_heat(metric, E, omega_f, t, quadratic: bool = True) -> float:
    """Large-t approximation of ``Tr exp(-tL) - Tr exp(-tL₀)``."""
    return large_t_terms(metric, E, omega_f, t, quadratic).total


@dataclass(frozen=True)
class FormFactorLimits:
    """Limit laws of the circle form factor ``v(p, t)``; ``None`` where undefined."""

    p: int
    t: float
    bv: float
    large_t: float | None
    large_p: float | None


def form_factor_limits(p: int, t: float,
                       which: tuple[str, ...] = ("bv", "large_t", "large_p")) -> FormFactorLimits:
    """``bv = t^{3/2} h(p²t)/(4√π)``, ``large_t = t/(2πp²)``, ``large_p = √(t/π)/(2p²)``."""
    p = int(p)
    t = _positive(t, "t")
    unknown = set(which) - {"bv", "large_t", "large_p"}
    if unknown:
        raise ValueError(f"unknown limit(s) {sorted(unknown)}")
    if p == 0 and ({"large_t", "large_p"} & set(which)):
        raise DomainError("the large-t and large-p laws need p ≠ 0")
    bv = t**1.5 / (4 * math.sqrt(math.pi)) * bv_h(p * p * t)
    lt = t / (2 * math.pi * p * p) if p and "large_t" in which else None
    lp = math.sqrt(t / math.pi) / (2 * p * p) if p and "large_p" in which else None
    return FormFactorLimits(p, t, bv if "bv" in which else None, lt, lp)


# --------------------------------------------------------------------------
# S⁴


@lru_cache(maxsize=None)
def _bernoulli_table(n: int) -> tuple[Fraction, ...]:
    B = [Fraction(1)]
    for m in range(1, n + 1):
        acc = Fraction(0)
        binom = 1
        for j in range(m):
            acc += binom * B[j]
            binom = binom * (m + 1 - j) // (j + 1)
        B.append(-acc / (m + 1))
    return tuple(B)


def bernoulli_numbers(n: int) -> list[Fraction]:
    """``B_0 .. B_n`` as exact rationals (``B_1 = -1/2``)."""
    if n < 0:
        raise DomainError("n must be nonnegative")
    return list(_bernoulli_table(int(n)))


def s4_coefficient(k: int) -> Fraction:
    """``a_k = (-1)^k 4/(3 k!) (B_{2k+2}/(2k+2) - B_{2k+4}/(2k+4))``."""
    k = int(k)
    if k < 0:
        raise DomainError("k must be nonnegative")
    B = _bernoulli_table(2 * k + 4)
    sign = -1 if k % 2 else 1
    return sign * Fraction(4, 3 * math.factorial(k)) * (
        B[2 * k + 2] / (2 * k + 2) - B[2 * k + 4] / (2 * k + 4))


# t² Tr exp(-t D²) on the unit S⁴ starts 2/3 - (2/3) t + sum_k a_k t^{k+2}
S4_LEADING = (Fraction(2, 3), Fraction(-2, 3))


@dataclass(frozen=True)
class S4Series:
    coefficients: tuple[Fraction, ...]
    bernoulli: tuple[Fraction, ...]

    @classmethod
    def build(cls, k_max: int) -> "S4Series":
        return cls(tuple(s4_coefficient(k) for k in range(k_max + 1)),
                   _bernoulli_table(2 * k_max + 4))

    def lower_bound(self, k: int) -> Fraction:
        return Fraction(4, 3 * math.factorial(k)) * abs(self.bernoulli[2 * k + 4]) / (2 * k + 4)

    def violations(self) -> list[int]:
        """Indices where ``a_k > 4|B_{2k+4}|/(3k!(2k+4)) > 0`` fails."""
        return [k for k, a in enumerate(self.coefficients)
                if not (a > self.lower_bound(k) > 0)]


def s4_heat_trace(t: float, k_max: int) -> float:
    """Truncated asymptotic series for ``Tr exp(-t D²)`` on the unit S⁴."""
    t = _positive(t, "t")
    if k_max < -1:
        raise DomainError("k_max must be >= -1")
    terms = [float(S4_LEADING[0]), float(S4_LEADING[1]) * t]
    terms += [float(s4_coefficient(k)) * t ** (k + 2) for k in range(k_max + 1)]
    return math.fsum(terms) / (t * t)


def s4_spectral_sum(t: float, tol: float = 1e-14) -> float:
    """``sum_{n>=2} (4/3)(n³ - n) exp(-t n²)``: eigenvalues ``n²`` of D² on S⁴, both signs."""
    t = _positive(t, "t")
    tol = _positive(tol, "tol")

    def tail(N):
        # ∫_N^∞ (4/3) x³ e^{-tx²} dx dominates the decreasing summand beyond its peak
        return (4.0 / 3.0) * math.exp(-t * N * N) * (t * N * N + 1) / (2 * t * t)

    N = max(2, math.ceil(math.sqrt(1.5 / t)) + 1)
    while tail(N) > tol:
        N *= 2
    lo, hi = max(2, math.ceil(math.sqrt(1.5 / t)) + 1), N
    while hi - lo > 1:
        mid = (lo + hi) // 2
        lo, hi = (lo, mid) if tail(mid) <= tol else (mid, hi)
    n = np.arange(2, hi + 1, dtype=float)
    return exact_sum([(4.0 / 3.0) * (n**3 - n) * np.exp(-t * n * n)])


def s4_extract(t: float) -> tuple[float, float, float]:
    """Successive coefficient estimates from the spectral sum at small ``t``.

    Returns ``t²K``, ``(t²K - 2/3)/t`` and ``(t²K - 2/3 + (2/3)t)/t²``, which
    tend to the leading, second and third series coefficients.
    """
    t = _positive(t, "t")
    k = t * t * s4_spectral_sum(t)
    c0 = float(S4_LEADING[0])
    c1 = float(S4_LEADING[1])
    return k, (k - c0) / t, (k - c0 - c1 * t) / (t * t)


@dataclass(frozen=True)
class OptimalTruncation:
    k_stop: int
    value: float
    error_estimate: float


def s4_optimal_truncation(t: float, k_limit: int = 200) -> OptimalTruncation:
    """Truncate the S⁴ series just before its smallest term."""
    t = _positive(t, "t")
    mags = [abs(float(s4_coefficient(k))) * t ** (k + 2) for k in range(k_limit + 1)]
    k_min = int(np.argmin(mags))
    return OptimalTruncation(k_min - 1, s4_heat_trace(t, k_min - 1), mags[k_min] / (t * t))


# --------------------------------------------------------------------------
# flat torus


def coth_taylor(t: float, n_terms: int = 3) -> float:
    """``coth(t/2) ≈ sum_{n<n_terms} 2 B_{2n} t^{2n-1}/(2n)!`` = ``2/t (1 + t²/12 - t⁴/720 + ...)``."""
    t = _positive(t, "t")
    B = _bernoulli_table(2 * n_terms)
    return math.fsum(float(2 * B[2 * n] / math.factorial(2 * n)) * t ** (2 * n - 1)
                     for n in range(n_terms))


def torus_leading(metric: ConstantMetric, t: float) -> float:
    """``(4πt)^{-d/2} Vol(T^d)``."""
    t = _positive(t, "t")
    return (4 * math.pi * t) ** (-0.5 * metric.dim) * metric.volume


@dataclass(frozen=True)
class HeatCoefficients:
    """``Tr exp(-tL) ~ sum_k t^{(k-d)/2} a_k`` as ``t → 0``."""

    dim: int
    a: dict = field(default_factory=dict)

    def __getitem__(self, k: int) -> float:
        if k not in self.a:
            raise DomainError(f"heat coefficient a_{k} is not available")
        return self.a[k]


def flat_torus_coefficients(metric: ConstantMetric, E: FourierField | None = None,
                            omega_f: FieldStrength | None = None,
                            fiber_rank: int | None = None) -> HeatCoefficients:
    """``a_0, a_2, a_4`` (odd indices exactly zero) for ``L = -(∇² + E)`` on T^d.

    ``a_4 = (4π)^{-d/2} ∫√g tr(½E² + Ω_{μν}Ω^{μν}/12)``; curvature terms vanish.
    """
    d = metric.dim
    n = fiber_rank
    if n is None:
        n = E.fiber_rank if E is not None else (omega_f.fiber_rank if omega_f is not None else 1)
    pre = (4 * math.pi) ** (-0.5 * d) * metric.sqrt_g
    a0 = pre * (2 * math.pi) ** d * n
    a2 = 0.0
    a4 = 0.0
    if E is not None:
        a2 = pre * (2 * math.pi) ** (0.5 * d) * float(np.trace(E.zero_mode).real)
        a4 += pre * exact_sum([[0.5 * _e_contraction(E, k) for k in E.modes()]])
    if omega_f is not None:
        a4 += pre * exact_sum([[_omega_contraction(metric, omega_f, k) / 12.0
                                for k in omega_f.modes()]])
    return HeatCoefficients(d, {0: a0, 1: 0.0, 2: a2, 3: 0.0, 4: a4})
