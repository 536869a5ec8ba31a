"""Spectral actions ``Tr f(D²/Λ²)`` on the torus, their large-Λ series and the 1/p⁴ form factor."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.special import gamma

from .asymptotics import HeatCoefficients, _omega_contraction, flat_torus_coefficients
from .clifford import GammaRep, dirac_endomorphism
from .duhamel import heat_trace_second_order
from .errors import DivergentMomentError, DomainError, InsufficientCutoffError, ShapeError
from .fields import FieldStrength, FourierField, GaugeField, field_strength, fourier_norm
from .lattice import ConstantMetric, _positive
from .oracle import DEFAULT_MAX_BLOCK, assemble_dirac, exact_spectral_action, spectrum

__all__ = [
    "CutoffFunction",
    "moment_fk",
    "moment_phi",
    "moment_relation_residuals",
    "ActionAsymptotics",
    "action_asymptotics",
    "dirac_heat_coefficients",
    "required_cutoff",
    "spectral_action_exact",
    "LargePRow",
    "large_p_form_factor",
    "universal_w_limit",
]

_KINDS = ("exponential", "indicator_unit", "laplace_density", "tabulated")


@dataclass(frozen=True, eq=False)
class CutoffFunction:
    """A nonnegative cutoff ``f`` on ``[0, ∞)``.

    ``laplace_density`` means ``f(s) = ∫₀^∞ e^{-st} φ(t) dt`` for the supplied
    density ``φ``; ``tabulated`` interpolates linearly between nodes and
    vanishes past the last one.
    """

    kind: str
    density: Callable[[float], float] | None = None
    nodes: tuple | None = None
    _moments: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise DomainError(f"unknown cutoff kind {self.kind!r}; expected one of {_KINDS}")
        if self.kind == "laplace_density":
            if self.density is None:
                raise DomainError("laplace_density needs a density φ")
            probe = [self.density(x) for x in (1e-3, 0.1, 1.0, 10.0)]
            if min(probe) < 0:
                raise DomainError("the density φ must be nonnegative")
        if self.kind == "tabulated":
            if self.nodes is None:
                raise DomainError("tabulated cutoff needs (s, f) nodes")
            s, v = (np.asarray(x, dtype=float) for x in self.nodes)
            if s.ndim != 1 or s.shape != v.shape or len(s) < 2:
                raise ShapeError("tabulated nodes must be two equal-length 1-d sequences")
            if s[0] != 0 or np.any(np.diff(s) <= 0):
                raise DomainError("tabulated abscissae must start at 0 and increase")
            if np.any(v < 0):
                raise DomainError("tabulated values must be nonnegative")

    @classmethod
    def exponential(cls) -> "CutoffFunction":
        return cls("exponential")

    @classmethod
    def indicator_unit(cls) -> "CutoffFunction":
        return cls("indicator_unit")

    @classmethod
    def laplace_density(cls, phi: Callable[[float], float]) -> "CutoffFunction":
        return cls("laplace_density", density=phi)

    @classmethod
    def tabulated(cls, s: Sequence[float], values: Sequence[float]) -> "CutoffFunction":
        return cls("tabulated", nodes=(tuple(map(float, s)), tuple(map(float, values))))

    def _scalar(self, s: float) -> float:
        if self.kind == "exponential":
            return math.exp(-s)
        if self.kind == "indicator_unit":
            return 1.0 if s <= 1.0 else 0.0
        if self.kind == "tabulated":
            xs, vs = self.nodes
            return float(np.interp(s, xs, vs, right=0.0))
        val, _ = integrate.quad(lambda t: math.exp(-s * t) * self.density(t), 0, math.inf,
                                limit=200)
        return val

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < 0):
            raise DomainError("cutoff functions are defined on [0, ∞)")
        if self.kind == "exponential":
            return np.exp(-s)
        if self.kind == "indicator_unit":
            return (s <= 1.0).astype(float)
        if self.kind == "tabulated":
            xs, vs = self.nodes
            return np.interp(s, xs, vs, right=0.0)
        uniq, inv = np.unique(s, return_inverse=True)
        vals = np.array([self._scalar(float(x)) for x in uniq])
        return vals[inv].reshape(s.shape)

    def sup_beyond(self, s: float) -> float:
        """``sup_{s' >= s} f(s')``."""
        if self.kind == "tabulated":
            xs, vs = self.nodes
            later = [v for x, v in zip(xs, vs) if x >= s]
            return max([self._scalar(s)] + later)
        # the other kinds are nonincreasing
        return self._scalar(s)

    @property
    def value_at_zero(self) -> float:
        return self._scalar(0.0)


def _checked_integral(g: Callable[[float], float], what: str) -> float:
    """``∫₀^∞ g`` with explicit checks of both tails.

    The tails are judged by ``x·g(x)``, which must become negligible next to
    its bulk size at ``x = 1e-14`` and ``x = 1e14``.
    """
    with np.errstate(all="ignore"):
        bulk = max(abs(x * g(x)) for x in np.logspace(-2, 2, 17))
        near = abs(1e-14 * g(1e-14))
        far = abs(1e14 * g(1e14))
    if not math.isfinite(near) or near > 1e-3 * bulk:
        raise DivergentMomentError(f"{what}: the integrand does not decay fast enough as t → 0")
    if not math.isfinite(far) or far > 1e-3 * bulk:
        raise DivergentMomentError(f"{what}: the integrand does not decay fast enough as t → ∞")
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            lo, _ = integrate.quad(g, 0.0, 1.0, limit=400)
            hi, _ = integrate.quad(g, 1.0, math.inf, limit=400)
        except (integrate.IntegrationWarning, ZeroDivisionError, OverflowError) as exc:
            raise DivergentMomentError(f"{what}: quadrature failed to converge ({exc})") from exc
    return lo + hi


def moment_fk(f: CutoffFunction, k: int) -> float:
    """``f_k = Γ(k/2)^{-1} ∫₀^∞ f(s) s^{k/2-1} ds`` for ``k >= 1``."""
    k = int(k)
    if k < 1:
        raise DomainError("moments f_k are defined for k >= 1")
    key = ("f", k)
    if key in f._moments:
        return f._moments[key]
    if f.kind == "exponential":
        val = 1.0
    elif f.kind == "indicator_unit":
        val = 1.0 / gamma(0.5 * k + 1)
    elif f.kind == "tabulated":
        # s = u² removes the s^{-1/2} singularity at k = 1
        xs, _ = f.nodes
        pts = np.sqrt(np.asarray(xs))
        pieces = [integrate.quad(lambda u: 2.0 * f._scalar(u * u) * u ** (k - 1), a, b)[0]
                  for a, b in zip(pts[:-1], pts[1:])]
        val = math.fsum(pieces) / gamma(0.5 * k)
    else:
        # ∫ f(s) s^{k/2-1} ds = Γ(k/2) ∫ φ(t) t^{-k/2} dt
        val = _checked_integral(lambda t: f.density(t) * t ** (-0.5 * k), f"f_{k}")
    f._moments[key] = val
    return val


def moment_phi(f: CutoffFunction, k: int) -> float:
    """``φ_{2k} = ∫₀^∞ t^{k-2} φ(t) dt`` for a Laplace-transform cutoff."""
    k = int(k)
    if f.kind == "exponential":
        # f = e^{-s} is the transform of a unit mass at t = 1
        return 1.0
    if f.kind != "laplace_density":
        raise DomainError(f"φ moments need a Laplace density, got kind {f.kind!r}")
    key = ("phi", k)
    if key not in f._moments:
        f._moments[key] = _checked_integral(lambda t: t ** (k - 2) * f.density(t), f"φ_{2 * k}")
    return f._moments[key]


def moment_relation_residuals(f: CutoffFunction) -> dict[str, float]:
    """Relative mismatch of ``φ_0 = f_4``, ``φ_2 = f_2`` and ``φ_4 = f(0)``."""
    pairs = {
        "phi_0 - f_4": (moment_phi(f, 0), moment_fk(f, 4)),
        "phi_2 - f_2": (moment_phi(f, 1), moment_fk(f, 2)),
        "phi_4 - f(0)": (moment_phi(f, 2), f.value_at_zero),
    }
    return {name: abs(a - b) / max(abs(b), 1e-300) for name, (a, b) in pairs.items()}


@dataclass(frozen=True)
class ActionAsymptotics:
    """``sum_j c_j Λ^{p_j} + constant`` with strictly decreasing powers."""

    dim: int
    terms: tuple[tuple[int, float], ...]
    constant: float

    def evaluate(self, Lambda: float) -> float:
        Lambda = _positive(Lambda, "Λ")
        return math.fsum([c * Lambda**p for p, c in self.terms] + [self.constant])


def action_asymptotics(coeffs: HeatCoefficients, f: CutoffFunction) -> ActionAsymptotics:
    """``sum_{k=1}^{d} f_k Λ^k a_{d-k} + f(0) a_d``."""
    d = coeffs.dim
    terms = tuple((k, moment_fk(f, k) * coeffs[d - k]) for k in range(d, 0, -1))
    return ActionAsymptotics(d, terms, f.value_at_zero * coeffs[d])


def _spinor_fields(A: GaugeField | None, gammas: GammaRep, dim: int):
    if A is None:
        return None, None, gammas.spinor_rank
    F = field_strength(A)
    N = gammas.spinor_rank
    E = dirac_endomorphism(F, gammas)
    entries = {(mu, nu): F[mu, nu].tensor_identity(N)
               for mu in range(dim) for nu in range(mu + 1, dim)}
    return E, FieldStrength(entries, dim, N * A.fiber_rank), N * A.fiber_rank


def dirac_heat_coefficients(metric: ConstantMetric, A: GaugeField | None,
                            gammas: GammaRep) -> HeatCoefficients:
    """Flat-torus ``a_k(D²)`` with ``E = ¼[γ^μ,γ^ν]F_{μν}`` and ``Ω = F ⊗ 1``."""
    E, Omega, rank = _spinor_fields(A, gammas, metric.dim)
    return flat_torus_coefficients(metric, E, Omega, fiber_rank=rank)


def _shell_tail(metric, f, Lambda, rank, R) -> float:
    d = metric.dim
    total = []
    r = R + 1
    while True:
        shell = (2 * r + 1) ** d - (2 * r - 1) ** d
        term = rank * shell * f.sup_beyond(metric.lambda_min * r * r / Lambda**2)
        total.append(term)
        if term == 0.0 or (term < 1e-18 * max(math.fsum(total), 1e-300) and r > 2 * R + 8):
            break
        if r > 1_000_000:
            return math.inf
        r += 1
    return math.fsum(total)


def required_cutoff(metric: ConstantMetric, A: GaugeField | None, gammas: GammaRep,
                    f: CutoffFunction, Lambda: float, tol: float) -> int:
    """Smallest ``Q`` whose free modes beyond ``Q - 2B`` contribute at most ``tol``.

    The shells ``|q|_∞ = r`` are weighted by ``sup f`` beyond ``λ_min r²/Λ²``;
    this is an estimate for weak fields, exact for the free operator.
    """
    B = A.bandwidth if A is not None else 0
    rank = gammas.spinor_rank * (A.fiber_rank if A is not None else 1)
    R = 0
    while _shell_tail(metric, f, Lambda, rank, R) > tol:
        R = max(1, 2 * R)
        if R > 1 << 14:
            raise DomainError("no finite cutoff reaches the requested tolerance")
    lo, hi = R // 2, R
    while hi - lo > 1:
        mid = (lo + hi) // 2
        lo, hi = (lo, mid) if _shell_tail(metric, f, Lambda, rank, mid) <= tol else (mid, hi)
    R = hi if _shell_tail(metric, f, Lambda, rank, lo) > tol else lo
    return R + 2 * B


def spectral_action_exact(metric: ConstantMetric, A: GaugeField | None, gammas: GammaRep,
                          f: CutoffFunction, Lambda: float, Q: int | None = None,
                          tol: float = 1e-10, subtract_free: bool = False,
                          max_block: int = DEFAULT_MAX_BLOCK) -> float:
    """``Tr f(D²/Λ²)`` from the truncated Dirac spectrum.

    With ``subtract_free`` the free action ``Tr f(D₀²/Λ²)`` at the same cutoff
    is subtracted. ``Q=None`` picks the smallest adequate cutoff.
    """
    Lambda = _positive(Lambda, "Λ")
    need = required_cutoff(metric, A, gammas, f, Lambda, tol)
    if Q is None:
        Q = need
    elif Q < need:
        raise InsufficientCutoffError(
            f"cutoff Q={Q} leaves a spectral tail above tol={tol:g}; need Q >= {need}", need)
    spec = spectrum(assemble_dirac(metric, A, gammas, Q, margin=0), max_block)
    value = exact_spectral_action(spec, f, Lambda)
    if subtract_free:
        free = spectrum(assemble_dirac(metric, None, gammas, Q, margin=0), max_block)
        value -= exact_spectral_action(free, f, Lambda)
    return value


@dataclass(frozen=True)
class LargePRow:
    p: int
    w: float
    p4w: float


def _transverse_mode(metric: ConstantMetric, k: np.ndarray) -> GaugeField:
    """``A_ν = i ε_ν cos(k·x)`` with ``k_μ g^{μν} ε_ν = 0``."""
    d = metric.dim
    if d < 2:
        raise DomainError("a transverse gauge mode needs d >= 2")
    G = metric.inv_metric
    kk = float(k @ G @ k)
    trial = [np.eye(d)[j] for j in range(d)]
    eps = max((e - (k @ G @ e) / kk * k for e in trial), key=lambda v: float(v @ G @ v))
    eps = eps / math.sqrt(float(eps @ G @ eps))
    amp = 0.5 / fourier_norm(d)
    key, neg = tuple(int(x) for x in k), tuple(int(-x) for x in k)
    comps = []
    for nu in range(d):
        if eps[nu] == 0:
            comps.append(FourierField.zero(d, 1, "antihermitian"))
            continue
        c = np.array([[1j * amp * eps[nu]]])
        comps.append(FourierField(d, 1, {key: c, neg: c}, "antihermitian"))
    return GaugeField(tuple(comps))


def large_p_form_factor(metric: ConstantMetric, gammas: GammaRep, p_values: Sequence[int],
                        Lambda: float, direction=None, rel_tol: float = 1e-10) -> list[LargePRow]:
    """``w(p) = K₂ / sum_{±p} tr F̂_{μν}(-k) F̂^{μν}(k)`` at ``t = Λ^{-2}``.

    ``K₂`` is the second-order heat-trace term of ``D²`` for a single abelian
    transverse mode at ``k = p · direction``.
    """
    Lambda = _positive(Lambda, "Λ")
    d = metric.dim
    e = np.eye(d, dtype=np.int64)[0] if direction is None else np.asarray(direction, np.int64)
    t = Lambda ** -2
    rows = []
    for p in p_values:
        p = int(p)
        if p == 0:
            raise DomainError("the large-p form factor needs p ≠ 0")
        k = p * e
        A = _transverse_mode(metric, k.astype(float))
        E, _, _ = _spinor_fields(A, gammas, d)
        F = field_strength(A)
        denom = sum(_omega_contraction(metric, F, kk) for kk in F.modes())
        p2 = float(metric.norm2(k.astype(float)))
        scale = abs(denom) * abs(universal_w_limit(metric, gammas.spinor_rank, p2, Lambda))
        b = heat_trace_second_order(metric, E, A.tensor_identity(gammas.spinor_rank), t,
                                    tol=rel_tol * scale)
        w = (b.K2_E + b.K2_omega) / denom
        rows.append(LargePRow(p, w, p2 * p2 * w))
    return rows


def universal_w_limit(metric: ConstantMetric, spinor_rank: int, p2: float, Lambda: float) -> float:
    """``-2N √g Λ^d / ((4π)^{d/2} p⁴)``, the joint large-p, large-Λ law of ``w``."""
    d = metric.dim
    return (-2.0 * spinor_rank * metric.sqrt_g * Lambda**d
            / ((4 * math.pi) ** (0.5 * d) * p2 * p2))
