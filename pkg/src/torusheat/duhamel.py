"""Second-order Duhamel expansion of ``Tr exp(-tL)`` on T^d.

For ``L = -(g^{μν}∇_μ∇_ν + E)`` with ``∇ = ∂ + ω`` the heat trace is expanded
to second order in ``(E, ω)`` around the free Laplacian. In the plane-wave
basis every term reduces to lattice sums of the divided difference

    φ(a, b) = ∫₀¹ exp(-(ξ a + (1-ξ) b)) dξ = (e^{-a} - e^{-b}) / (b - a),

which is evaluated in closed form per lattice point; no ξ quadrature is done.

Two assembly routes exist. The default one contracts the field coefficients
with the scalar/tensor form factors ``v1``, ``v2``, ``v3``. When the
connection has constant (k = 0) modes that commute, they are folded into the
free operator instead: each fiber eigen-component then sees a shifted lattice
``q + s_a`` and the second-order terms are summed pair by pair.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, ShapeError
from .fields import FourierField, GaugeField, fourier_norm
from .lattice import (
    ConstantMetric,
    _positive,
    box_chunks,
    box_tail,
    choose_cutoff,
    theta_sum,
)
from .summation import exact_sum, pruned_sum

__all__ = [
    "exp_divided_difference",
    "form_factor_v",
    "v1",
    "v2",
    "v3",
    "FormFactorTable",
    "form_factor_table",
    "HeatTraceBreakdown",
    "heat_trace_second_order",
]

# t·|Δ| below this uses the first-order expansion of (1 - e^{-Δ})/Δ
DEGENERATE_GAP = 1e-12


def exp_divided_difference(a, b) -> np.ndarray:
    """``∫₀¹ exp(-(ξ a + (1-ξ) b)) dξ`` elementwise, stable for any sign of ``a - b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    m = np.minimum(a, b)
    gap = np.abs(a - b)
    small = gap < DEGENERATE_GAP
    safe = np.where(small, 1.0, gap)
    ratio = np.where(small, 1.0 - 0.5 * gap, -np.expm1(-safe) / safe)
    return np.exp(-m) * ratio


# --------------------------------------------------------------------------
# T^1 scalar form factor


def form_factor_v(p: int, t: float, tol: float = 1e-13) -> float:
    """``v(p, t) = t²/(4π) ∫₀¹dξ sum_q exp(-(q² + 2(1-ξ)pq + (1-ξ)p²) t)`` on the unit circle.

    The ξ integral is done per ``q``:
    ``(e^{-tq²} - e^{-t(p+q)²}) / (t(2pq + p²))``, and ``e^{-tq²}`` when
    ``q = -p/2`` (or ``p = 0``).
    """
    p = int(p)
    t = _positive(t, "t")
    pref = t * t / (4 * math.pi)
    a = t
    # each term is at most e^{-tq²} + e^{-t(q+p)²}; the box covers both centres
    Q = choose_cutoff(lambda Q: pref * 2 * box_tail(a, Q + 1.0, 1), tol / 2)
    q = np.arange(min(0, -p) - Q, max(0, -p) + Q + 1, dtype=float)
    lo = t * q * q
    hi = t * (q + p) ** 2
    gap = hi - lo  # t(2pq + p²)
    base = np.exp(-np.minimum(lo, hi))
    degenerate = np.abs(gap) < DEGENERATE_GAP
    g = np.where(degenerate, 1.0, np.abs(gap))
    terms = np.where(degenerate, base, base * (-np.expm1(-g)) / g)
    return pref * exact_sum([terms])


# --------------------------------------------------------------------------
# lattice moments of φ


@dataclass(frozen=True)
class _Moments:
    s0: float
    s1: np.ndarray
    s2: np.ndarray
    tail: float
    cutoff: int


def _lattice_moments(metric: ConstantMetric, t: float, row_center, col_center,
                     alpha: float, beta, order: int, tol: float) -> _Moments:
    """Sums of ``Y^{⊗j} φ(t|q - r|², t|q - c|²)`` for j ≤ order over ``q ∈ Z^d``.

    ``|x|²`` is ``xᵀ G x`` and ``Y = G (α q + β)``. The truncation error of
    every returned entry is below ``tol``.
    """
    d = metric.dim
    centers = np.array([row_center, col_center], dtype=float).reshape(2, d)
    beta = np.zeros(d) if beta is None else np.asarray(beta, dtype=float)
    a = t * metric.lambda_min
    gmax2 = metric.lambda_max ** 2
    integral = bool(np.all(centers == np.round(centers)))
    offset = 1.0 if integral else 0.0

    # |Y|² <= 2‖G‖²(α²|q - c|² + |α c + β|²) around either centre
    lin = [float(np.sum((alpha * c + beta) ** 2)) for c in centers]

    def bound(Q: int) -> float:
        r = Q + offset
        b0 = box_tail(a, r, d)
        if order == 0:
            return 2 * b0
        b2 = box_tail(a, r, d, weighted=True)
        return sum((1 + 2 * gmax2 * L) * b0 + 2 * gmax2 * alpha**2 * b2 for L in lin)

    Q = choose_cutoff(bound, tol / 2)
    tail = bound(Q)
    lo = np.floor(centers.min(axis=0)).astype(np.int64) - Q
    hi = np.ceil(centers.max(axis=0)).astype(np.int64) + Q
    npts = int(np.prod(hi - lo + 1))
    threshold = 0.25 * tol / npts

    kept_phi, kept_y = [], []
    n_dropped = 0
    for q in box_chunks(lo, hi):
        qf = q.astype(float)
        phi = exp_divided_difference(t * metric.norm2(qf - centers[0]),
                                     t * metric.norm2(qf - centers[1]))
        if order:
            y = metric.raise_index(alpha * qf + beta)
            weight = phi * (1.0 + np.sum(y * y, axis=1))
        else:
            y = None
            weight = phi
        mask = weight >= threshold
        n_dropped += int(len(phi) - np.count_nonzero(mask))
        kept_phi.append(phi[mask])
        if order:
            kept_y.append(y[mask])
    tail += n_dropped * threshold
    phi = np.concatenate(kept_phi)
    s0 = exact_sum([phi])
    s1 = np.zeros(d)
    s2 = np.zeros((d, d))
    if order:
        y = np.concatenate(kept_y)
        for mu in range(d):
            s1[mu] = exact_sum([y[:, mu] * phi])
        if order >= 2:
            for mu in range(d):
                for nu in range(mu, d):
                    s2[mu, nu] = s2[nu, mu] = exact_sum([y[:, mu] * y[:, nu] * phi])
    return _Moments(s0, s1, s2, float(tail), Q)


def _k_vector(k, dim: int) -> np.ndarray:
    k = np.atleast_1d(np.asarray(k, dtype=float))
    if k.shape != (dim,):
        raise ShapeError(f"momentum must have length {dim}, got {k.shape}")
    if not np.all(k == np.round(k)):
        raise DomainError("momenta must be integer vectors")
    return k


def _prefactor(t: float, dim: int) -> float:
    return t * t / (2.0 * (2.0 * math.pi) ** dim)


def v1(k, t: float, metric: ConstantMetric, tol: float = 1e-13) -> float:
    """``δ_{k,0} t (2π)^{-d/2} sum_q e^{-t q²}``."""
    kv = _k_vector(k, metric.dim)
    t = _positive(t, "t")
    if np.any(kv != 0):
        return 0.0
    c = fourier_norm(metric.dim)
    return t * c * theta_sum(metric, t, tol=tol / (t * c)).value


def _v2_certified(k, t, metric, tol) -> tuple[float, float]:
    kv = _k_vector(k, metric.dim)
    pref = _prefactor(t, metric.dim)
    m = _lattice_moments(metric, t, -kv, np.zeros_like(kv), 1.0, None, 0, tol / pref)
    return pref * m.s0, pref * m.tail


def v2(k, t: float, metric: ConstantMetric, tol: float = 1e-13) -> float:
    """``t²/(2(2π)^d) ∫₀¹dξ sum_q exp(-t(ξ(q+k)² + (1-ξ)q²))``."""
    t = _positive(t, "t")
    return _v2_certified(k, t, metric, tol)[0]


def _v3_certified(k, t, metric, tol) -> tuple[np.ndarray, float]:
    kv = _k_vector(k, metric.dim)
    d = metric.dim
    pref = _prefactor(t, d)
    G = metric.inv_metric
    kup = metric.raise_index(kv)
    kk = np.outer(kup, kup)
    scale = max(1.0, float(np.max(np.abs(kk))), 4.0)
    m = _lattice_moments(metric, t, -kv, np.zeros(d), 1.0, None, 2, tol / (3 * pref * scale))
    g_scale = 2.0 / t * float(np.max(np.abs(G)))
    th = theta_sum(metric, t, tol=tol / (3 * pref * g_scale))
    value = pref * (kk * m.s0 - 4.0 * m.s2 + (2.0 / t) * G * th.value)
    err = pref * (scale * m.tail + g_scale * th.tail_bound)
    return value, err


def v3(k, t: float, metric: ConstantMetric, tol: float = 1e-13) -> np.ndarray:
    """The ``d x d`` connection form factor ``v3^{μν}(k, t)``.

    ``t²/(2(2π)^d) ∫₀¹dξ sum_q [(k^μk^ν - 4q^μq^ν) e^{-t(ξ(q+k)² + (1-ξ)q²)}
    + (2/t) g^{μν} e^{-tq²}]``; the last piece is the contact (seagull) term.
    """
    t = _positive(t, "t")
    return _v3_certified(k, t, metric, tol)[0]


@dataclass
class FormFactorTable:
    """Form factor values keyed by ``(k, t)`` with their truncation bounds."""

    kind: str
    entries: dict = field(default_factory=dict)
    tail_bounds: dict = field(default_factory=dict)

    def __getitem__(self, key):
        k, t = key
        return self.entries[(tuple(np.atleast_1d(k).astype(int).tolist()), float(t))]

    def check_invariants(self, rtol: float = 1e-12) -> list[str]:
        """Describe violated symmetry/positivity invariants (empty when all hold)."""
        problems = []
        for (k, t), val in self.entries.items():
            if self.kind in ("v_T1", "v2") and not val > 0:
                problems.append(f"{self.kind}({k}, {t}) = {val} is not positive")
            partner = self.entries.get((tuple(-x for x in k), t))
            if partner is None:
                continue
            if self.kind in ("v_T1", "v2"):
                if abs(partner - val) > rtol * abs(val):
                    problems.append(f"{self.kind} not even in k at {k}, t={t}")
            elif self.kind == "v3":
                if np.max(np.abs(partner - np.asarray(val).T)) > rtol * max(
                        1.0, float(np.max(np.abs(val)))):
                    problems.append(f"v3^{{μν}}({k}) != v3^{{νμ}}(-k) at t={t}")
        return problems


def form_factor_table(kind: str, ks: Iterable, ts: Iterable[float],
                      metric: ConstantMetric | None = None, tol: float = 1e-13) -> FormFactorTable:
    """Tabulate one of ``v_T1`` (circle), ``v1``, ``v2``, ``v3`` over momenta and times."""
    if kind not in ("v_T1", "v1", "v2", "v3"):
        raise ValueError(f"unknown form factor kind {kind!r}")
    if kind != "v_T1" and metric is None:
        raise ValueError(f"{kind} needs a metric")
    table = FormFactorTable(kind)
    for t in ts:
        t = float(t)
        for k in ks:
            key = tuple(np.atleast_1d(k).astype(int).tolist())
            if kind == "v_T1":
                value, err = form_factor_v(key[0], t, tol), tol
            elif kind == "v1":
                value, err = v1(key, t, metric, tol), tol
            elif kind == "v2":
                value, err = _v2_certified(key, t, metric, tol)
            else:
                value, err = _v3_certified(key, t, metric, tol)
            table.entries[(key, t)] = value
            table.tail_bounds[(key, t)] = err
    return table


# --------------------------------------------------------------------------
# trace assembly


@dataclass(frozen=True)
class HeatTraceBreakdown:
    """Contributions to ``Tr exp(-tL)`` through second order in ``(E, ω)``.

    ``K2_omega`` collects every second-order term containing the connection,
    including ``E``-``ω`` cross terms, which only survive on shifted lattices.
    """

    t: float
    K0: float
    K1: float
    K2_E: float
    K2_omega: float
    error_bound: float = 0.0
    truncation_order: int = 2

    @property
    def total(self) -> float:
        return self.K0 + self.K1 + self.K2_E + self.K2_omega

    @property
    def K2(self) -> float:
        return self.K2_E + self.K2_omega

    def as_dict(self) -> dict:
        return {"t": self.t, "K0": self.K0, "K1": self.K1, "K2_E": self.K2_E,
                "K2_omega": self.K2_omega, "total": self.total,
                "error_bound": self.error_bound}


def _check_inputs(metric, E, omega):
    d = metric.dim
    ranks = set()
    if E is not None:
        if E.dim != d:
            raise ShapeError(f"E has dimension {E.dim}, metric has {d}")
        if E.kind != "hermitian":
            raise DomainError("E must be a hermitian field")
        ranks.add(E.fiber_rank)
    if omega is not None:
        if omega.dim != d:
            raise ShapeError(f"ω has dimension {omega.dim}, metric has {d}")
        ranks.add(omega.fiber_rank)
    if len(ranks) > 1:
        raise ShapeError(f"fiber rank mismatch between E and ω: {sorted(ranks)}")
    return ranks.pop() if ranks else 1


def _tr(a, b) -> complex:
    return complex(np.einsum("ij,ji->", a, b))


def _common_zero_mode_basis(omega: GaugeField):
    """Diagonalise the commuting constant parts ``S_μ = -i(2π)^{-d/2} ω̂_μ(0)``."""
    d, n = omega.dim, omega.fiber_rank
    c = fourier_norm(d)
    S = np.array([-1j * c * omega[mu].zero_mode for mu in range(d)])
    S = 0.5 * (S + np.conj(np.swapaxes(S, -1, -2)))
    scale = max(1.0, float(np.max(np.abs(S))))
    for mu in range(d):
        for nu in range(mu + 1, d):
            comm = S[mu] @ S[nu] - S[nu] @ S[mu]
            if np.max(np.abs(comm)) > 1e-12 * scale**2:
                raise DomainError(
                    "constant connection modes do not commute and cannot be folded "
                    "into the free operator; pass fold_zero_modes=False"
                )
    # generic real combination separates joint eigenvalues
    weights = 1.0 / np.sqrt(np.array([2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37][:d], float))
    if d > 12:
        weights = 1.0 / np.sqrt(np.arange(2, d + 2, dtype=float) + np.pi)
    _, U = np.linalg.eigh(np.einsum("m,mij->ij", weights, S))
    D = np.einsum("ia,mij,jb->mab", U.conj(), S, U)
    off = D - np.einsum("maa->ma", D)[..., None] * np.eye(n)
    if np.max(np.abs(off)) > 1e-10 * scale:
        raise DomainError("failed to diagonalise the constant connection modes jointly")
    shifts = np.real(np.einsum("maa->am", D))
    return U, shifts


def _without_zero_mode(f: FourierField) -> FourierField:
    zero = (0,) * f.dim
    return FourierField(f.dim, f.fiber_rank,
                        {k: v for k, v in f.coeffs.items() if k != zero}, f.kind)


def _map(fn, items, workers):
    items = list(items)
    if workers and workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def heat_trace_second_order(metric: ConstantMetric, E: FourierField | None = None,
                            omega: GaugeField | None = None, t: float = 1.0,
                            tol: float = 1e-10, fold_zero_modes: bool = True,
                            workers: int | None = None) -> HeatTraceBreakdown:
    """``Tr exp(-tL)`` through second order in ``E`` and ``ω``.

    ``K0`` is the free trace ``n sum_q e^{-tq²}``, ``K1`` the term linear in
    ``E``; the quadratic terms follow the contraction

        tr sum_k [Ê(-k)Ê(k) v2(k,t) + ω̂_μ(-k)ω̂_ν(k) v3^{μν}(k,t)].

    With ``fold_zero_modes`` (the default) commuting constant connection
    modes are treated exactly as lattice shifts. ``error_bound`` bounds the
    lattice truncation error of the returned total.
    """
    t = _positive(t, "t")
    tol = _positive(tol, "tol")
    n = _check_inputs(metric, E, omega)
    d = metric.dim
    if E is None:
        E = FourierField.zero(d, n, "hermitian")
    if omega is None:
        omega = GaugeField.zero(d, n)
    has_zero = any(np.any(c.zero_mode) for c in omega)
    if fold_zero_modes and has_zero:
        U, shifts = _common_zero_mode_basis(omega)
        Uh = U.conj().T
        E_b = E.conjugated(Uh)
        om_b = GaugeField(tuple(_without_zero_mode(c).conjugated(Uh) for c in omega))
        return _shifted_assembly(metric, E_b, om_b, shifts, t, tol, workers)
    return _form_factor_assembly(metric, E, omega, t, tol, workers)


def _canonical(k: tuple[int, ...]) -> tuple[tuple[int, ...], bool]:
    neg = tuple(-x for x in k)
    return (k, False) if k >= neg else (neg, True)


def _form_factor_assembly(metric, E, omega, t, tol, workers) -> HeatTraceBreakdown:
    d = metric.dim
    n = E.fiber_rank
    c = fourier_norm(d)
    zero = (0,) * d

    trE0 = _tr(E.zero_mode, np.eye(n)).real
    e_weights = {k: _tr(E.coeff(tuple(-x for x in k)), E.coeff(k)) for k in E.modes()}
    w_weights = {}
    for k in omega.modes():
        mk = tuple(-x for x in k)
        w_weights[k] = np.array([[_tr(omega[mu].coeff(mk), omega[nu].coeff(k))
                                  for nu in range(d)] for mu in range(d)])
    total_w = sum(abs(w) for w in e_weights.values()) + sum(
        float(np.sum(np.abs(w))) for w in w_weights.values())
    th_tol = tol / (4.0 * (n + abs(trE0) * t * c))
    ff_tol = tol / (4.0 * max(total_w, 1e-300))

    th = theta_sum(metric, t, tol=th_tol)
    K0 = n * th.value
    K1 = trE0 * t * c * th.value
    err = (n + abs(trE0) * t * c) * th.tail_bound

    v2_keys = sorted({_canonical(k)[0] for k in e_weights})
    v3_keys = sorted({_canonical(k)[0] for k in w_weights})
    v2_vals = dict(zip(v2_keys, _map(lambda k: _v2_certified(k, t, metric, ff_tol),
                                     v2_keys, workers)))
    v3_vals = dict(zip(v3_keys, _map(lambda k: _v3_certified(k, t, metric, ff_tol),
                                     v3_keys, workers)))

    e_terms = []
    for k, w in e_weights.items():
        val, e = v2_vals[_canonical(k)[0]]
        e_terms.append(w.real * val)
        err += abs(w) * e
    w_terms = []
    for k, w in w_weights.items():
        key, flipped = _canonical(k)
        val, e = v3_vals[key]
        # v3^{μν}(-k) = v3^{νμ}(k)
        if flipped:
            val = val.T
        w_terms.append(float(np.sum(w.real * val)))
        err += float(np.sum(np.abs(w))) * e
    return HeatTraceBreakdown(t, K0, K1, exact_sum([e_terms]), exact_sum([w_terms]), float(err))


def _shifted_assembly(metric, E, omega, shifts, t, tol, workers) -> HeatTraceBreakdown:
    """Second-order trace on the lattices ``q + s_a`` (fiber basis diagonalising ω̂(0))."""
    d = metric.dim
    n = E.fiber_rank
    c = fourier_norm(d)
    G = metric.inv_metric
    pref = _prefactor(t, d)
    zero = (0,) * d

    # seagull density per fiber component: (2π)^{-d} g^{μν} sum_k (ω̂_μ(k) ω̂_ν(-k))_aa
    sea = np.zeros(n, dtype=complex)
    for k in omega.modes():
        mk = tuple(-x for x in k)
        for mu in range(d):
            for nu in range(d):
                if G[mu, nu] != 0:
                    sea += G[mu, nu] * np.diag(omega[mu].coeff(k) @ omega[nu].coeff(mk))
    E0 = np.real(np.diag(E.zero_mode))

    first_w = np.abs(t * c * E0) + np.abs(t * c * c * sea) + 1.0
    th_tol = tol / (4.0 * float(np.sum(first_w)))
    thetas = [theta_sum(metric, t, shift=shifts[a], tol=th_tol) for a in range(n)]
    K0 = exact_sum([[th.value for th in thetas]])
    K1 = exact_sum([[t * c * E0[a] * thetas[a].value for a in range(n)]])
    seagull = exact_sum([[(t * c * c * sea[a]).real * thetas[a].value for a in range(n)]])
    err = float(sum(first_w[a] * thetas[a].tail_bound for a in range(n)))

    modes = sorted(set(E.modes()) | set(omega.modes()))
    jobs = []
    for k in modes:
        mk = tuple(-x for x in k)
        Ek, Emk = E.coeff(k), E.coeff(mk)
        Wk = np.array([omega[mu].coeff(k) for mu in range(d)])
        Wmk = np.array([omega[mu].coeff(mk) for mu in range(d)])
        for a in range(n):
            for b in range(n):
                xE = Ek[a, b] * Emk[b, a]
                x1 = Ek[a, b] * Wmk[:, b, a] + Wk[:, a, b] * Emk[b, a]
                x2 = np.outer(Wk[:, a, b], Wmk[:, b, a])
                if xE == 0 and not np.any(x1) and not np.any(x2):
                    continue
                jobs.append((k, a, b, xE, x1, x2))
    weight_total = sum(abs(j[3]) + float(np.sum(np.abs(j[4]))) + float(np.sum(np.abs(j[5])))
                       for j in jobs)
    m_tol = tol / (4.0 * pref * max(weight_total, 1e-300))

    def run(job):
        k, a, b, xE, x1, x2 = job
        kv = np.asarray(k, dtype=float)
        order = 0 if not (np.any(x1) or np.any(x2)) else 2
        m = _lattice_moments(metric, t, -(kv + shifts[a]), -shifts[b], 2.0,
                             kv + shifts[a] + shifts[b], order, m_tol)
        e_part = pref * xE * m.s0
        w_part = pref * (1j * np.dot(x1, m.s1) - np.sum(x2 * m.s2))
        bound = pref * m.tail * (abs(xE) + float(np.sum(np.abs(x1))) + float(np.sum(np.abs(x2))))
        return e_part, w_part, bound

    results = _map(run, jobs, workers)
    K2_E = exact_sum([[r[0].real for r in results]])
    K2_w = exact_sum([[seagull] + [r[1].real for r in results]])
    err += float(sum(r[2] for r in results))
    return HeatTraceBreakdown(t, K0, K1, K2_E, K2_w, err)
