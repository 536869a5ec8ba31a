"""Matrix-valued periodic fields on T^d stored as sparse Fourier data.

A field is ``φ(x) = (2π)^{-d/2} sum_k φ̂(k) exp(i k·x)`` with finitely many
nonzero ``φ̂(k)``, each an ``n x n`` complex matrix. With this normalization

* ``∫ φ ψ dx = sum_k φ̂(-k) ψ̂(k)``,
* ``(φ ψ)^(k) = (2π)^{-d/2} sum_{k'} φ̂(k-k') ψ̂(k')``,
* ``(∂_μ φ)^(k) = i k_μ φ̂(k)``.

Potentials ``E`` are hermitian, connections ``ω_μ`` antihermitian.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DomainError, ShapeError

__all__ = [
    "FourierField",
    "GaugeField",
    "FieldStrength",
    "fourier_norm",
    "field_strength",
    "pure_gauge",
    "load_field",
    "load_gauge_field",
]

_HERMITICITY_TOL = 1e-14


def fourier_norm(dim: int) -> float:
    """The convolution factor ``(2π)^{-d/2}``."""
    return (2.0 * math.pi) ** (-0.5 * dim)


def _key(k, dim: int) -> tuple[int, ...]:
    k = tuple(int(x) for x in np.atleast_1d(k))
    if len(k) != dim:
        raise ShapeError(f"momentum {k} has length {len(k)}, expected {dim}")
    return k


def _neg(k: tuple[int, ...]) -> tuple[int, ...]:
    return tuple(-x for x in k)


class FourierField:
    """Band-limited ``n x n`` matrix field on T^d.

    Parameters
    ----------
    dim, fiber_rank : int
    coeffs : mapping from momentum tuples to ``(n, n)`` arrays
        Absent momenta are zero. Scalars are accepted when ``fiber_rank == 1``.
    kind : {"general", "hermitian", "antihermitian"}
        Reality condition, checked on construction.
    """

    def __init__(self, dim: int, fiber_rank: int, coeffs: Mapping | None = None,
                 kind: str = "general"):
        if dim < 1 or fiber_rank < 1:
            raise ShapeError("dim and fiber_rank must be positive")
        if kind not in ("general", "hermitian", "antihermitian"):
            raise ValueError(f"unknown field kind {kind!r}")
        self.dim = int(dim)
        self.fiber_rank = int(fiber_rank)
        self.kind = kind
        data: dict[tuple[int, ...], np.ndarray] = {}
        for k, c in (coeffs or {}).items():
            key = _key(k, self.dim)
            arr = np.array(c, dtype=complex)
            if arr.ndim == 0:
                arr = arr * np.eye(self.fiber_rank)
            if arr.shape != (self.fiber_rank, self.fiber_rank):
                raise ShapeError(
                    f"coefficient at {key} has shape {arr.shape}, expected "
                    f"({self.fiber_rank}, {self.fiber_rank})"
                )
            if not np.any(arr):
                continue
            if key in data:
                arr = arr + data[key]
            arr.setflags(write=False)
            data[key] = arr
        self._coeffs = dict(sorted(data.items()))
        self._check_reality()

    def _check_reality(self):
        if self.kind == "general":
            return
        sign = 1.0 if self.kind == "hermitian" else -1.0
        scale = max((np.max(np.abs(c)) for c in self._coeffs.values()), default=0.0)
        for k, c in self._coeffs.items():
            partner = self.coeff(_neg(k))
            err = np.max(np.abs(partner - sign * c.conj().T))
            if err > _HERMITICITY_TOL * max(1.0, scale):
                raise DomainError(
                    f"{self.kind} field violates coeffs(-k) = {'' if sign > 0 else '-'}"
                    f"coeffs(k)^† at k={k} (residual {err:.2e})"
                )

    # construction helpers ---------------------------------------------------

    @classmethod
    def zero(cls, dim: int, fiber_rank: int = 1, kind: str = "general") -> "FourierField":
        return cls(dim, fiber_rank, {}, kind)

    @classmethod
    def constant(cls, value, dim: int, kind: str = "general") -> "FourierField":
        """The constant field ``value`` (a matrix or, for rank one, a scalar)."""
        arr = np.atleast_2d(np.asarray(value, dtype=complex))
        return cls(dim, arr.shape[0], {(0,) * dim: arr / fourier_norm(dim)}, kind)

    # access -----------------------------------------------------------------

    @property
    def coeffs(self) -> dict[tuple[int, ...], np.ndarray]:
        return dict(self._coeffs)

    def modes(self) -> list[tuple[int, ...]]:
        """Stored momenta in lexicographic order."""
        return list(self._coeffs)

    def coeff(self, k) -> np.ndarray:
        k = _key(k, self.dim)
        c = self._coeffs.get(k)
        if c is None:
            return np.zeros((self.fiber_rank, self.fiber_rank), dtype=complex)
        return c

    def __contains__(self, k) -> bool:
        return _key(k, self.dim) in self._coeffs

    @property
    def bandwidth(self) -> int:
        return max((max(abs(x) for x in k) for k in self._coeffs), default=0)

    @property
    def is_zero(self) -> bool:
        return not self._coeffs

    @property
    def zero_mode(self) -> np.ndarray:
        return self.coeff((0,) * self.dim)

    # algebra ----------------------------------------------------------------

    def _derived(self, coeffs, kind=None) -> "FourierField":
        return FourierField(self.dim, self.fiber_rank, coeffs,
                            self.kind if kind is None else kind)

    def scaled(self, c) -> "FourierField":
        """``c φ``; a non-real ``c`` drops the reality condition."""
        kind = "general" if np.imag(c) != 0 else self.kind
        return self._derived({k: c * v for k, v in self._coeffs.items()}, kind)

    def __add__(self, other: "FourierField") -> "FourierField":
        self._check_compatible(other)
        out = {k: v.copy() for k, v in self._coeffs.items()}
        for k, v in other._coeffs.items():
            out[k] = out[k] + v if k in out else v.copy()
        kind = self.kind if self.kind == other.kind else "general"
        return FourierField(self.dim, self.fiber_rank, out, kind)

    def __neg__(self) -> "FourierField":
        return self._derived({k: -v for k, v in self._coeffs.items()})

    def __sub__(self, other: "FourierField") -> "FourierField":
        return self + (-other)

    def conjugated(self, U) -> "FourierField":
        """``U φ U^†`` for a constant unitary ``U``."""
        U = np.asarray(U, dtype=complex)
        return self._derived({k: U @ v @ U.conj().T for k, v in self._coeffs.items()})

    def tensor_identity(self, rank: int) -> "FourierField":
        """Lift to the fiber ``C^rank ⊗ C^n`` as ``1 ⊗ φ``."""
        eye = np.eye(rank)
        return FourierField(self.dim, rank * self.fiber_rank,
                            {k: np.kron(eye, v) for k, v in self._coeffs.items()}, self.kind)

    def derivative(self, mu: int) -> "FourierField":
        return self._derived({k: 1j * k[mu] * v for k, v in self._coeffs.items()})

    def with_kind(self, kind: str) -> "FourierField":
        return FourierField(self.dim, self.fiber_rank, self._coeffs, kind)

    def _check_compatible(self, other: "FourierField"):
        if (self.dim, self.fiber_rank) != (other.dim, other.fiber_rank):
            raise ShapeError(
                f"field shapes differ: dim/rank {(self.dim, self.fiber_rank)} vs "
                f"{(other.dim, other.fiber_rank)}"
            )

    def multiply(self, other: "FourierField") -> "FourierField":
        """Pointwise matrix product, as a Fourier convolution."""
        self._check_compatible(other)
        c = fourier_norm(self.dim)
        out: dict[tuple[int, ...], np.ndarray] = {}
        for ka, va in self._coeffs.items():
            for kb, vb in other._coeffs.items():
                k = tuple(x + y for x, y in zip(ka, kb))
                term = c * (va @ vb)
                out[k] = out[k] + term if k in out else term
        return FourierField(self.dim, self.fiber_rank, out, "general")

    def commutator(self, other: "FourierField") -> "FourierField":
        return self.multiply(other) - other.multiply(self)

    # evaluation -------------------------------------------------------------

    def evaluate_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(self.dim)
        out = np.zeros((self.fiber_rank, self.fiber_rank), dtype=complex)
        for k, v in self._coeffs.items():
            out += v * np.exp(1j * np.dot(k, x))
        return fourier_norm(self.dim) * out

    def on_grid(self, points_per_dim: int) -> np.ndarray:
        """Values on the uniform grid ``x_j = 2π j / N``, shape ``(N,)*d + (n, n)``."""
        N = int(points_per_dim)
        axes = [2 * np.pi * np.arange(N) / N] * self.dim
        X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        out = np.zeros(X.shape[:-1] + (self.fiber_rank, self.fiber_rank), dtype=complex)
        for k, v in self._coeffs.items():
            out += np.exp(1j * (X @ np.asarray(k, float)))[..., None, None] * v
        return fourier_norm(self.dim) * out

    def integral_trace_product(self, other: "FourierField") -> complex:
        """``∫ tr(φ ψ) dx`` from the coefficients."""
        self._check_compatible(other)
        total = 0j
        for k, v in self._coeffs.items():
            w = other._coeffs.get(_neg(k))
            if w is not None:
                total += np.trace(v @ w)
        return complex(total)

    # serialization ----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "fiber_rank": self.fiber_rank,
            "kind": self.kind,
            "modes": [
                {"k": list(k), "re": v.real.tolist(), "im": v.imag.tolist()}
                for k, v in self._coeffs.items()
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping, kind: str | None = None) -> "FourierField":
        try:
            dim = int(data["dim"])
            rank = int(data["fiber_rank"])
            modes = data.get("modes", [])
        except (KeyError, TypeError) as exc:
            raise ShapeError(f"malformed field document: {exc}") from None
        unknown = set(data) - {"dim", "fiber_rank", "kind", "modes"}
        if unknown:
            raise ShapeError(f"unknown keys in field document: {sorted(unknown)}")
        coeffs = {}
        for m in modes:
            re = np.asarray(m["re"], dtype=float)
            im = np.asarray(m.get("im", np.zeros_like(re)), dtype=float)
            k = _key(m["k"], dim)
            if k in coeffs:
                raise ShapeError(f"duplicate mode {k}")
            coeffs[k] = re + 1j * im
        return cls(dim, rank, coeffs, kind or data.get("kind", "general"))

    def __eq__(self, other):
        if not isinstance(other, FourierField):
            return NotImplemented
        return (self.dim, self.fiber_rank, self.modes()) == (
            other.dim, other.fiber_rank, other.modes()
        ) and all(np.array_equal(v, other._coeffs[k]) for k, v in self._coeffs.items())

    def __repr__(self):
        return (f"FourierField(dim={self.dim}, fiber_rank={self.fiber_rank}, "
                f"kind={self.kind!r}, modes={len(self._coeffs)})")


@dataclass(frozen=True)
class GaugeField:
    """Connection one-form ``ω_μ``, one antihermitian field per direction."""

    components: tuple[FourierField, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ShapeError("a gauge field needs at least one component")
        d, n = comps[0].dim, comps[0].fiber_rank
        if len(comps) != d:
            raise ShapeError(f"{len(comps)} components given for dimension {d}")
        for c in comps:
            if (c.dim, c.fiber_rank) != (d, n):
                raise ShapeError("gauge field components disagree in dim or fiber rank")
            if c.kind != "antihermitian":
                raise DomainError("gauge field components must be antihermitian")
        object.__setattr__(self, "components", comps)

    @classmethod
    def zero(cls, dim: int, fiber_rank: int = 1) -> "GaugeField":
        return cls(tuple(FourierField.zero(dim, fiber_rank, "antihermitian")
                         for _ in range(dim)))

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def fiber_rank(self) -> int:
        return self.components[0].fiber_rank

    @property
    def bandwidth(self) -> int:
        return max(c.bandwidth for c in self.components)

    @property
    def is_zero(self) -> bool:
        return all(c.is_zero for c in self.components)

    def __getitem__(self, mu: int) -> FourierField:
        return self.components[mu]

    def __iter__(self):
        return iter(self.components)

    def modes(self) -> list[tuple[int, ...]]:
        return sorted(set().union(*(c.modes() for c in self.components)))

    def scaled(self, c: float) -> "GaugeField":
        return GaugeField(tuple(f.scaled(float(c)) for f in self.components))

    def conjugated(self, U) -> "GaugeField":
        return GaugeField(tuple(f.conjugated(U) for f in self.components))

    def tensor_identity(self, rank: int) -> "GaugeField":
        return GaugeField(tuple(f.tensor_identity(rank) for f in self.components))

    def to_dict(self) -> dict:
        return {"components": [c.to_dict() for c in self.components]}


class FieldStrength:
    """Antisymmetric array ``Ω_{μν}`` of antihermitian fields."""

    def __init__(self, entries: Mapping[tuple[int, int], FourierField], dim: int,
                 fiber_rank: int):
        self.dim = dim
        self.fiber_rank = fiber_rank
        self._entries: dict[tuple[int, int], FourierField] = {}
        for mu in range(dim):
            for nu in range(dim):
                if mu == nu:
                    continue
                f = entries.get((mu, nu))
                if f is None and (nu, mu) in entries:
                    f = -entries[(nu, mu)]
                if f is None:
                    f = FourierField.zero(dim, fiber_rank, "antihermitian")
                self._entries[(mu, nu)] = f

    def __getitem__(self, index: tuple[int, int]) -> FourierField:
        mu, nu = index
        if mu == nu:
            return FourierField.zero(self.dim, self.fiber_rank, "antihermitian")
        return self._entries[(mu, nu)]

    def modes(self) -> list[tuple[int, ...]]:
        return sorted(set().union(*(f.modes() for f in self._entries.values())))

    def coeff_array(self, k) -> np.ndarray:
        """All ``Ω̂_{μν}(k)`` as an array of shape ``(d, d, n, n)``."""
        out = np.zeros((self.dim, self.dim, self.fiber_rank, self.fiber_rank), dtype=complex)
        for (mu, nu), f in self._entries.items():
            out[mu, nu] = f.coeff(k)
        return out

    @property
    def bandwidth(self) -> int:
        return max((f.bandwidth for f in self._entries.values()), default=0)

    @property
    def is_zero(self) -> bool:
        return all(f.is_zero for f in self._entries.values())


def field_strength(omega: GaugeField) -> FieldStrength:
    """``Ω_{μν} = ∂_μ ω_ν - ∂_ν ω_μ + [ω_μ, ω_ν]``."""
    d, n = omega.dim, omega.fiber_rank
    entries = {}
    for mu in range(d):
        for nu in range(mu + 1, d):
            f = (omega[nu].derivative(mu) - omega[mu].derivative(nu)
                 + omega[mu].commutator(omega[nu]))
            entries[(mu, nu)] = f.with_kind("antihermitian")
    return FieldStrength(entries, d, n)


def pure_gauge(alpha: FourierField, fiber_rank: int = 1) -> GaugeField:
    """The connection ``ω_μ = i ∂_μ α · 1_n`` for a real scalar ``α``.

    ``∂ + ω = e^{-iα} ∂ e^{iα}``, so the resulting operators are unitarily
    equivalent to the free ones.
    """
    if alpha.fiber_rank != 1:
        raise ShapeError("pure_gauge expects a scalar field α")
    for k, v in alpha.coeffs.items():
        if abs(alpha.coeff(_neg(k))[0, 0] - np.conj(v[0, 0])) > _HERMITICITY_TOL * max(
                1.0, abs(v[0, 0])):
            raise DomainError("α must be real valued: coeffs(-k) = conj(coeffs(k))")
    eye = np.eye(fiber_rank)
    comps = []
    for mu in range(alpha.dim):
        comps.append(FourierField(
            alpha.dim, fiber_rank,
            {k: -k[mu] * v[0, 0] * eye for k, v in alpha.coeffs.items()},
            "antihermitian",
        ))
    return GaugeField(tuple(comps))


def load_field(source, kind: str | None = None) -> FourierField:
    """Read a field from a JSON string, path, or already-parsed mapping."""
    if isinstance(source, Mapping):
        return FourierField.from_dict(source, kind)
    text = str(source)
    if not text.lstrip().startswith("{"):
        with open(text) as fh:
            text = fh.read()
    return FourierField.from_dict(json.loads(text), kind)


def load_gauge_field(source) -> GaugeField:
    if isinstance(source, Mapping):
        items: Iterable = source.get("components", [])
    elif isinstance(source, Sequence) and not isinstance(source, str):
        items = source
    else:
        text = str(source)
        if not text.lstrip().startswith(("{", "[")):
            with open(text) as fh:
                text = fh.read()
        return load_gauge_field(json.loads(text))
    return GaugeField(tuple(FourierField.from_dict(c, "antihermitian") for c in items))
