"""Riesz basis descriptors and sparse coefficient vectors.

A primal vector stores coefficients v_k of v = sum v_k phi_k, a dual vector
stores f_k = <f, phi_k>.  Their norms are the weighted l2 sums

    ||v||_phi^2  = sum |v_k|^2 d_k,
    ||f||_phi*^2 = sum |f_k|^2 / d_k,

with d_k = 1 + |k|^2 for the trigonometric basis and d_k = 1 for the
Babuska-Shen basis, which is orthonormal in H^1_0.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .index import (
    FOURIER,
    LEGENDRE_BS,
    LEGENDRE_MIN,
    IndexSet,
    Window,
    as_index,
    format_index,
    parse_index,
)


@dataclass(frozen=True)
class BasisDescriptor:
    kind: str = FOURIER
    d: int = 1
    beta_lo: float = 1.0
    beta_hi: float = 1.0

    def __post_init__(self):
        if self.kind not in (FOURIER, LEGENDRE_BS):
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.kind == LEGENDRE_BS and self.d != 1:
            raise ValueError("only the one-dimensional Babuska-Shen basis is supported")
        if not 0 < self.beta_lo <= self.beta_hi:
            raise ValueError("need 0 < beta_lo <= beta_hi")

    @classmethod
    def fourier(cls, d=1):
        return cls(FOURIER, d)

    @classmethod
    def legendre(cls):
        return cls(LEGENDRE_BS, 1)

    def admissible(self, k) -> bool:
        k = as_index(k)
        if len(k) != self.d:
            return False
        if self.kind == LEGENDRE_BS:
            return k[0] >= LEGENDRE_MIN
        return True

    def weights(self, keys) -> np.ndarray:
        """Vectorised d_k for an (M, d) integer array."""
        arr = np.asarray(keys, dtype=np.int64).reshape(-1, self.d)
        if self.kind == LEGENDRE_BS:
            if (arr < LEGENDRE_MIN).any():
                raise ValueError("Babuska-Shen indices start at 2")
            return np.ones(len(arr))
        return 1.0 + (arr.astype(float) ** 2).sum(axis=1)

    def window(self, radius_max: int) -> Window:
        return Window(radius_max, self.kind, self.d)


def weight(k, b: BasisDescriptor) -> float:
    """The Riesz weight d_k."""
    if not b.admissible(k):
        raise ValueError(f"index {format_index(as_index(k))} is not admissible for {b.kind}")
    return float(b.weights([as_index(k)])[0])


class _SparseVector:
    """Sparse map multi-index -> complex value over a basis.

    Subclasses fix the sign of the weight exponent in the norm.
    """

    _power = 0.0

    def __init__(self, entries=None, basis: BasisDescriptor | None = None, drop_tol=0.0):
        self.basis = basis or BasisDescriptor()
        clean = {}
        for k, val in (entries or {}).items():
            k = as_index(k)
            if not self.basis.admissible(k):
                raise ValueError(f"index {format_index(k)} is not admissible for {self.basis.kind}")
            val = complex(val)
            if abs(val) > drop_tol:
                clean[k] = val
        self.entries = dict(sorted(clean.items()))

    def __repr__(self):
        return f"{type(self).__name__}(|support|={len(self.entries)}, basis={self.basis.kind})"

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, k):
        return self.entries.get(as_index(k), 0j)

    def __eq__(self, other):
        return (
            type(self) is type(other)
            and self.basis == other.basis
            and self.entries == other.entries
        )

    def support(self) -> IndexSet:
        return IndexSet(self.entries)

    def keys_array(self) -> np.ndarray:
        if not self.entries:
            return np.zeros((0, self.basis.d), dtype=np.int64)
        return np.array(list(self.entries), dtype=np.int64)

    def values(self) -> np.ndarray:
        return np.fromiter(self.entries.values(), dtype=complex, count=len(self.entries))

    def weighted_moduli(self) -> np.ndarray:
        """|v_k| d_k^(1/2) for primal, |f_k| d_k^(-1/2) for dual vectors."""
        if not self.entries:
            return np.zeros(0)
        return np.abs(self.values()) * self.basis.weights(self.keys_array()) ** (0.5 * self._power)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.weighted_moduli() ** 2)))

    def project(self, lam):
        lam = lam if isinstance(lam, IndexSet) else IndexSet(lam)
        return type(self)({k: v for k, v in self.entries.items() if k in lam}, self.basis)

    def _combine(self, other, sign):
        if type(other) is not type(self) or other.basis != self.basis:
            raise TypeError("vectors must share type and basis")
        out = dict(self.entries)
        for k, v in other.entries.items():
            out[k] = out.get(k, 0j) + sign * v
        return type(self)(out, self.basis)

    def __add__(self, other):
        return self._combine(other, 1.0)

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __mul__(self, c):
        return type(self)({k: c * v for k, v in self.entries.items()}, self.basis)

    __rmul__ = __mul__

    def to_array(self, w: Window) -> np.ndarray:
        out = np.zeros(w.size, dtype=complex)
        if self.entries:
            out[w.positions(self.keys_array())] = self.values()
        return out

    @classmethod
    def from_array(cls, w: Window, arr, basis: BasisDescriptor, drop_tol=0.0):
        arr = np.asarray(arr)
        nz = np.flatnonzero(np.abs(arr) > drop_tol)
        keys = w.indices[nz]
        return cls({tuple(k): arr[i] for k, i in zip(keys.tolist(), nz)}, basis)

    def to_records(self) -> list:
        return [
            {"index": format_index(k), "re": v.real, "im": v.imag}
            for k, v in self.entries.items()
        ]

    def to_json(self) -> str:
        return json.dumps(self.to_records())

    @classmethod
    def from_records(cls, records, basis: BasisDescriptor):
        return cls({parse_index(r["index"]): complex(r["re"], r["im"]) for r in records}, basis)

    @classmethod
    def from_json(cls, text: str, basis: BasisDescriptor):
        return cls.from_records(json.loads(text), basis)


class CoeffVector(_SparseVector):
    """Primal coefficients; ``norm()`` is ||v||_phi."""

    _power = 1.0


class DualVector(_SparseVector):
    """Dual coefficients <f, phi_k>; ``norm()`` is ||f||_phi*."""

    _power = -1.0


def phi_norm(v: CoeffVector) -> float:
    return v.norm()


def dual_norm(f: DualVector) -> float:
    return f.norm()


def project(v, lam):
    """Restriction P_Lambda (or P*_Lambda for dual vectors) to an index set."""
    return v.project(lam)


def pairing(f: DualVector, v: CoeffVector) -> complex:
    """Duality pairing sum f_k conj(v_k)."""
    return sum(fk * np.conj(v[k]) for k, fk in f.entries.items())
