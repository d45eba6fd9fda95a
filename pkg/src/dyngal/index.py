"""Lattice multi-indices, finite index sets and the computational window.

Multi-indices are plain tuples of ints, so ``(3,)`` in one dimension and
``(3, -2)`` in two.  Distances between indices are Euclidean.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Iterator

import numpy as np

MultiIndex = tuple

FOURIER = "fourier"
LEGENDRE_BS = "legendre_bs"
BASIS_KINDS = (FOURIER, LEGENDRE_BS)

# lowest admissible component of a Babuska-Shen index
LEGENDRE_MIN = 2

_INDEX_RE = re.compile(r"^\(\s*-?\d+(\s*,\s*-?\d+)*\s*\)$")


class WindowSaturationError(RuntimeError):
    """An index set needed by the algorithm does not fit into the window.

    ``clipped`` holds the window-intersected result when one exists, so the
    caller can report what was lost.
    """

    def __init__(self, message, clipped=None):
        super().__init__(message)
        self.clipped = clipped


def as_index(k) -> MultiIndex:
    """Coerce an int, sequence or numpy row into a multi-index tuple."""
    if isinstance(k, (int, np.integer)):
        return (int(k),)
    return tuple(int(c) for c in k)


def distance(k, l) -> float:
    return math.sqrt(sum((a - b) ** 2 for a, b in zip(k, l)))


def format_index(k) -> str:
    """Canonical text form, e.g. ``(3,-2)``."""
    return "(" + ",".join(str(int(c)) for c in k) + ")"


def parse_index(text: str) -> MultiIndex:
    if not _INDEX_RE.match(text.strip()):
        raise ValueError(f"not a multi-index: {text!r}")
    return tuple(int(c) for c in text.strip()[1:-1].split(","))


class IndexSet:
    """Immutable finite set of multi-indices kept in lexicographic order."""

    __slots__ = ("_members", "_sorted")

    def __init__(self, members: Iterable = ()):
        self._members = frozenset(as_index(k) for k in members)
        self._sorted = tuple(sorted(self._members))
        dims = {len(k) for k in self._sorted}
        if len(dims) > 1:
            raise ValueError(f"mixed dimensions in index set: {sorted(dims)}")

    @property
    def cardinality(self) -> int:
        return len(self._sorted)

    @property
    def members(self) -> tuple:
        return self._sorted

    def __len__(self):
        return len(self._sorted)

    def __iter__(self) -> Iterator[MultiIndex]:
        return iter(self._sorted)

    def __contains__(self, k):
        return as_index(k) in self._members

    def __eq__(self, other):
        if isinstance(other, IndexSet):
            return self._members == other._members
        return NotImplemented

    def __hash__(self):
        return hash(self._members)

    def __repr__(self):
        if len(self) > 8:
            head = ", ".join(format_index(k) for k in self._sorted[:4])
            return f"IndexSet([{head}, ...] |{len(self)}|)"
        return "IndexSet([" + ", ".join(format_index(k) for k in self._sorted) + "])"

    def __or__(self, other):
        return self.union(other)

    def __sub__(self, other):
        return self.difference(other)

    def __le__(self, other):
        return self.issubset(other)

    def union(self, other) -> "IndexSet":
        return IndexSet(self._members | _members(other))

    def difference(self, other) -> "IndexSet":
        return IndexSet(self._members - _members(other))

    def intersection(self, other) -> "IndexSet":
        return IndexSet(self._members & _members(other))

    def issubset(self, other) -> bool:
        return self._members <= _members(other)

    def as_array(self, d=None) -> np.ndarray:
        if not self._sorted:
            return np.zeros((0, d or 1), dtype=np.int64)
        return np.array(self._sorted, dtype=np.int64)

    def to_json(self) -> str:
        return json.dumps([format_index(k) for k in self._sorted])

    @classmethod
    def from_json(cls, text: str) -> "IndexSet":
        return cls(parse_index(s) for s in json.loads(text))


def _members(other):
    if isinstance(other, IndexSet):
        return other._members
    return frozenset(as_index(k) for k in other)


@lru_cache(maxsize=None)
def ball_offsets(d: int, J: int) -> np.ndarray:
    """All lattice offsets m in Z^d with |m| <= J, lexicographically sorted."""
    r = np.arange(-J, J + 1)
    grid = np.stack(np.meshgrid(*([r] * d), indexing="ij"), axis=-1).reshape(-1, d)
    keep = (grid ** 2).sum(axis=1) <= J * J
    out = grid[keep]
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Window:
    """Finite l-infinity box standing in for the infinite index set.

    Fourier windows hold every k with max|k_i| <= radius_max; Babuska-Shen
    windows hold 2 <= k <= radius_max (one dimension only).
    """

    radius_max: int
    basis_kind: str = FOURIER
    d: int = 1
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.basis_kind not in BASIS_KINDS:
            raise ValueError(f"unknown basis kind {self.basis_kind!r}")
        if self.d not in (1, 2):
            raise ValueError("only d = 1 or d = 2 is supported")
        if self.basis_kind == LEGENDRE_BS and self.d != 1:
            raise ValueError("the Babuska-Shen window is one-dimensional")
        if self.radius_max < (LEGENDRE_MIN if self.basis_kind == LEGENDRE_BS else 1):
            raise ValueError("radius_max too small")

    @property
    def lower(self) -> int:
        return LEGENDRE_MIN if self.basis_kind == LEGENDRE_BS else -self.radius_max

    def admissible(self, k) -> bool:
        """Whether k belongs to the basis index range at all (ignoring the box)."""
        if self.basis_kind == LEGENDRE_BS:
            return all(c >= LEGENDRE_MIN for c in k)
        return True

    def contains(self, k) -> bool:
        k = as_index(k)
        return len(k) == self.d and all(self.lower <= c <= self.radius_max for c in k)

    def __contains__(self, k):
        return self.contains(k)

    @property
    def indices(self) -> np.ndarray:
        """(M, d) array of every window index in lexicographic order."""
        if "indices" not in self._cache:
            r = np.arange(self.lower, self.radius_max + 1)
            grid = np.stack(np.meshgrid(*([r] * self.d), indexing="ij"), axis=-1)
            arr = grid.reshape(-1, self.d)
            arr.setflags(write=False)
            self._cache["indices"] = arr
        return self._cache["indices"]

    @property
    def size(self) -> int:
        return (self.radius_max - self.lower + 1) ** self.d

    def position(self, k) -> int:
        """Flat position of k in ``indices``."""
        k = as_index(k)
        if not self.contains(k):
            raise KeyError(f"{format_index(k)} is outside the window")
        n = self.radius_max - self.lower + 1
        pos = 0
        for c in k:
            pos = pos * n + (c - self.lower)
        return pos

    def positions(self, keys) -> np.ndarray:
        """Vectorised ``position`` for an (M, d) integer array."""
        arr = np.asarray(keys, dtype=np.int64).reshape(-1, self.d)
        if arr.size and ((arr < self.lower).any() or (arr > self.radius_max).any()):
            raise KeyError("index outside the window")
        n = self.radius_max - self.lower + 1
        pos = np.zeros(len(arr), dtype=np.int64)
        for j in range(self.d):
            pos = pos * n + (arr[:, j] - self.lower)
        return pos

    def boundary_distance(self, k) -> int:
        """Number of lattice steps from k to the nearest box face that can saturate.

        The lower Babuska-Shen face is the end of the basis, not of the
        window, and is therefore ignored.
        """
        k = as_index(k)
        up = min(self.radius_max - c for c in k)
        if self.basis_kind == LEGENDRE_BS:
            return up
        return min(up, min(c - self.lower for c in k))

    def all(self) -> IndexSet:
        return IndexSet(map(tuple, self.indices.tolist()))


def ball(center, J: int, w: Window) -> IndexSet:
    """Lattice points within Euclidean distance J of ``center``.

    Raises WindowSaturationError if the ball leaves the window; the error
    carries the window-clipped ball.
    """
    if J < 0:
        raise ValueError("J must be non-negative")
    center = as_index(center)
    if not w.contains(center):
        raise ValueError(f"center {format_index(center)} is outside the window")
    pts = ball_offsets(w.d, int(J)) + np.asarray(center, dtype=np.int64)
    saturated = w.boundary_distance(center) < J
    keep = np.all((pts >= w.lower) & (pts <= w.radius_max), axis=1)
    out = IndexSet(map(tuple, pts[keep].tolist()))
    if saturated:
        raise WindowSaturationError(
            f"ball of radius {J} around {format_index(center)} exceeds the window", out
        )
    return out


def union_of_balls(seeds: Iterable, J: int, w: Window) -> IndexSet:
    """Union of ``ball(s, J, w)`` over all seeds (ENRICH step)."""
    seeds = seeds if isinstance(seeds, IndexSet) else IndexSet(seeds)
    if len(seeds) == 0:
        return IndexSet()
    if J < 0:
        raise ValueError("J must be non-negative")
    arr = seeds.as_array(w.d)
    for s in seeds:
        if not w.contains(s):
            raise ValueError(f"seed {format_index(s)} is outside the window")
    offs = ball_offsets(w.d, int(J))
    pts = (arr[:, None, :] + offs[None, :, :]).reshape(-1, w.d)
    inside = np.all((pts >= w.lower) & (pts <= w.radius_max), axis=1)
    pts = np.unique(pts[inside], axis=0)
    out = IndexSet(map(tuple, pts.tolist()))
    bad = [s for s in seeds if w.boundary_distance(s) < J]
    if bad:
        raise WindowSaturationError(
            f"enrichment with J={J} around {format_index(bad[0])} exceeds the window", out
        )
    return out
