"""Dorfler marking, J-ball enrichment and the dynamic choice of theta.

Close to convergence theta is 1 - O(1e-20) and cannot be represented as a
float, so every routine here also accepts the complement
``slack = sqrt(1 - theta^2)`` and works with it internally.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .basis import DualVector
from .galerkin import Residual
from .index import IndexSet, Window, ball_offsets, union_of_balls
from .operator import DecayEstimate


@dataclass(frozen=True)
class MarkingParams:
    """Constants of the marking rule.

    ``slack_floor`` is the lower clamp on sqrt(1 - theta^2), i.e. the upper
    clamp theta_cap = sqrt(1 - slack_floor^2) on theta.
    """

    c0: float
    inverse_decay: DecayEstimate
    alpha_lo: float
    alpha_hi: float
    beta_lo: float = 1.0
    beta_hi: float = 1.0
    sigma_mark: float = 1.0
    slack_floor: float = 1e-16

    def __post_init__(self):
        if self.c0 <= 0 or self.sigma_mark <= 0:
            raise ValueError("c0 and sigma_mark must be positive")
        if not 0 < self.slack_floor < 1:
            raise ValueError("slack_floor must lie in (0, 1)")

    @property
    def theta_cap(self) -> float:
        return math.sqrt(1.0 - self.slack_floor ** 2)

    @property
    def c0_certified(self) -> float:
        """Largest C0 for which quadratic contraction is guaranteed."""
        return certified_c0(self.alpha_lo, self.alpha_hi, self.beta_lo, self.beta_hi)

    @property
    def certified(self) -> bool:
        return self.c0 <= self.c0_certified * (1 + 1e-12)


def certified_c0(alpha_lo, alpha_hi, beta_lo=1.0, beta_hi=1.0) -> float:
    return 0.25 * math.sqrt(alpha_lo / alpha_hi) * beta_lo / beta_hi


def theta_to_slack(theta: float) -> float:
    return math.sqrt(max(0.0, (1.0 - theta) * (1.0 + theta)))


def slack_to_theta(slack: float) -> float:
    return math.sqrt(max(0.0, 1.0 - slack * slack))


def _candidates(r):
    """Weighted moduli and keys of the markable entries, in canonical order."""
    if isinstance(r, Residual):
        wm = r.weighted()
        nz = np.flatnonzero(wm > 0)
        return wm[nz], r.window_used.indices[nz]
    if isinstance(r, DualVector):
        return r.weighted_moduli(), r.keys_array()
    raise TypeError("dorfler expects a Residual or a DualVector")


def dorfler(r, theta: float | None = None, *, slack: float | None = None) -> IndexSet:
    """Smallest set carrying a theta^2 share of ||r||_phi*^2 (greedy).

    Entries are taken by decreasing weighted modulus |r_k| d_k^(-1/2); ties
    go to the lexicographically smaller index.  Equivalent formulation used
    here: the unmarked tail must satisfy sum |R_k|^2 <= slack^2 ||r||^2.
    """
    if slack is None:
        if theta is None:
            raise ValueError("give theta or slack")
        if not 0.0 <= theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        slack = theta_to_slack(theta)
    if slack >= 1.0:
        return IndexSet()
    mods, keys = _candidates(r)
    if len(mods) == 0:
        return IndexSet()
    # lexsort: last key is primary -> descending modulus, then canonical index order
    order = np.lexsort(tuple(keys[:, j] for j in range(keys.shape[1] - 1, -1, -1)) + (-mods,))
    sq = mods[order] ** 2
    total = sq.sum()
    # tail[n] = mass left unmarked after taking the n largest entries
    tail = np.concatenate([np.cumsum(sq[::-1])[::-1], [0.0]])
    budget = slack * slack * total
    n = int(np.argmax(tail <= budget))
    return IndexSet(map(tuple, keys[order[:n]].tolist()))


def compute_J(theta: float | None, mp: MarkingParams, *, slack: float | None = None) -> int:
    """Smallest J >= 0 with C_{A^-1} exp(-eta~ J) <= sqrt((1 - theta^2) / (alpha_lo alpha_hi))."""
    if slack is None:
        if theta is None or theta >= 1.0:
            raise ValueError("theta must be < 1 (J would be infinite)")
        if theta < 0:
            raise ValueError("theta must be non-negative")
        slack = theta_to_slack(theta)
    if slack <= 0:
        raise ValueError("theta must be < 1 (J would be infinite)")
    dec = mp.inverse_decay
    target = slack / math.sqrt(mp.alpha_lo * mp.alpha_hi)
    if dec.c <= target or dec.diagonal:
        return 0
    if not (dec.eta > 0 and math.isfinite(dec.c)):
        raise ValueError("inverse decay estimate must be finite with eta > 0")
    J = max(0, math.ceil(math.log(dec.c / target) / dec.eta))
    # repair floating-point rounding around integer solutions
    while J > 0 and dec.c * math.exp(-dec.eta * (J - 1)) <= target:
        J -= 1
    while dec.c * math.exp(-dec.eta * J) > target:
        J += 1
    return J


def dynamic_slack(r_norm: float, r0_norm: float, mp: MarkingParams) -> float:
    """sqrt(1 - theta_n^2) = C0 (||r_n|| / ||r_0||)^sigma_mark, clamped to [slack_floor, 1]."""
    if r0_norm <= 0:
        raise ValueError("r0_norm must be positive (zero right-hand side is handled upstream)")
    s = mp.c0 * (r_norm / r0_norm) ** mp.sigma_mark
    return min(1.0, max(mp.slack_floor, s))


def dynamic_theta(r_norm: float, r0_norm: float, mp: MarkingParams) -> float:
    return slack_to_theta(dynamic_slack(r_norm, r0_norm, mp))


class Marking(NamedTuple):
    enriched: IndexSet
    marked: IndexSet
    J: int
    slack: float
    card_bound: int

    @property
    def theta(self) -> float:
        return slack_to_theta(self.slack)

    def log_record(self, n: int) -> dict:
        return {"n": n, "theta": self.theta, "J": self.J,
                "n_marked": len(self.marked), "n_enriched": len(self.enriched)}


def mark(r, slack: float, mp: MarkingParams | None, w: Window, enrich: bool = True) -> Marking:
    """DORFLER followed (optionally) by ENRICH with J = J(theta)."""
    marked = dorfler(r, slack=slack)
    if not enrich or len(marked) == 0:
        return Marking(marked, marked, 0, slack, len(marked))
    J = compute_J(None, mp, slack=slack)
    enriched = union_of_balls(marked, J, w)
    bound = len(ball_offsets(w.d, J)) * len(marked)
    return Marking(enriched, marked, J, slack, bound)


def e_dorfler(r, theta: float | None, mp: MarkingParams, w: Window, *, slack: float | None = None) -> IndexSet:
    """E-DORFLER: union of J(theta)-balls around the Dorfler set."""
    if slack is None:
        slack = theta_to_slack(theta)
    return mark(r, slack, mp, w).enriched
