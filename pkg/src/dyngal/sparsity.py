"""Best N-term errors, Gevrey/algebraic class norms and rate fitting."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .basis import _SparseVector


def omega(d: int) -> float:
    """Volume of the Euclidean unit ball in R^d (d = 1, 2)."""
    if d == 1:
        return 2.0
    if d == 2:
        return math.pi
    raise ValueError("only d = 1, 2 are supported")


@dataclass(frozen=True)
class GevreyClass:
    eta: float
    t: float
    d: int = 1
    class_norm: float | None = None

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if not 0 < self.t <= self.d:
            raise ValueError("need 0 < t <= d")
        omega(self.d)

    @property
    def omega_d(self) -> float:
        return omega(self.d)

    @property
    def rate(self) -> float:
        """a in exp(-a N^(t/d)): a = eta omega_d^(-t/d)."""
        return self.eta * self.omega_d ** (-self.t / self.d)

    def profile(self, n) -> np.ndarray:
        return np.exp(-self.rate * np.asarray(n, dtype=float) ** (self.t / self.d))


def rearrange(v) -> np.ndarray:
    """Non-increasing rearrangement of the weighted moduli of v.

    ``v`` may be a coefficient/dual vector or a plain array of moduli.
    """
    if isinstance(v, _SparseVector):
        m = v.weighted_moduli()
    else:
        m = np.abs(np.asarray(v, dtype=complex if np.iscomplexobj(v) else float)).ravel()
    return np.sort(m)[::-1]


def best_n_term(v) -> np.ndarray:
    """E_0 .. E_M with E_N the l2 norm of all but the N largest weighted moduli."""
    vs = rearrange(v)
    sq = vs[::-1] ** 2
    # tails summed from the smallest entry up
    tails = np.concatenate([[0.0], np.cumsum(sq)])[::-1]
    return np.sqrt(tails)


def _log_weights(n, g: GevreyClass) -> np.ndarray:
    r = g.t / g.d
    return 0.5 * (1.0 - r) * np.log(n) + g.rate * n ** r


def gevrey_norm(v, g: GevreyClass) -> float:
    """sup_n n^((1-t/d)/2) exp(eta omega_d^(-t/d) n^(t/d)) v*_n over stored terms."""
    vs = rearrange(v)
    pos = vs > 0
    if not pos.any():
        return 0.0
    n = np.arange(1, len(vs) + 1, dtype=float)[pos]
    return float(np.exp(np.max(np.log(vs[pos]) + _log_weights(n, g))))


def function_class_norm(v, g: GevreyClass) -> float:
    """sup_N E_N exp(eta omega_d^(-t/d) N^(t/d)), N >= 0."""
    E = best_n_term(v)
    pos = E > 0
    if not pos.any():
        return 0.0
    N = np.arange(len(E), dtype=float)[pos]
    return float(np.exp(np.max(np.log(E[pos]) + g.rate * N ** (g.t / g.d))))


@dataclass
class FitReport:
    model: str
    prefactor: float
    r_squared: float
    data_range: tuple
    d: int = 1
    eta: float | None = None
    t: float | None = None
    s: float | None = None
    degenerate: bool = False
    n_points: int = 0
    # log-size of the n^((1-t/d)/2) factor over the range, which the fit ignores
    power_factor_span: float = 0.0
    grid: list = field(default_factory=list, repr=False)

    @property
    def rate(self) -> float | None:
        """Exponent a of exp(-a N^(t/d)) (gevrey) or s/d (algebraic)."""
        if self.model == "gevrey":
            return self.eta * omega(self.d) ** (-self.t / self.d)
        return self.s / self.d

    def predict(self, N) -> np.ndarray:
        N = np.asarray(N, dtype=float)
        if self.model == "gevrey":
            return self.prefactor * np.exp(-self.rate * N ** (self.t / self.d))
        return self.prefactor * N ** (-self.rate)

    def as_dict(self) -> dict:
        out = asdict(self)
        out.pop("grid")
        out["data_range"] = list(self.data_range)
        return out

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)


def _linfit(x, y):
    """Least-squares line; r^2 is defined as 0 for constant y."""
    A = np.column_stack([x, np.ones_like(x)])
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - (slope * x + icpt)) ** 2))
    if ss_tot <= 1e-24 * max(1.0, float(np.sum(y * y))):
        return float(slope), float(icpt), 0.0
    return float(slope), float(icpt), min(1.0, max(0.0, 1.0 - ss_res / ss_tot))


def fit_decay_model(E, d: int = 1, model: str = "gevrey", N=None, t_step: float = 0.05,
                    min_points: int = 6) -> FitReport:
    """Fit E_N ~ C exp(-eta omega_d^(-t/d) N^(t/d)) or E_N ~ C N^(-s/d).

    Gevrey: t runs over the grid t_step, 2 t_step, ..., d and for each value
    log E_N is regressed on N^(t/d); the t with the best r^2 wins.
    Algebraic: log E_N regressed on log N over N >= 1.
    ``N`` defaults to 0, 1, 2, ...; only strictly positive E_N enter.
    """
    E = np.asarray(E, dtype=float).ravel()
    N = np.arange(len(E), dtype=float) if N is None else np.asarray(N, dtype=float).ravel()
    if N.shape != E.shape:
        raise ValueError("N and E must have the same length")
    keep = E > 0
    if model == "algebraic":
        keep &= N >= 1
    if keep.sum() < min_points:
        raise ValueError(f"need at least {min_points} positive entries, got {int(keep.sum())}")
    N, y = N[keep], np.log(E[keep])
    rng = (float(N.min()), float(N.max()))
    if model == "algebraic":
        slope, icpt, r2 = _linfit(np.log(N), y)
        return FitReport("algebraic", math.exp(icpt), r2, rng, d, s=-slope * d,
                         degenerate=(r2 == 0.0 or slope >= 0), n_points=len(N))
    if model != "gevrey":
        raise ValueError(f"unknown model {model!r}")
    n_grid = int(round(d / t_step))
    grid = []
    best = None
    for i in range(1, n_grid + 1):
        t = d * i / n_grid
        slope, icpt, r2 = _linfit(N ** (t / d), y)
        grid.append((t, r2))
        if best is None or r2 > best[3] + 1e-15:
            best = (t, slope, icpt, r2)
    t, slope, icpt, r2 = best
    n_pos = N[N > 0]
    span = 0.5 * (1 - t / d) * math.log(n_pos.max() / n_pos.min()) if len(n_pos) > 1 else 0.0
    return FitReport("gevrey", math.exp(icpt), r2, rng, d, eta=-slope * omega(d) ** (t / d), t=t,
                     degenerate=(r2 == 0.0 or slope >= 0), n_points=len(N),
                     power_factor_span=span, grid=grid)


def cardinality_bound(epsilon: float, g: GevreyClass) -> float:
    """omega_d ((1/eta) log(||v|| / epsilon))^(d/t) + 1; 1 once epsilon >= ||v||."""
    if g.class_norm is None:
        raise ValueError("GevreyClass needs class_norm for the cardinality bound")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if epsilon >= g.class_norm:
        return 1.0
    return g.omega_d * (math.log(g.class_norm / epsilon) / g.eta) ** (g.d / g.t) + 1.0


def rate_bound(epsilon: float, eta: float, t: float, d: int, prefactor: float) -> float:
    """omega_d ((1/eta) log(prefactor / epsilon))^(d/t), zero when the log is non-positive."""
    if epsilon <= 0 or prefactor <= 0:
        raise ValueError("epsilon and prefactor must be positive")
    x = math.log(prefactor / epsilon)
    return omega(d) * (x / eta) ** (d / t) if x > 0 else 0.0


def fit_convergence_rate(card, res_norms, d: int = 1, t_step: float = 0.05) -> FitReport:
    """Gevrey fit of residual norms against active-set sizes, for the rate check."""
    return fit_decay_model(res_norms, d=d, model="gevrey", N=card, t_step=t_step, min_points=3)


def write_curve_csv(E, stream, N=None) -> None:
    wr = csv.writer(stream, lineterminator="\n")
    wr.writerow(["N", "E_N"])
    N = range(len(E)) if N is None else N
    for n, e in zip(N, E):
        wr.writerow([int(n), repr(float(e))])
