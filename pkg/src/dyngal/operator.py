"""Stiffness matrices of L u = -div(nu grad u) + sigma u on finite windows.

Trigonometric basis phi_k = (2 pi)^(-d/2) exp(i k.x).  Writing the
coefficients as trigonometric sums nu(x) = sum_m nu_m exp(i m.x) (plain
Fourier series coefficients, no normalisation factor) the entries are

    a_{l,k} = a(phi_k, phi_l) = (k . l) nu_{l-k} + sigma_{l-k},

so a finite coefficient expansion gives an exactly banded matrix.

Babuska-Shen basis eta_k = (L_{k-2} - L_k) / sqrt(4k - 2), k >= 2, on (-1, 1):
entries are computed by Gauss-Legendre quadrature.

Decay fits work with the diagonally scaled matrix D^(-1/2) A D^(-1/2),
D = diag(d_k), which is the operator acting between the normalised l2
coefficient sequences of V and V*.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.polynomial import legendre as npleg
from scipy import optimize

from .basis import BasisDescriptor, CoeffVector, DualVector
from .index import (
    FOURIER,
    LEGENDRE_BS,
    IndexSet,
    Window,
    as_index,
    format_index,
)

POINCARE_BS = 4.0 / math.pi ** 2  # ||v||^2 <= (2/pi)^2 |v|_1^2 on (-1, 1)


class WorkCounter:
    """Thread-safe tally of multiply-adds."""

    def __init__(self, count: int = 0):
        self.count = int(count)
        self._lock = threading.Lock()

    def add(self, n) -> None:
        with self._lock:
            self.count += int(n)

    def merge(self, other: "WorkCounter") -> "WorkCounter":
        self.add(other.count)
        return self

    def __repr__(self):
        return f"WorkCounter({self.count})"


def _tally(work, n):
    if work is not None:
        work.add(n)


# --------------------------------------------------------------------------
# problem definition


def trig_eval(coeffs: dict, x: np.ndarray) -> np.ndarray:
    """Evaluate sum_m c_m exp(i m.x) at points x of shape (P, d)."""
    x = np.atleast_2d(x)
    out = np.zeros(len(x), dtype=complex)
    for m, c in coeffs.items():
        out += c * np.exp(1j * (x @ np.asarray(m, dtype=float)))
    return out


def _extrema(func, d, lo, hi, n_grid):
    """Global min and max of a smooth function on a box: grid scan plus polish."""
    axes = [np.linspace(lo, hi, n_grid, endpoint=False)] * d
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    vals = func(pts)
    out = []
    for sign in (1.0, -1.0):
        i0 = int(np.argmin(sign * vals))
        res = optimize.minimize(
            lambda z: sign * float(func(np.atleast_2d(z))[0]),
            pts[i0],
            method="Nelder-Mead",
            bounds=[(lo, hi)] * d,
            options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 4000},
        )
        out.append(sign * min(sign * vals[i0], res.fun))
    return out[0], out[1]


def trig_bounds(coeffs: dict, d: int) -> tuple:
    if not coeffs:
        return 0.0, 0.0
    deg = max(max(abs(c) for c in m) for m in coeffs)
    n_grid = max(64, 16 * deg) if d == 2 else max(2048, 64 * deg)
    return _extrema(lambda x: trig_eval(coeffs, x).real, d, 0.0, 2 * math.pi, n_grid)


def _check_real_trig(coeffs: dict, name: str):
    for m, c in coeffs.items():
        partner = coeffs.get(tuple(-a for a in m), 0j)
        if abs(partner - np.conj(c)) > 1e-14 * max(1.0, abs(c)):
            raise ValueError(
                f"{name} is not real: coefficient {format_index(m)} has no conjugate partner"
            )


@dataclass
class EllipticProblem:
    """Coefficients, their bounds and the right-hand side of the model problem.

    For the trigonometric basis ``nu`` and ``sigma`` are dicts mapping
    offsets m to Fourier coefficients; for the Babuska-Shen basis they are
    vectorised callables on (-1, 1).
    """

    basis: BasisDescriptor
    nu: object
    sigma: object
    nu_lo: float
    nu_hi: float
    sigma_lo: float
    sigma_hi: float
    rhs: DualVector | None = None

    def __post_init__(self):
        if not 0 < self.nu_lo <= self.nu_hi:
            raise ValueError("need 0 < nu_lo <= nu_hi")
        if self.basis.kind == FOURIER and not 0 < self.sigma_lo <= self.sigma_hi:
            raise ValueError("need 0 < sigma_lo <= sigma_hi for periodic problems")
        if self.basis.kind == LEGENDRE_BS and not 0 <= self.sigma_lo <= self.sigma_hi:
            raise ValueError("need 0 <= sigma_lo <= sigma_hi")

    @classmethod
    def fourier(cls, nu: dict, sigma: dict, d=1, rhs=None, nu_bounds=None, sigma_bounds=None):
        """Periodic problem on (0, 2 pi)^d.  Missing bounds are computed numerically."""
        nu = {as_index(m): complex(c) for m, c in nu.items()}
        sigma = {as_index(m): complex(c) for m, c in sigma.items()}
        for name, co in (("nu", nu), ("sigma", sigma)):
            if any(len(m) != d for m in co):
                raise ValueError(f"{name} offsets must have dimension {d}")
            _check_real_trig(co, name)
        nb = tuple(nu_bounds) if nu_bounds is not None else trig_bounds(nu, d)
        sb = tuple(sigma_bounds) if sigma_bounds is not None else trig_bounds(sigma, d)
        return cls(BasisDescriptor.fourier(d), nu, sigma, nb[0], nb[1], sb[0], sb[1], rhs)

    @classmethod
    def legendre(cls, nu: Callable, sigma: Callable, rhs=None, nu_bounds=None, sigma_bounds=None):
        """Dirichlet problem on (-1, 1) in the Babuska-Shen basis."""
        nb = tuple(nu_bounds) if nu_bounds is not None else _extrema(
            lambda x: np.asarray(nu(x[:, 0]), dtype=float), 1, -1.0, 1.0 + 1e-12, 4096)
        sb = tuple(sigma_bounds) if sigma_bounds is not None else _extrema(
            lambda x: np.asarray(sigma(x[:, 0]), dtype=float), 1, -1.0, 1.0 + 1e-12, 4096)
        return cls(BasisDescriptor.legendre(), nu, sigma, nb[0], nb[1], sb[0], sb[1], rhs)

    @property
    def d(self) -> int:
        return self.basis.d

    @property
    def alpha_lo(self) -> float:
        if self.basis.kind == LEGENDRE_BS:
            return self.nu_lo
        return min(self.nu_lo, self.sigma_lo)

    @property
    def alpha_hi(self) -> float:
        if self.basis.kind == LEGENDRE_BS:
            return self.nu_hi + POINCARE_BS * self.sigma_hi
        return max(self.nu_hi, self.sigma_hi)

    def with_rhs(self, rhs: DualVector) -> "EllipticProblem":
        return EllipticProblem(self.basis, self.nu, self.sigma, self.nu_lo, self.nu_hi,
                               self.sigma_lo, self.sigma_hi, rhs)

    def coefficient_reach(self) -> float:
        """Largest |m| carried by the coefficient expansions (inf for callables)."""
        if self.basis.kind != FOURIER:
            return math.inf
        ms = [m for m, c in list(self.nu.items()) + list(self.sigma.items()) if c != 0]
        return max((math.sqrt(sum(a * a for a in m)) for m in ms), default=0.0)


# --------------------------------------------------------------------------
# Babuska-Shen helpers


def legendre_table(n_max: int, x: np.ndarray) -> np.ndarray:
    """Rows L_0(x) ... L_n_max(x) by the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    out = np.empty((n_max + 1, x.size))
    out[0] = 1.0
    if n_max >= 1:
        out[1] = x
    for n in range(1, n_max):
        out[n + 1] = ((2 * n + 1) * x * out[n] - n * out[n - 1]) / (n + 1)
    return out


def bs_functions(k_max: int, x: np.ndarray):
    """Values and derivatives of eta_2 ... eta_k_max at x, each (k_max - 1, P)."""
    L = legendre_table(k_max, x)
    ks = np.arange(2, k_max + 1)
    vals = (L[ks - 2] - L[ks]) / np.sqrt(4 * ks - 2)[:, None]
    ders = -np.sqrt((2 * ks - 1) / 2.0)[:, None] * L[ks - 1]
    return vals, ders


def gauss_legendre(n: int):
    return npleg.leggauss(n)


def _bs_quad_points(k_max, extra):
    # exact for integrands of degree <= 2 k_max + 2 (+ 2 * extra)
    return k_max + 2 + extra


# --------------------------------------------------------------------------
# assembly


def assemble_entry(p: EllipticProblem, l, k, quad_extra: int = 32) -> complex:
    """The single entry a_{l,k} = a(phi_k, phi_l)."""
    l, k = as_index(l), as_index(k)
    if not (p.basis.admissible(l) and p.basis.admissible(k)):
        raise ValueError(f"inadmissible index pair {format_index(l)}, {format_index(k)}")
    if p.basis.kind == FOURIER:
        m = tuple(a - b for a, b in zip(l, k))
        kl = sum(a * b for a, b in zip(k, l))
        return kl * p.nu.get(m, 0j) + p.sigma.get(m, 0j)
    k_max = max(l[0], k[0])
    x, wq = gauss_legendre(_bs_quad_points(k_max, quad_extra))
    vals, ders = bs_functions(k_max, x)
    i, j = l[0] - 2, k[0] - 2
    nu = np.asarray(p.nu(x), dtype=float)
    sg = np.asarray(p.sigma(x), dtype=float)
    return complex(np.sum(wq * (nu * ders[i] * ders[j] + sg * vals[i] * vals[j])))


@dataclass(frozen=True)
class StiffnessWindow:
    """Assembled entries of A on a window, stored as CSR over window positions.

    Row l, column k holds a_{l,k}, so (A v)_l = sum_k a_{l,k} v_k.
    """

    window: Window
    matrix: sp.csr_matrix
    weights: np.ndarray
    bandwidth: float
    hermitian: bool
    reach: float
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_matrix(cls, window: Window, matrix, bandwidth=None, basis=None):
        """Wrap a user-supplied matrix (e.g. synthetic test data)."""
        basis = basis or BasisDescriptor(window.basis_kind, window.d)
        A = sp.csr_matrix(matrix, dtype=complex)
        A.eliminate_zeros()
        if A.shape != (window.size, window.size):
            raise ValueError("matrix shape does not match the window")
        reach = _reach(window, A)
        herm = abs(A - A.conj().T).max() <= 1e-12 * max(1.0, abs(A).max()) if A.nnz else True
        return cls(window, A, basis.weights(window.indices), reach if bandwidth is None else bandwidth,
                   bool(herm), reach)

    @property
    def basis(self) -> BasisDescriptor:
        return BasisDescriptor(self.window.basis_kind, self.window.d)

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def entry(self, l, k) -> complex:
        return complex(self.matrix[self.window.position(l), self.window.position(k)])

    def scaled(self) -> sp.csr_matrix:
        """D^(-1/2) A D^(-1/2)."""
        if "scaled" not in self._cache:
            s = sp.diags(1.0 / np.sqrt(self.weights))
            self._cache["scaled"] = (s @ self.matrix @ s).tocsr()
        return self._cache["scaled"]

    def csc(self) -> sp.csc_matrix:
        if "csc" not in self._cache:
            self._cache["csc"] = self.matrix.tocsc()
        return self._cache["csc"]

    def block(self, rows: np.ndarray, cols: np.ndarray) -> sp.csr_matrix:
        return self.matrix[rows][:, cols]

    def hermitian_defect(self) -> float:
        A = self.matrix
        return float(abs(A - A.conj().T).max()) if A.nnz else 0.0

    def export_coo(self, stream) -> None:
        """Write one ``l k re im`` line per stored entry."""
        A = self.matrix.tocoo()
        idx = self.window.indices
        order = np.lexsort((A.col, A.row))
        for r, c, v in zip(A.row[order], A.col[order], A.data[order]):
            stream.write(f"{format_index(idx[r])} {format_index(idx[c])} {v.real!r} {v.imag!r}\n")


def _reach(window, A) -> float:
    coo = A.tocoo()
    if coo.nnz == 0:
        return 0.0
    idx = window.indices.astype(float)
    diff = idx[coo.row] - idx[coo.col]
    return float(np.sqrt((diff ** 2).sum(axis=1)).max())


def assemble_window(p: EllipticProblem, w: Window, bandwidth: float, drop_tol=None,
                    quad_extra: int = 32) -> StiffnessWindow:
    """All entries with |l - k| <= bandwidth inside the window (symmetric truncation)."""
    if bandwidth < 0:
        raise ValueError("bandwidth must be non-negative")
    if w.basis_kind != p.basis.kind or w.d != p.d:
        raise ValueError("window and problem disagree on basis or dimension")
    if p.basis.kind == FOURIER:
        A = _assemble_fourier(p, w, bandwidth)
        tol = 0.0 if drop_tol is None else drop_tol
    else:
        A = _assemble_bs(p, w, bandwidth, quad_extra)
        tol = 1e-15 * abs(A.diagonal()).max() if drop_tol is None else drop_tol
    if tol > 0:
        A.data[np.abs(A.data) <= tol] = 0.0
    A.eliminate_zeros()
    A.sort_indices()
    herm_defect = abs(A - A.conj().T).max() if A.nnz else 0.0
    return StiffnessWindow(w, A, p.basis.weights(w.indices), float(bandwidth),
                           bool(herm_defect <= 1e-12 * max(1.0, abs(A).max())), _reach(w, A))


def _assemble_fourier(p, w, bandwidth):
    idx = w.indices
    offsets = sorted(
        m for m in set(p.nu) | set(p.sigma)
        if sum(a * a for a in m) <= bandwidth * bandwidth + 1e-9
    )
    rows, cols, data = [], [], []
    for m in offsets:
        l = idx + np.asarray(m, dtype=np.int64)
        inside = np.all((l >= w.lower) & (l <= w.radius_max), axis=1)
        k_in, l_in = idx[inside], l[inside]
        kl = (k_in * l_in).sum(axis=1).astype(float)
        vals = kl * p.nu.get(m, 0j) + p.sigma.get(m, 0j)
        rows.append(w.positions(l_in))
        cols.append(np.flatnonzero(inside))
        data.append(vals)
    if not offsets:
        return sp.csr_matrix((w.size, w.size), dtype=complex)
    A = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(w.size, w.size),
    ).tocsr()
    return A


def _assemble_bs(p, w, bandwidth, quad_extra):
    k_max = w.radius_max
    x, wq = gauss_legendre(_bs_quad_points(k_max, quad_extra))
    vals, ders = bs_functions(k_max, x)
    nu = np.asarray(p.nu(x), dtype=float) * wq
    sg = np.asarray(p.sigma(x), dtype=float) * wq
    dense = (ders * nu) @ ders.T + (vals * sg) @ vals.T
    ks = np.arange(2, k_max + 1)
    dense[np.abs(ks[:, None] - ks[None, :]) > bandwidth] = 0.0
    return sp.csr_matrix(dense.astype(complex))


def restrict(S: StiffnessWindow, lam: IndexSet) -> sp.csr_matrix:
    """Principal submatrix A_Lambda in canonical order of Lambda."""
    pos = _positions(S.window, lam)
    return S.block(pos, pos)


def _positions(w: Window, lam) -> np.ndarray:
    lam = lam if isinstance(lam, IndexSet) else IndexSet(lam)
    if len(lam) == 0:
        return np.zeros(0, dtype=np.int64)
    try:
        return w.positions(lam.as_array(w.d))
    except KeyError:
        raise ValueError("index set is not contained in the window") from None


def apply(S: StiffnessWindow, v: CoeffVector, out_set: IndexSet, work: WorkCounter | None = None) -> DualVector:
    """(A v)_k for k in out_set; tallies one multiply-add per stored entry used."""
    cols = _positions(S.window, v.support())
    rows = _positions(S.window, out_set)
    if len(cols) == 0 or len(rows) == 0:
        return DualVector({}, S.basis)
    B = S.block(rows, cols)
    _tally(work, B.nnz)
    res = B @ v.values()
    keys = S.window.indices[rows]
    return DualVector({tuple(k): val for k, val in zip(keys.tolist(), res)}, S.basis)


def energy_norm(S: StiffnessWindow, v) -> float:
    """sqrt(v^H A v) on the window; accepts a CoeffVector or a window array."""
    x = v.to_array(S.window) if isinstance(v, CoeffVector) else np.asarray(v)
    return float(math.sqrt(max(0.0, (np.vdot(x, S.matrix @ x)).real)))


# --------------------------------------------------------------------------
# decay estimates


@dataclass(frozen=True)
class DecayEstimate:
    """Exponential decay model c * exp(-eta * j).

    ``kind='forward'`` bounds entries of the scaled matrix (c_L, eta_L).
    ``kind='inverse'`` holds the truncation constants (C_{A^-1}, eta~_L) of
    the scaled inverse, ||A^-1 - (A^-1)_J|| <= c * exp(-eta * J); the raw
    entry fit is kept in ``entry_c``/``entry_eta``.  ``eta = inf`` marks a
    diagonal matrix.
    """

    c: float
    eta: float
    kind: str = "forward"
    residual: float = 0.0
    label: str = "fitted"
    entry_c: float | None = None
    entry_eta: float | None = None
    n_points: int = 0

    @property
    def diagonal(self) -> bool:
        return math.isinf(self.eta)

    def bound(self, j) -> float:
        if self.diagonal:
            return self.c if j == 0 else 0.0
        return self.c * math.exp(-self.eta * j)

    def as_dict(self) -> dict:
        return {
            "c": self.c,
            "eta": None if self.diagonal else self.eta,
            "kind": self.kind,
            "residual": self.residual,
            "label": self.label,
            "entry_c": self.entry_c,
            "entry_eta": self.entry_eta,
            "n_points": self.n_points,
        }

    @classmethod
    def override(cls, c, eta, kind="inverse"):
        return cls(float(c), float(eta), kind, 0.0, "override")


def _fit_log_linear(dist, maxima):
    """Least-squares slope of log(maxima) vs dist plus the enveloping prefactor."""
    y = np.log(maxima)
    slope, intercept = np.polyfit(dist, y, 1)
    eta = -slope
    if not eta > 0:
        raise ValueError("entries do not decay with distance; no exponential fit")
    resid = y - (intercept + slope * dist)
    rms = float(np.sqrt(np.mean(resid ** 2)))
    # lift the line so that it bounds every data point
    log_c = float(np.max(y + eta * dist))
    return math.exp(log_c), float(eta), rms


def _group_max(dist, mags, tol=1e-9):
    key = np.round(dist / tol).astype(np.int64)
    order = np.argsort(key, kind="stable")
    key, mags, dist = key[order], mags[order], dist[order]
    uniq, start = np.unique(key, return_index=True)
    maxima = np.maximum.reduceat(mags, start)
    return dist[start], maxima


def fit_decay(S: StiffnessWindow) -> DecayEstimate:
    """Fit |a_{k,m}| <= c_L exp(-eta_L |k-m|) on the scaled window matrix.

    The diagonal (distance 0) is part of the data.  Fewer than five
    off-diagonal distances still yields a fit, labelled ``banded``.
    """
    coo = S.scaled().tocoo()
    idx = S.window.indices.astype(float)
    dist = np.sqrt(((idx[coo.row] - idx[coo.col]) ** 2).sum(axis=1))
    mags = np.abs(coo.data)
    keep = mags > 0
    dist, mags = dist[keep], mags[keep]
    if len(mags) == 0:
        raise ValueError("empty matrix")
    d_u, m_u = _group_max(dist, mags)
    if len(d_u) == 1 and d_u[0] == 0.0:
        return DecayEstimate(float(m_u[0]), math.inf, "forward", 0.0, "diagonal", n_points=1)
    c, eta, rms = _fit_log_linear(d_u, m_u)
    label = "fitted" if np.count_nonzero(d_u > 0) >= 5 else "banded"
    return DecayEstimate(c, eta, "forward", rms, label, n_points=len(d_u))


def truncation_constant(c: float, eta: float, d: int, shrink: float = 0.1):
    """Turn an entry bound c exp(-eta |k-m|) into ||B - B_J|| <= C exp(-eta~ J).

    Uses the Schur test: the norm of the off-band remainder is at most the
    row sum T(J) = c * sum_{|m| > J} exp(-eta |m|).  For d = 1 this gives
    eta~ = eta exactly; for d = 2 the polynomial shell growth is absorbed by
    eta~ = (1 - shrink) eta.
    """
    if math.isinf(eta):
        return 0.0, math.inf
    if d == 1:
        q = math.exp(-eta)
        return 2.0 * c * q / (1.0 - q), eta
    eta_t = (1.0 - shrink) * eta
    R = int(math.ceil(60.0 / eta)) + 2
    r = np.arange(-R, R + 1)
    g = np.stack(np.meshgrid(*([r] * d), indexing="ij"), axis=-1).reshape(-1, d)
    rad = np.sqrt((g.astype(float) ** 2).sum(axis=1))
    terms = c * np.exp(-eta * rad)
    order = np.argsort(rad)
    rad, terms = rad[order], terms[order]
    tail = np.cumsum(terms[::-1])[::-1]  # tail[i] = sum of terms with rad >= rad[i]
    best = 0.0
    for J in range(R):
        i = np.searchsorted(rad, J, side="right")
        if i >= len(rad):
            break
        best = max(best, tail[i] * math.exp(eta_t * J))
    return best, eta_t


def default_probes(S: StiffnessWindow, margin: float) -> IndexSet:
    w = S.window
    lo = w.lower if w.basis_kind == FOURIER else w.lower + int(margin)
    hi = w.radius_max - int(math.ceil(margin))
    if w.basis_kind == FOURIER:
        lo = -hi
    if hi < lo:
        return IndexSet()
    pts = sorted({lo, hi, (lo + hi) // 2, (3 * lo + hi) // 4, (lo + 3 * hi) // 4})
    if w.basis_kind == LEGENDRE_BS:
        pts = sorted({max(p, w.lower) for p in pts} | {w.lower})
    if w.d == 1:
        return IndexSet((q,) for q in pts)
    return IndexSet((a, b) for a in pts for b in pts if abs(a) + abs(b) <= 2 * hi)


def fit_inverse_decay(S: StiffnessWindow, probe_set: IndexSet | None = None,
                      margin: float | None = None, floor: float = 1e-13) -> DecayEstimate:
    """Estimate (C_{A^-1}, eta~_L) from columns of the scaled inverse.

    Solves A z = e_l on the window for every probe l, scales to
    b_k = d_k^(1/2) z_k d_l^(1/2), fits log max_{|k-l| = j} |b_k| against j
    down to ``floor`` times the largest entry, then converts the entry fit
    with ``truncation_constant``.
    """
    w = S.window
    if margin is None:
        margin = 2 * S.bandwidth * 10
    if probe_set is None:
        probe_set = default_probes(S, margin)
    if len(probe_set) == 0:
        raise ValueError("no probe index fits inside the window margin")
    for l in probe_set:
        if not w.contains(l):
            raise ValueError(f"probe {format_index(l)} is outside the window")
        if w.boundary_distance(l) < margin:
            raise ValueError(f"probe {format_index(l)} is closer than {margin} to the window boundary")
    A = S.matrix
    off = A - sp.diags(A.diagonal())
    if off.nnz == 0 or abs(off).max() == 0:
        inv_diag = np.abs(S.weights / A.diagonal())
        return DecayEstimate(float(inv_diag.max()), math.inf, "inverse", 0.0, "diagonal",
                             float(inv_diag.max()), math.inf, 1)
    try:
        lu = spla.splu(S.csc())
    except RuntimeError as exc:
        raise np.linalg.LinAlgError(f"window matrix is singular: {exc}") from exc
    idx = w.indices.astype(float)
    sqw = np.sqrt(S.weights)
    dists, mags = [], []
    for l in probe_set:
        pos = w.position(l)
        e = np.zeros(w.size, dtype=complex)
        e[pos] = 1.0
        z = lu.solve(e)
        if not np.all(np.isfinite(z)):
            raise np.linalg.LinAlgError("probe solve failed")
        b = np.abs(z) * sqw * sqw[pos]
        dists.append(np.sqrt(((idx - idx[pos]) ** 2).sum(axis=1)))
        mags.append(b)
    dist = np.concatenate(dists)
    mags = np.concatenate(mags)
    keep = mags > floor * mags.max()
    d_u, m_u = _group_max(dist[keep], mags[keep])
    if len(d_u) < 2:
        return DecayEstimate(float(m_u[0]), math.inf, "inverse", 0.0, "diagonal",
                             float(m_u[0]), math.inf, 1)
    c, eta, rms = _fit_log_linear(d_u, m_u)
    C, eta_t = truncation_constant(c, eta, w.d)
    return DecayEstimate(C, eta_t, "inverse", rms, "fitted", c, eta, len(d_u))
