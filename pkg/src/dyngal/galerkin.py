"""Galerkin solves on index sets, residuals and the a posteriori error sandwich."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .basis import CoeffVector, DualVector
from .index import IndexSet, Window, WindowSaturationError, format_index
from .operator import EllipticProblem, StiffnessWindow, WorkCounter, _positions, _tally


class SolverError(RuntimeError):
    """Conjugate gradients did not reach the requested tolerance."""


@dataclass
class GalerkinSolution:
    lam: IndexSet
    u_hat: CoeffVector
    solver_iterations: int = 0
    solver_residual: float = 0.0
    values: np.ndarray = field(default=None, repr=False)  # coefficients in canonical order of lam

    def to_array(self, w: Window) -> np.ndarray:
        out = np.zeros(w.size, dtype=complex)
        if len(self.lam):
            out[_positions(w, self.lam)] = self.values
        return out


def zero_solution(S: StiffnessWindow) -> GalerkinSolution:
    return GalerkinSolution(IndexSet(), CoeffVector({}, S.basis), 0, 0.0, np.zeros(0, dtype=complex))


def pcg(A, b, weights, x0=None, tol=1e-12, max_iter=None, work: WorkCounter | None = None):
    """Conjugate gradients for Hermitian positive definite A, preconditioned by diag(weights).

    Stops when the preconditioned residual norm sqrt(r^H W^-1 r) drops to
    tol times that of b.  Returns (x, iterations, relative residual).
    """
    n = len(b)
    max_iter = 10 * n + 100 if max_iter is None else max_iter
    bnorm = math.sqrt(np.vdot(b, b / weights).real)
    x = np.zeros(n, dtype=complex) if x0 is None else np.array(x0, dtype=complex)
    if bnorm == 0.0:
        return np.zeros(n, dtype=complex), 0, 0.0
    r = b - A @ x
    _tally(work, A.nnz + n)
    z = r / weights
    p = z.copy()
    rz = np.vdot(r, z).real
    it = 0
    while math.sqrt(max(rz, 0.0)) > tol * bnorm:
        if it >= max_iter:
            raise SolverError(
                f"CG stalled after {it} iterations at relative residual "
                f"{math.sqrt(max(rz, 0.0)) / bnorm:.3e} (n={n}, "
                f"diag(A)/weights in [{np.min((A.diagonal() / weights).real):.3g}, "
                f"{np.max((A.diagonal() / weights).real):.3g}])"
            )
        Ap = A @ p
        pAp = np.vdot(p, Ap).real
        if pAp <= 0:
            raise SolverError(f"matrix is not positive definite (p^H A p = {pAp:.3e})")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = r / weights
        rz_new = np.vdot(r, z).real
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
        # matvec plus two axpys, the scaling, two inner products and the update
        _tally(work, A.nnz + 6 * n)
    r = b - A @ x
    _tally(work, A.nnz + n)
    return x, it, math.sqrt(np.vdot(r, r / weights).real) / bnorm


def solve(S: StiffnessWindow, p: EllipticProblem, lam: IndexSet, tol: float = 1e-12,
          x0=None, max_iter=None, work: WorkCounter | None = None) -> GalerkinSolution:
    """Galerkin solution of A_Lambda u_Lambda = f_Lambda by preconditioned CG.

    ``x0`` may be a previous GalerkinSolution or CoeffVector; it is extended
    by zeros onto ``lam`` (warm start).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    lam = lam if isinstance(lam, IndexSet) else IndexSet(lam)
    if len(lam) == 0:
        return zero_solution(S)
    w = S.window
    pos = _positions(w, lam)
    f = _rhs_array(p, w)
    b = f[pos]
    A = S.block(pos, pos)
    start = None
    if x0 is not None:
        full = x0.to_array(w) if hasattr(x0, "to_array") else np.asarray(x0)
        start = full[pos]
    x, it, res = pcg(A, b, S.weights[pos], start, tol, max_iter, work)
    keys = lam.members
    return GalerkinSolution(lam, CoeffVector(dict(zip(keys, x)), S.basis), it, res, x)


def _rhs_array(p: EllipticProblem, w: Window) -> np.ndarray:
    if p.rhs is None:
        return np.zeros(w.size, dtype=complex)
    return p.rhs.to_array(w)


@dataclass
class Residual:
    """r_k = f_k - (A u_Lambda)_k on the whole window.

    ``norm_dual`` is ||r||_phi* over the whole window, the error estimator.
    For an exact Galerkin solution r vanishes on Lambda and it equals
    ``norm_off``, the part outside Lambda; with an inexact solve the
    on-Lambda remainder keeps the two-sided error bounds rigorous.
    ``orthogonality`` is max over Lambda of |r_k| d_k^(-1/2).
    """

    array: np.ndarray = field(repr=False)
    lam: IndexSet
    window_used: Window
    weights: np.ndarray = field(repr=False)
    norm_dual: float
    orthogonality: float
    basis: object = field(repr=False, default=None)
    norm_off: float = 0.0

    @property
    def entries(self) -> DualVector:
        return DualVector.from_array(self.window_used, self.array, self.basis)

    def off_lambda_mask(self) -> np.ndarray:
        mask = np.ones(self.window_used.size, dtype=bool)
        if len(self.lam):
            mask[_positions(self.window_used, self.lam)] = False
        return mask

    def weighted(self) -> np.ndarray:
        """|R_k| = |r_k| d_k^(-1/2) over the window, zeroed on Lambda."""
        out = np.abs(self.array) / np.sqrt(self.weights)
        out[~self.off_lambda_mask()] = 0.0
        return out

    def marking_part(self) -> DualVector:
        arr = np.where(self.off_lambda_mask(), self.array, 0)
        return DualVector.from_array(self.window_used, arr, self.basis)


def residual(S: StiffnessWindow, p: EllipticProblem, g: GalerkinSolution, w: Window | None = None,
             work: WorkCounter | None = None) -> Residual:
    """Exact residual of g on the window.

    The window must extend beyond Lambda by the reach of the assembled
    matrix, otherwise part of A u_Lambda would fall off it.
    """
    win = S.window if w is None else w
    if win != S.window:
        raise ValueError("residual window must be the assembly window")
    f = _rhs_array(p, win)
    r = f.copy()
    if len(g.lam):
        for k in g.lam:
            if win.boundary_distance(k) < S.reach:
                raise WindowSaturationError(
                    f"A u_Lambda reaches past the window near {format_index(k)}")
        pos = _positions(win, g.lam)
        cols = S.csc()[:, pos]
        _tally(work, cols.nnz)
        r -= cols @ g.values
    scaled = np.abs(r) / np.sqrt(S.weights)
    mask = np.ones(win.size, dtype=bool)
    if len(g.lam):
        mask[_positions(win, g.lam)] = False
    norm = float(np.sqrt(np.sum(scaled ** 2)))
    norm_off = float(np.sqrt(np.sum(scaled[mask] ** 2)))
    orth = float(scaled[~mask].max()) if (~mask).any() else 0.0
    return Residual(r, g.lam, win, S.weights, norm, orth, S.basis, norm_off)


@dataclass(frozen=True)
class SandwichReport:
    lower: float
    upper: float
    energy_error: float | None = None

    @property
    def holds(self) -> bool | None:
        if self.energy_error is None:
            return None
        return self.lower <= self.energy_error <= self.upper

    def slack(self) -> float:
        """Worst ratio of violation, <= 1 when both inequalities hold."""
        e = self.energy_error
        if e is None:
            return float("nan")
        lo = self.lower / e if e > 0 else (0.0 if self.lower == 0 else math.inf)
        hi = e / self.upper if self.upper > 0 else (0.0 if e == 0 else math.inf)
        return max(lo, hi)


def energy_error(S: StiffnessWindow, exact_u: CoeffVector, g: GalerkinSolution) -> float:
    """|||u - u_Lambda||| through the quadratic form on the window."""
    e = exact_u.to_array(S.window) - g.to_array(S.window)
    return float(math.sqrt(max(0.0, np.vdot(e, S.matrix @ e).real)))


def error_sandwich(S: StiffnessWindow, p: EllipticProblem, g: GalerkinSolution, r: Residual,
                   exact_u: CoeffVector | None = None) -> SandwichReport:
    """Lower and upper error bounds from the residual, plus the true error if known."""
    b = p.basis
    lower = b.beta_lo / math.sqrt(p.alpha_hi) * r.norm_dual
    upper = b.beta_hi / math.sqrt(p.alpha_lo) * r.norm_dual
    err = energy_error(S, exact_u, g) if exact_u is not None else None
    return SandwichReport(lower, upper, err)


class ExtendedSystemView:
    """The operator P A P + Q on window vectors (A_Lambda on Lambda, identity elsewhere)."""

    def __init__(self, S: StiffnessWindow, lam: IndexSet):
        self.S = S
        self.lam = lam
        self._pos = _positions(S.window, lam)
        self._mask = np.zeros(S.window.size, dtype=bool)
        self._mask[self._pos] = True

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=complex)
        out = np.where(self._mask, 0, x)
        if len(self._pos):
            out[self._pos] += self.S.block(self._pos, self._pos) @ x[self._pos]
        return out

    def __matmul__(self, x):
        return self.apply(x)

    def projected_rhs(self, p: EllipticProblem) -> np.ndarray:
        f = _rhs_array(p, self.S.window)
        return np.where(self._mask, f, 0)
