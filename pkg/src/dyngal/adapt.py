"""Adaptive loops: DYN-GAL and its fixed-theta baselines.

All three share one driver.  Starting from Lambda_0 = {} and r_0 = f, each
pass marks, enlarges Lambda, re-solves and recomputes the residual until
||r_{n+1}||_phi* <= epsilon ||r_0||_phi* or a guard fires.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

from .basis import CoeffVector
from .galerkin import GalerkinSolution, energy_error, residual, solve, zero_solution
from .index import IndexSet, WindowSaturationError
from .marking import MarkingParams, dynamic_slack, mark, slack_to_theta, theta_to_slack
from .operator import EllipticProblem, StiffnessWindow, WorkCounter

TOLERANCE_MET = "tolerance_met"
MAX_ITER = "max_iter"
WINDOW_SATURATED = "window_saturated"
TRIVIAL_RHS = "trivial_rhs"

CSV_COLUMNS = (
    "n", "theta", "J", "card_added", "card_total", "residual_norm", "residual_ratio",
    "energy_error", "contraction_check", "workload_cumulative",
)


@dataclass
class IterationRecord:
    n: int
    theta_n: float
    J_n: int
    card_added: int
    card_total: int
    residual_norm: float
    residual_ratio: float
    energy_error: float | None
    contraction_check: float
    workload_cumulative: int
    # diagnostics beyond the CSV columns
    slack: float = 0.0
    n_marked: int = 0
    card_bound: int = 0
    energy_ratio: float | None = None
    sandwich_lower: float = 0.0
    sandwich_upper: float = 0.0
    solver_iterations: int = 0
    orthogonality: float = 0.0

    def csv_row(self) -> list:
        vals = [self.n, self.theta_n, self.J_n, self.card_added, self.card_total,
                self.residual_norm, self.residual_ratio, self.energy_error,
                self.contraction_check, self.workload_cumulative]
        return ["" if v is None else (repr(float(v)) if isinstance(v, float) else str(v)) for v in vals]


@dataclass
class ConvergenceTrace:
    epsilon: float
    algorithm: str = "dyn_gal"
    records: list = field(default_factory=list)
    terminated: bool = False
    termination_reason: str | None = None
    workload_total: int = 0
    r0_norm: float = 0.0
    initial_energy_error: float | None = None
    marking_log: list = field(default_factory=list)
    solution: GalerkinSolution | None = field(default=None, repr=False)
    message: str = ""

    @property
    def final_card(self) -> int:
        return self.records[-1].card_total if self.records else 0

    @property
    def final_ratio(self) -> float:
        return self.records[-1].residual_ratio if self.records else (0.0 if self.r0_norm == 0 else 1.0)

    def residual_norms(self) -> list:
        """||r_n|| for n = 0 .. last, including r_0 = f."""
        return [self.r0_norm] + [rec.residual_norm for rec in self.records]

    def cardinalities(self) -> list:
        return [0] + [rec.card_total for rec in self.records]

    def energy_errors(self) -> list:
        return [self.initial_energy_error] + [rec.energy_error for rec in self.records]

    def write_csv(self, stream) -> None:
        wr = csv.writer(stream, lineterminator="\n")
        wr.writerow(CSV_COLUMNS)
        for rec in self.records:
            wr.writerow(rec.csv_row())

    def csv_text(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    def as_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "epsilon": self.epsilon,
            "terminated": self.terminated,
            "termination_reason": self.termination_reason,
            "workload_total": self.workload_total,
            "r0_norm": self.r0_norm,
            "initial_energy_error": self.initial_energy_error,
            "final_cardinality": self.final_card,
            "message": self.message,
            "records": [asdict(rec) for rec in self.records],
            "marking_log": self.marking_log,
        }


def rho_bar(theta: float, p: EllipticProblem, *, slack: float | None = None) -> float:
    """Guaranteed energy reduction of one E-DORFLER step."""
    b = p.basis
    s = theta_to_slack(theta) if slack is None else slack
    return 2.0 * b.beta_hi * math.sqrt(p.alpha_hi) / (b.beta_lo * math.sqrt(p.alpha_lo)) * s


def rho_plain(theta: float, p: EllipticProblem) -> float:
    """Guaranteed energy reduction of one plain Dorfler step."""
    return math.sqrt(1.0 - p.alpha_lo / p.alpha_hi * theta * theta)


def quadratic_constant(p: EllipticProblem) -> float:
    """C1 in |||u - u_{n+1}||| <= C1 |||u - u_n|||^2."""
    return math.sqrt(p.alpha_hi) / (2.0 * p.basis.beta_lo * p.rhs.norm())


def _drive(p, S, slack_rule, enrich, mp, epsilon, max_iter, exact_u, tol, algorithm, on_record=None):
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    w = S.window
    work = WorkCounter()
    trace = ConvergenceTrace(epsilon=epsilon, algorithm=algorithm)
    g = zero_solution(S)
    r = residual(S, p, g)
    r0 = r.norm_dual
    trace.r0_norm = r0
    trace.solution = g
    if exact_u is not None:
        trace.initial_energy_error = energy_error(S, exact_u, g)
    if r0 == 0.0:
        trace.terminated = True
        trace.termination_reason = TRIVIAL_RHS
        return trace
    b = p.basis
    lo_c = b.beta_lo / math.sqrt(p.alpha_hi)
    hi_c = b.beta_hi / math.sqrt(p.alpha_lo)
    lam = IndexSet()
    e_prev = trace.initial_energy_error
    ratio_prev = 1.0
    for n in range(max_iter):
        slack = slack_rule(r.norm_dual, r0)
        try:
            mk = mark(r, slack, mp, w, enrich)
        except WindowSaturationError as exc:
            trace.termination_reason = WINDOW_SATURATED
            trace.message = str(exc)
            break
        trace.marking_log.append(mk.log_record(n))
        lam_new = lam | mk.enriched
        g = solve(S, p, lam_new, tol=tol, x0=g, work=work)
        try:
            r = residual(S, p, g, work=work)
        except WindowSaturationError as exc:
            trace.termination_reason = WINDOW_SATURATED
            trace.message = str(exc)
            break
        lam = lam_new
        ratio = r.norm_dual / r0
        err = energy_error(S, exact_u, g) if exact_u is not None else None
        rec = IterationRecord(
            n=n,
            theta_n=slack_to_theta(slack),
            J_n=mk.J,
            card_added=len(mk.enriched),
            card_total=len(lam),
            residual_norm=r.norm_dual,
            residual_ratio=ratio,
            energy_error=err,
            contraction_check=(ratio / 2.0) / (ratio_prev / 2.0) ** 2,
            workload_cumulative=work.count,
            slack=slack,
            n_marked=len(mk.marked),
            card_bound=mk.card_bound,
            energy_ratio=(err / e_prev) if (err is not None and e_prev) else None,
            sandwich_lower=lo_c * r.norm_dual,
            sandwich_upper=hi_c * r.norm_dual,
            solver_iterations=g.solver_iterations,
            orthogonality=r.orthogonality,
        )
        trace.records.append(rec)
        trace.solution = g
        if on_record is not None:
            on_record(rec)
        e_prev, ratio_prev = err, ratio
        if r.norm_dual <= epsilon * r0:
            trace.terminated = True
            trace.termination_reason = TOLERANCE_MET
            break
    else:
        trace.termination_reason = MAX_ITER
    trace.workload_total = work.count
    return trace


def dyn_gal(p: EllipticProblem, S: StiffnessWindow, mp: MarkingParams, epsilon: float,
            max_iter: int = 50, exact_u: CoeffVector | None = None, tol: float = 1e-12,
            on_record=None) -> ConvergenceTrace:
    """Adaptive Galerkin with dynamic marking sqrt(1 - theta_n^2) = C0 (||r_n|| / ||r_0||)^sigma."""
    return _drive(p, S, lambda rn, r0: dynamic_slack(rn, r0, mp), True, mp,
                  epsilon, max_iter, exact_u, tol, "dyn_gal", on_record)


def static_e_dorfler_gal(p: EllipticProblem, S: StiffnessWindow, theta: float, epsilon: float,
                         max_iter: int = 50, mp: MarkingParams | None = None,
                         exact_u: CoeffVector | None = None, tol: float = 1e-12,
                         on_record=None) -> ConvergenceTrace:
    """Fixed theta with enrichment; ``mp`` supplies the inverse decay constants for J."""
    if mp is None:
        raise ValueError("enrichment needs MarkingParams with an inverse decay estimate")
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    s = theta_to_slack(theta)
    return _drive(p, S, lambda rn, r0: s, True, mp, epsilon, max_iter, exact_u, tol,
                  "static_e_dorfler", on_record)


def plain_dorfler_gal(p: EllipticProblem, S: StiffnessWindow, theta: float, epsilon: float,
                      max_iter: int = 50, exact_u: CoeffVector | None = None,
                      tol: float = 1e-12, on_record=None) -> ConvergenceTrace:
    """Fixed theta, Dorfler set only (no enrichment)."""
    if not 0 < theta <= 1:
        raise ValueError("theta must lie in (0, 1]")
    s = theta_to_slack(theta)
    return _drive(p, S, lambda rn, r0: s, False, None, epsilon, max_iter, exact_u, tol,
                  "plain_dorfler", on_record)


def trace_json(trace: ConvergenceTrace, config: dict | None = None, decay: dict | None = None) -> str:
    doc = {"config": config, "decay": decay, "trace": trace.as_dict()}
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=True)
