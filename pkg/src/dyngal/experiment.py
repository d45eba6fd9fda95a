"""Config-driven experiments: problem setup, manufactured solutions, runs and comparisons."""
from __future__ import annotations

import copy
import csv
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .adapt import (
    CSV_COLUMNS,
    MAX_ITER,
    TOLERANCE_MET,
    TRIVIAL_RHS,
    WINDOW_SATURATED,
    ConvergenceTrace,
    dyn_gal,
    plain_dorfler_gal,
    static_e_dorfler_gal,
)
from .basis import BasisDescriptor, CoeffVector, DualVector
from .index import FOURIER, LEGENDRE_BS, LEGENDRE_MIN, Window, parse_index
from .marking import MarkingParams, certified_c0
from .operator import (
    DecayEstimate,
    EllipticProblem,
    StiffnessWindow,
    assemble_window,
    fit_decay,
    fit_inverse_decay,
)
from .sparsity import best_n_term, fit_convergence_rate, fit_decay_model, omega, write_curve_csv

EXIT_CODES = {TOLERANCE_MET: 0, TRIVIAL_RHS: 0, MAX_ITER: 2, WINDOW_SATURATED: 3}
EXIT_CONFIG = 4
EXIT_SOLVER = 5


class ConfigError(ValueError):
    """Invalid or unreadable experiment configuration."""


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_BOUNDS = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_COEFFS = {
    "oneOf": [
        # trigonometric: "(m1,...)" -> real or [re, im]
        {"type": "object", "additionalProperties": {
            "oneOf": [_NUM, {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}]}},
        # Babuska-Shen: monomial coefficients a0 + a1 x + ...
        {"type": "array", "items": _NUM, "minItems": 1},
    ]
}
_RECORD = {
    "type": "object",
    "properties": {"index": {"type": "string"}, "re": _NUM, "im": _NUM},
    "required": ["index", "re"],
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["problem", "rhs", "algorithm", "window"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "problem": {
            "type": "object",
            "additionalProperties": False,
            "required": ["basis", "nu", "sigma"],
            "properties": {
                "basis": {"enum": [FOURIER, LEGENDRE_BS]},
                "d": {"enum": [1, 2]},
                "nu": _COEFFS,
                "sigma": _COEFFS,
                "nu_bounds": _BOUNDS,
                "sigma_bounds": _BOUNDS,
            },
        },
        "rhs": {
            "oneOf": [
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["mode", "coefficients"],
                    "properties": {"mode": {"const": "explicit"},
                                   "coefficients": {"type": "array", "items": _RECORD}},
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["mode", "eta", "t"],
                    "properties": {"mode": {"const": "manufactured"}, "eta": _POS, "t": _POS,
                                   "support_radius": {"type": "integer", "minimum": 0}},
                },
            ]
        },
        "algorithm": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": ["dyn_gal", "static_e_dorfler", "plain_dorfler"]},
                "c0": _POS,
                "theta": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "sigma_mark": _POS,
                "epsilon": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "max_iter": {"type": "integer", "minimum": 1},
                "solver_tol": _POS,
            },
        },
        "window": {
            "type": "object",
            "additionalProperties": False,
            "required": ["radius_max"],
            "properties": {
                "radius_max": {"type": "integer", "minimum": 1},
                "bandwidth": {"type": "integer", "minimum": 0},
                "retry_on_saturation": {"type": "boolean"},
            },
        },
        "decay": {
            "oneOf": [
                {"type": "object", "additionalProperties": False, "required": ["mode"],
                 "properties": {"mode": {"const": "fit"}}},
                {"type": "object", "additionalProperties": False, "required": ["mode", "c", "eta"],
                 "properties": {"mode": {"const": "override"}, "c": _POS, "eta": _POS}},
            ]
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "name": {"type": "string", "minLength": 1},
                "dir": {"type": "string"},
                "format": {"enum": ["csv", "json", "both"]},
            },
        },
    },
}


def _fmt_json_error(exc: json.JSONDecodeError, source: str) -> str:
    return f"{source}:{exc.lineno}:{exc.colno}: malformed JSON: {exc.msg}"


def parse_config(text: str, source: str = "<config>") -> dict:
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(_fmt_json_error(exc, source)) from exc
    return validate_config(cfg, source)


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    cfg = parse_config(text, str(path))
    cfg["output"].setdefault("name", path.stem)
    return cfg


def validate_config(cfg: dict, source: str = "<config>") -> dict:
    """Schema validation plus cross-field checks; returns the normalised config."""
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        raise ConfigError(f"{source}: {where}: {exc.message}") from exc
    cfg = normalize_config(cfg)
    prob, alg = cfg["problem"], cfg["algorithm"]
    if prob["basis"] == LEGENDRE_BS and prob["d"] != 1:
        raise ConfigError(f"{source}: problem/d: the Babuska-Shen basis is one-dimensional")
    for name in ("nu", "sigma"):
        is_trig = isinstance(prob[name], dict)
        if is_trig != (prob["basis"] == FOURIER):
            raise ConfigError(f"{source}: problem/{name}: use an offset map for fourier, "
                              "a monomial list for legendre_bs")
    if alg["name"] != "dyn_gal" and "theta" not in alg:
        raise ConfigError(f"{source}: algorithm/theta: required for {alg['name']}")
    if alg["name"] == "static_e_dorfler" and alg.get("theta", 0) >= 1:
        raise ConfigError(f"{source}: algorithm/theta: must be < 1 with enrichment")
    if cfg["rhs"]["mode"] == "manufactured" and cfg["rhs"]["t"] > prob["d"]:
        raise ConfigError(f"{source}: rhs/t: need t <= d")
    return cfg


def normalize_config(cfg: dict) -> dict:
    """Fill defaults so that normalize(normalize(c)) == normalize(c)."""
    cfg = copy.deepcopy(cfg)
    cfg.setdefault("seed", 0)
    prob = cfg["problem"]
    prob.setdefault("d", 1)
    alg = cfg["algorithm"]
    alg.setdefault("sigma_mark", 1.0)
    alg.setdefault("epsilon", 1e-10)
    alg.setdefault("max_iter", 50)
    alg.setdefault("solver_tol", 1e-12)
    win = cfg["window"]
    win.setdefault("bandwidth", 1)
    win.setdefault("retry_on_saturation", False)
    cfg.setdefault("decay", {"mode": "fit"})
    out = cfg.setdefault("output", {})
    out.setdefault("dir", ".")
    out.setdefault("format", "both")
    if cfg["rhs"]["mode"] == "manufactured":
        cfg["rhs"].setdefault("support_radius", max(0, win["radius_max"] * 3 // 8))
    return cfg


def _trig_coeffs(spec: dict, d: int) -> dict:
    out = {}
    for key, val in spec.items():
        try:
            m = parse_index(key)
        except ValueError as exc:
            raise ConfigError(f"bad coefficient offset {key!r}") from exc
        if len(m) != d:
            raise ConfigError(f"coefficient offset {key!r} does not have dimension {d}")
        out[m] = complex(val[0], val[1]) if isinstance(val, list) else complex(val)
    return out


def build_problem(cfg: dict) -> EllipticProblem:
    prob = cfg["problem"]
    nb, sb = prob.get("nu_bounds"), prob.get("sigma_bounds")
    try:
        if prob["basis"] == FOURIER:
            d = prob["d"]
            return EllipticProblem.fourier(_trig_coeffs(prob["nu"], d), _trig_coeffs(prob["sigma"], d),
                                           d, nu_bounds=nb, sigma_bounds=sb)
        nu = np.polynomial.Polynomial(prob["nu"])
        sigma = np.polynomial.Polynomial(prob["sigma"])
        return EllipticProblem.legendre(nu, sigma, nu_bounds=nb, sigma_bounds=sb)
    except ValueError as exc:
        raise ConfigError(f"problem: {exc}") from exc


def canonical_enumeration(basis: BasisDescriptor, radius: int) -> list:
    """Indices with |k| <= radius ordered by |k| then lexicographically; n_k = position + 1."""
    if basis.kind == LEGENDRE_BS:
        return [(k,) for k in range(LEGENDRE_MIN, LEGENDRE_MIN + radius + 1)]
    rng = range(-radius, radius + 1)
    if basis.d == 1:
        pts = [(a,) for a in rng]
    else:
        pts = [(a, b) for a in rng for b in rng if a * a + b * b <= radius * radius]
    return sorted(pts, key=lambda k: (sum(c * c for c in k), k))


def manufacture(u_spec: dict, p: EllipticProblem, S: StiffnessWindow, seed: int = 0):
    """Exact solution with a prescribed Gevrey profile and its load f = A u on the window.

    |u_k| d_k^(1/2) = exp(-eta omega_d^(-t/d) n_k^(t/d)) along the canonical
    enumeration, with phases uniform on the unit circle.
    """
    eta, t = float(u_spec["eta"]), float(u_spec["t"])
    d = p.d
    if not 0 < t <= d:
        raise ValueError("need 0 < t <= d")
    w = S.window
    radius = int(u_spec.get("support_radius", w.radius_max * 3 // 8))
    keys = canonical_enumeration(p.basis, radius)
    margin = max(S.reach, 1)
    for k in (keys[-1], keys[0]) if d == 1 else keys:
        if not w.contains(k) or w.boundary_distance(k) < margin:
            raise ValueError(f"manufactured support radius {radius} is too close to the window boundary")
    n = np.arange(1, len(keys) + 1, dtype=float)
    mod = np.exp(-eta * omega(d) ** (-t / d) * n ** (t / d))
    mod /= np.sqrt(p.basis.weights(keys))
    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(len(keys)))
    u = CoeffVector(dict(zip(keys, mod * phase)), p.basis)
    f = DualVector.from_array(w, S.matrix @ u.to_array(w), p.basis)
    return u, f


def explicit_rhs(records: list, p: EllipticProblem) -> DualVector:
    try:
        return DualVector.from_records([{"im": 0.0, **r} for r in records], p.basis)
    except ValueError as exc:
        raise ConfigError(f"rhs: {exc}") from exc


@dataclass
class RunResult:
    config: dict
    trace: ConvergenceTrace
    problem: EllipticProblem
    stiffness: StiffnessWindow
    inverse_decay: DecayEstimate | None
    forward_decay: DecayEstimate | None
    marking: MarkingParams | None
    u_exact: CoeffVector | None = None
    reports: dict = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.trace.termination_reason]


def decay_estimates(cfg: dict, S: StiffnessWindow):
    try:
        fwd = fit_decay(S)
    except ValueError:
        fwd = None
    dec = cfg["decay"]
    if dec["mode"] == "override":
        return fwd, DecayEstimate.override(dec["c"], dec["eta"])
    return fwd, fit_inverse_decay(S)


def _setup(cfg: dict, radius: int):
    p = build_problem(cfg)
    w = Window(radius, p.basis.kind, p.d)
    S = assemble_window(p, w, cfg["window"]["bandwidth"])
    rhs = cfg["rhs"]
    u = None
    if rhs["mode"] == "manufactured":
        try:
            u, f = manufacture(rhs, p, S, cfg["seed"])
        except ValueError as exc:
            raise ConfigError(f"rhs: {exc}") from exc
    else:
        f = explicit_rhs(rhs["coefficients"], p)
        for k in f.entries:
            if not w.contains(k):
                raise ConfigError(f"rhs: index {k} lies outside the window")
    return p.with_rhs(f), S, u


def run_config(cfg: dict, on_record=None) -> RunResult:
    """Assemble, fit decay constants, run the configured algorithm and fit sparsity classes."""
    radius = cfg["window"]["radius_max"]
    result = _run_once(cfg, radius, on_record)
    if result.trace.termination_reason == WINDOW_SATURATED and cfg["window"]["retry_on_saturation"]:
        result = _run_once(cfg, 2 * radius, on_record)
        result.reports["window_retry"] = {"radius_max": 2 * radius}
    return result


def _run_once(cfg, radius, on_record):
    p, S, u = _setup(cfg, radius)
    fwd, inv = decay_estimates(cfg, S)
    alg = cfg["algorithm"]
    c0 = alg.get("c0", certified_c0(p.alpha_lo, p.alpha_hi, p.basis.beta_lo, p.basis.beta_hi))
    mp = MarkingParams(c0, inv, p.alpha_lo, p.alpha_hi, p.basis.beta_lo, p.basis.beta_hi,
                       alg["sigma_mark"])
    kw = dict(max_iter=alg["max_iter"], exact_u=u, tol=alg["solver_tol"], on_record=on_record)
    name = alg["name"]
    if name == "dyn_gal":
        trace = dyn_gal(p, S, mp, alg["epsilon"], **kw)
    elif name == "static_e_dorfler":
        trace = static_e_dorfler_gal(p, S, alg["theta"], alg["epsilon"], mp=mp, **kw)
    else:
        trace = plain_dorfler_gal(p, S, alg["theta"], alg["epsilon"], **kw)
    res = RunResult(cfg, trace, p, S, inv, fwd, mp, u)
    res.reports = sparsity_reports(res)
    return res


def _safe_fit(E, d, model, N=None, **kw):
    try:
        return fit_decay_model(E, d, model, N=N, **kw).as_dict()
    except ValueError as exc:
        return {"error": str(exc)}


def sparsity_reports(res: RunResult) -> dict:
    d = res.problem.d
    out = {}
    if res.u_exact is not None:
        out["u_exact_gevrey"] = _safe_fit(best_n_term(res.u_exact), d, "gevrey")
    tr = res.trace
    if tr.records:
        ratios = np.array(tr.residual_norms()) / tr.r0_norm
        try:
            out["residual_rate"] = fit_convergence_rate(tr.cardinalities(), ratios, d).as_dict()
        except ValueError as exc:
            out["residual_rate"] = {"error": str(exc)}
    return out


def config_json(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True)


def result_document(res: RunResult) -> dict:
    p = res.problem
    cfg = copy.deepcopy(res.config)
    cfg["output"].pop("dir", None)  # where the files went is not part of the experiment
    return {
        "config": cfg,
        "constants": {
            "alpha_lo": p.alpha_lo, "alpha_hi": p.alpha_hi,
            "beta_lo": p.basis.beta_lo, "beta_hi": p.basis.beta_hi,
            "c0": res.marking.c0 if res.marking else None,
            "c0_certified": res.marking.c0_certified if res.marking else None,
            "rhs_norm": p.rhs.norm() if p.rhs is not None else 0.0,
        },
        "decay": {
            "forward": res.forward_decay.as_dict() if res.forward_decay else None,
            "inverse": res.inverse_decay.as_dict() if res.inverse_decay else None,
        },
        "sparsity": res.reports,
        "trace": res.trace.as_dict(),
    }


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def write_artifacts(res: RunResult, out_dir, fmt: str = "both") -> list:
    """Write trace CSV/JSON, sparsity reports and E_N curves; returns the paths written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = res.config["output"].get("name", "run")
    paths = []
    if fmt in ("csv", "both"):
        path = out_dir / f"{name}_trace.csv"
        path.write_text(res.trace.csv_text(), encoding="utf-8")
        paths.append(path)
        if res.u_exact is not None:
            path = out_dir / f"{name}_u_exact_EN.csv"
            buf = io.StringIO()
            write_curve_csv(best_n_term(res.u_exact), buf)
            path.write_text(buf.getvalue(), encoding="utf-8")
            paths.append(path)
    if fmt in ("json", "both"):
        path = out_dir / f"{name}_trace.json"
        path.write_text(_dump(result_document(res)), encoding="utf-8")
        paths.append(path)
        path = out_dir / f"{name}_sparsity.json"
        path.write_text(_dump(res.reports), encoding="utf-8")
        paths.append(path)
    return paths


def _shared_block(cfg: dict) -> dict:
    return {k: cfg[k] for k in ("problem", "rhs", "window", "seed")}


def max_workers() -> int:
    try:
        cap = int(os.environ.get("DYN_GAL_THREADS", "0"))
    except ValueError:
        cap = 0
    return cap if cap > 0 else (os.cpu_count() or 1)


def compare(cfgs: list, parallel: bool = False) -> tuple:
    """Run several configs on the same problem; returns (results, aligned CSV text)."""
    if len(cfgs) < 2:
        raise ConfigError("compare needs at least two configs")
    ref = _shared_block(cfgs[0])
    for c in cfgs[1:]:
        if _shared_block(c) != ref:
            raise ConfigError("compare: configs must share problem, rhs, window and seed blocks")
    if parallel and max_workers() > 1:
        with ThreadPoolExecutor(max_workers=min(max_workers(), len(cfgs))) as ex:
            results = list(ex.map(run_config, cfgs))
    else:
        results = [run_config(c) for c in cfgs]
    return results, aligned_csv(results)


def aligned_csv(results: list) -> str:
    labels = []
    for i, r in enumerate(results):
        labels.append(f"{i}_{r.config['output'].get('name', r.config['algorithm']['name'])}")
    cols = [c for c in CSV_COLUMNS if c != "n"]
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["n"] + [f"{lab}:{c}" for lab in labels for c in cols])
    n_rows = max((len(r.trace.records) for r in results), default=0)
    for n in range(n_rows):
        row = [str(n)]
        for r in results:
            recs = r.trace.records
            row += recs[n].csv_row()[1:] if n < len(recs) else [""] * len(cols)
        wr.writerow(row)
    return buf.getvalue()


def read_coefficients(path, kind: str = "primal", basis_kind: str = FOURIER):
    """Load a JSON coefficient file: a list of {index, re, im} records or {"coefficients": [...]}."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(_fmt_json_error(exc, str(path))) from exc
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if isinstance(doc, dict):
        kind = doc.get("kind", kind)
        basis_kind = doc.get("basis", basis_kind)
        doc = doc.get("coefficients")
    if not isinstance(doc, list):
        raise ConfigError(f"{path}: expected a list of coefficient records")
    try:
        jsonschema.validate(doc, {"type": "array", "items": _RECORD})
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"{path}: {exc.message}") from exc
    d = len(parse_index(doc[0]["index"])) if doc else 1
    basis = BasisDescriptor(basis_kind, d)
    cls = DualVector if kind == "dual" else CoeffVector
    try:
        return cls.from_records([{"im": 0.0, **r} for r in doc], basis)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

