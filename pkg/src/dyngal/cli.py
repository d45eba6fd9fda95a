"""Command line entry point: ``dyngal solve|compare|sparsity|fit-decay``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from .adapt import CSV_COLUMNS
from .experiment import (
    EXIT_CONFIG,
    EXIT_SOLVER,
    ConfigError,
    build_problem,
    compare,
    decay_estimates,
    load_config,
    read_coefficients,
    run_config,
    write_artifacts,
)
from .galerkin import SolverError
from .index import Window
from .operator import assemble_window
from .sparsity import best_n_term, fit_decay_model, write_curve_csv


def _apply_overrides(cfg: dict, args) -> dict:
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out_dir is not None:
        cfg["output"]["dir"] = args.out_dir
    if args.format is not None:
        cfg["output"]["format"] = args.format
    return cfg


def _load(path, args) -> dict:
    return _apply_overrides(load_config(path), args)


def _summary(res) -> str:
    tr = res.trace
    return (f"{res.config['output']['name']}: {tr.termination_reason} after {len(tr.records)} "
            f"iterations, |Lambda| = {tr.final_card}, ||r_n||/||r_0|| = {tr.final_ratio:.3e}, "
            f"workload = {tr.workload_total}")


def cmd_solve(args) -> int:
    cfg = _load(args.config, args)
    out = cfg["output"]
    out_dir = Path(out["dir"])
    stream = None
    on_record = None
    if out["format"] in ("csv", "both"):
        # rows are flushed as they arrive so that an interrupted run stays readable
        out_dir.mkdir(parents=True, exist_ok=True)
        stream = open(out_dir / f"{out['name']}_trace.csv", "w", encoding="utf-8", newline="")
        wr = csv.writer(stream, lineterminator="\n")
        wr.writerow(CSV_COLUMNS)
        stream.flush()

        def _flush_row(rec):
            wr.writerow(rec.csv_row())
            stream.flush()
        on_record = _flush_row
    try:
        res = run_config(cfg, on_record)
    finally:
        if stream is not None:
            stream.close()
    write_artifacts(res, out_dir, out["format"])
    print(_summary(res))
    return res.exit_code


def cmd_compare(args) -> int:
    cfgs = [_load(p, args) for p in args.configs]
    names = [c["output"]["name"] for c in cfgs]
    if len(set(names)) != len(names):
        for i, c in enumerate(cfgs):
            c["output"]["name"] = f"{c['output']['name']}_{i}"
    results, text = compare(cfgs, parallel=args.parallel)
    out_dir = Path(args.out_dir or cfgs[0]["output"]["dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    fmt = args.format or "both"
    for res in results:
        write_artifacts(res, out_dir, fmt)
        print(_summary(res))
    path = out_dir / "compare.csv"
    path.write_text(text, encoding="utf-8")
    print(f"wrote {path}")
    return max(r.exit_code for r in results)


def cmd_sparsity(args) -> int:
    v = read_coefficients(args.coeff_file, args.kind, args.basis)
    E = best_n_term(v)
    d = v.basis.d
    report = {"n_terms": len(v), "norm": float(E[0]) if len(E) else 0.0}
    for model in ("gevrey", "algebraic"):
        try:
            report[model] = fit_decay_model(E, d, model).as_dict()
        except ValueError as exc:
            report[model] = {"error": str(exc)}
    out_dir = Path(args.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.coeff_file).stem
    fmt = args.format or "both"
    if fmt in ("csv", "both"):
        buf = io.StringIO()
        write_curve_csv(E, buf)
        (out_dir / f"{stem}_EN.csv").write_text(buf.getvalue(), encoding="utf-8")
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if fmt in ("json", "both"):
        (out_dir / f"{stem}_fit.json").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_fit_decay(args) -> int:
    cfg = _load(args.config, args)
    p = build_problem(cfg)
    w = Window(cfg["window"]["radius_max"], p.basis.kind, p.d)
    S = assemble_window(p, w, cfg["window"]["bandwidth"])
    fwd, inv = decay_estimates(cfg, S)
    doc = {
        "forward": fwd.as_dict() if fwd else None,
        "inverse": inv.as_dict(),
        "alpha_lo": p.alpha_lo,
        "alpha_hi": p.alpha_hi,
        "hermitian_defect": S.hermitian_defect(),
        "window": {"radius_max": w.radius_max, "size": w.size, "bandwidth": S.bandwidth},
    }
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    out_dir = Path(cfg["output"]["dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{cfg['output']['name']}_decay.json").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out-dir", default=None, help="directory for output files")
    common.add_argument("--format", choices=["csv", "json", "both"], default=None)

    ap = argparse.ArgumentParser(prog="dyngal", description="Adaptive spectral Galerkin experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", parents=[common], help="run one experiment config")
    s.add_argument("config")
    s.set_defaults(func=cmd_solve)
    c = sub.add_parser("compare", parents=[common], help="run configs on a shared problem")
    c.add_argument("configs", nargs="+")
    c.add_argument("--parallel", action="store_true",
                   help="run configs concurrently (worker count capped by DYN_GAL_THREADS)")
    c.set_defaults(func=cmd_compare)
    sp = sub.add_parser("sparsity", parents=[common], help="best N-term curve and class fits")
    sp.add_argument("coeff_file")
    sp.add_argument("--kind", choices=["primal", "dual"], default="primal")
    sp.add_argument("--basis", choices=["fourier", "legendre_bs"], default="fourier")
    sp.set_defaults(func=cmd_sparsity)
    f = sub.add_parser("fit-decay", parents=[common], help="fit decay constants of A and A^-1")
    f.add_argument("config")
    f.set_defaults(func=cmd_fit_decay)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
