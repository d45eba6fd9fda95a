import copy
import csv
import io
import json
import math

import numpy as np
import pytest

from dyngal import cli
from dyngal.experiment import (
    ConfigError,
    build_problem,
    canonical_enumeration,
    compare,
    manufacture,
    normalize_config,
    parse_config,
    validate_config,
)
from dyngal.galerkin import SolverError, solve
from dyngal.sparsity import best_n_term, fit_decay_model
from conftest import BUNDLED


def write_cfg(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return str(path)


@pytest.fixture
def base_cfg():
    return json.loads(BUNDLED.read_text())


def small_cfg(rhs, radius=40, **alg):
    return {
        "problem": {"basis": "fourier", "nu": {"(0)": 1.0, "(1)": 0.25, "(-1)": 0.25},
                    "sigma": {"(0)": 1.0}},
        "rhs": rhs,
        "algorithm": {"name": "dyn_gal", "epsilon": 1e-8, **alg},
        "window": {"radius_max": radius, "bandwidth": 1},
    }


def test_canonical_enumeration():
    from dyngal.basis import BasisDescriptor
    assert canonical_enumeration(BasisDescriptor.fourier(1), 2) == [(0,), (-1,), (1,), (-2,), (2,)]
    e2 = canonical_enumeration(BasisDescriptor.fourier(2), 1)
    assert e2 == [(0, 0), (-1, 0), (0, -1), (0, 1), (1, 0)]
    assert canonical_enumeration(BasisDescriptor.legendre(), 2) == [(2,), (3,), (4,)]


def test_manufacture_properties(bundled_run):
    p, S = bundled_run.problem, bundled_run.stiffness
    u, f = manufacture({"eta": 50.0, "t": 1.0, "support_radius": 20}, p, S, seed=0)
    mods = u.weighted_moduli()
    assert mods.max() == pytest.approx(math.exp(-25))
    assert np.sort(mods)[-2] / mods.max() < 1e-10
    u, f = manufacture({"eta": 0.5, "t": 1.0, "support_radius": 96}, p, S, seed=4)
    rep = fit_decay_model(best_n_term(u), 1)
    assert rep.eta == pytest.approx(0.5, rel=0.05)
    assert rep.t == pytest.approx(1.0, abs=0.05)
    g = solve(S, p.with_rhs(f), u.support(), tol=1e-14)
    diff = (g.to_array(S.window) - u.to_array(S.window)) * np.sqrt(S.weights)
    assert np.linalg.norm(diff) <= 1e-12 * u.norm()
    with pytest.raises(ValueError):
        manufacture({"eta": 0.5, "t": 1.0, "support_radius": 256}, p, S)


def test_seed_controls_phases(bundled_run):
    p, S = bundled_run.problem, bundled_run.stiffness
    spec = {"eta": 0.5, "t": 1.0, "support_radius": 10}
    a, _ = manufacture(spec, p, S, seed=1)
    b, _ = manufacture(spec, p, S, seed=1)
    c, _ = manufacture(spec, p, S, seed=2)
    assert a == b and a != c
    assert np.allclose(a.weighted_moduli(), c.weighted_moduli())


def test_config_normalisation_idempotent(base_cfg):
    once = normalize_config(base_cfg)
    assert normalize_config(once) == once
    assert validate_config(json.loads(json.dumps(once))) == once


@pytest.mark.parametrize("mutate, msg", [
    (lambda c: c.update(extra=1), "Additional properties"),
    (lambda c: c["algorithm"].update(name="newton"), "algorithm/name"),
    (lambda c: c["window"].update(radius_max=-3), "window/radius_max"),
    (lambda c: c["algorithm"].update(name="static_e_dorfler"), "theta"),
    (lambda c: c["problem"].update(nu=[1.0, 0.5]), "problem/nu"),
    (lambda c: c["rhs"].update(t=2.0), "rhs"),
])
def test_config_validation_errors(base_cfg, mutate, msg):
    cfg = copy.deepcopy(base_cfg)
    mutate(cfg)
    with pytest.raises(ConfigError, match=msg):
        validate_config(cfg)


def test_malformed_json_exit_4(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "problem": {\n    "basis": "fourier",,\n  }\n}\n')
    assert cli.main(["solve", str(path)]) == 4
    err = capsys.readouterr().err
    assert "bad.json:3:" in err and "malformed JSON" in err
    with pytest.raises(ConfigError, match=r":1:1:"):
        parse_config("", "x")


def test_missing_config_exit_4(tmp_path):
    assert cli.main(["solve", str(tmp_path / "nope.json")]) == 4


def test_zero_rhs_exits_0(tmp_path):
    cfg = small_cfg({"mode": "explicit", "coefficients": []})
    assert cli.main(["solve", write_cfg(tmp_path, cfg), "--out-dir", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "cfg_trace.json").read_text())
    assert doc["trace"]["termination_reason"] == "trivial_rhs"


def test_saturation_exit_3_and_retry(tmp_path):
    rhs = {"mode": "explicit", "coefficients": [{"index": "(39)", "re": 1.0}]}
    assert cli.main(["solve", write_cfg(tmp_path, small_cfg(rhs)), "--out-dir", str(tmp_path)]) == 3
    cfg = small_cfg(rhs)
    cfg["window"]["retry_on_saturation"] = True
    assert cli.main(["solve", write_cfg(tmp_path, cfg), "--out-dir", str(tmp_path)]) == 0


def test_max_iter_exit_2(tmp_path, base_cfg):
    base_cfg["algorithm"]["max_iter"] = 1
    assert cli.main(["solve", write_cfg(tmp_path, base_cfg), "--out-dir", str(tmp_path)]) == 2


def test_solver_failure_exit_5(tmp_path, base_cfg, monkeypatch):
    def boom(*a, **k):
        raise SolverError("CG stalled")
    monkeypatch.setattr("dyngal.experiment.dyn_gal", boom)
    assert cli.main(["solve", write_cfg(tmp_path, base_cfg), "--out-dir", str(tmp_path)]) == 5


def test_bundled_solve_outputs_deterministic(tmp_path):
    outs = []
    for sub in ("a", "b"):
        d = tmp_path / sub
        assert cli.main(["solve", str(BUNDLED), "--out-dir", str(d)]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    assert outs[0] == outs[1]
    names = set(outs[0])
    assert names == {"fourier1d_cosine_trace.csv", "fourier1d_cosine_trace.json",
                     "fourier1d_cosine_sparsity.json", "fourier1d_cosine_u_exact_EN.csv"}
    rows = list(csv.reader(io.StringIO(outs[0]["fourier1d_cosine_trace.csv"].decode())))
    assert rows[0] == ["n", "theta", "J", "card_added", "card_total", "residual_norm",
                       "residual_ratio", "energy_error", "contraction_check", "workload_cumulative"]
    doc = json.loads(outs[0]["fourier1d_cosine_trace.json"])
    assert set(doc) == {"config", "constants", "decay", "sparsity", "trace"}
    assert doc["decay"]["inverse"]["kind"] == "inverse"


def test_seed_flag_changes_output(tmp_path):
    cli.main(["solve", str(BUNDLED), "--out-dir", str(tmp_path / "a"), "--format", "csv"])
    cli.main(["solve", str(BUNDLED), "--out-dir", str(tmp_path / "b"), "--format", "csv", "--seed", "7"])
    a = (tmp_path / "a" / "fourier1d_cosine_trace.csv").read_text()
    b = (tmp_path / "b" / "fourier1d_cosine_trace.csv").read_text()
    assert a != b
    assert not (tmp_path / "a" / "fourier1d_cosine_trace.json").exists()


def _variants(base_cfg):
    dyn = copy.deepcopy(base_cfg)
    stat = copy.deepcopy(base_cfg)
    stat["algorithm"].update(name="static_e_dorfler", theta=0.5, epsilon=1e-6, max_iter=200)
    stat["output"]["name"] = "static"
    plain = copy.deepcopy(base_cfg)
    plain["algorithm"].update(name="plain_dorfler", theta=0.9, epsilon=1e-6, max_iter=200)
    plain["output"]["name"] = "plain"
    return [validate_config(c) for c in (dyn, stat, plain)]


def test_compare_aligned_groups(base_cfg, monkeypatch):
    cfgs = _variants(base_cfg)
    results, text = compare(cfgs[:2])
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0][0] == "n" and len(rows[0]) == 1 + 2 * 9
    assert len(rows) == 1 + max(len(r.trace.records) for r in results)
    results3, text3 = compare(cfgs)
    header = list(csv.reader(io.StringIO(text3)))[0]
    groups = {h.split(":")[0] for h in header[1:]}
    assert groups == {"0_fourier1d_cosine", "1_static", "2_plain"}
    monkeypatch.setenv("DYN_GAL_THREADS", "3")
    _, text_par = compare(cfgs, parallel=True)
    assert text_par == text3


def test_compare_cli(tmp_path, base_cfg):
    cfgs = _variants(base_cfg)
    paths = [write_cfg(tmp_path, c, f"c{i}.json") for i, c in enumerate(cfgs[:2])]
    assert cli.main(["compare", *paths, "--out-dir", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "compare.csv").exists()
    first = (tmp_path / "o" / "compare.csv").read_bytes()
    assert cli.main(["compare", *paths, "--out-dir", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "compare.csv").read_bytes() == first


def test_compare_rejects_mismatched_problems(tmp_path, base_cfg):
    other = copy.deepcopy(base_cfg)
    other["problem"]["sigma"] = {"(0)": 2.0}
    paths = [write_cfg(tmp_path, base_cfg, "a.json"), write_cfg(tmp_path, other, "b.json")]
    assert cli.main(["compare", *paths]) == 4
    with pytest.raises(ConfigError):
        compare([validate_config(base_cfg)])


def test_sparsity_subcommand(tmp_path, capsys):
    recs = [{"index": f"({k})", "re": math.exp(-0.4 * abs(k)) / math.sqrt(1 + k * k), "im": 0.0}
            for k in range(-40, 41)]
    path = tmp_path / "u.json"
    path.write_text(json.dumps(recs))
    assert cli.main(["sparsity", str(path), "--out-dir", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "u_fit.json").read_text())
    assert rep["gevrey"]["t"] == pytest.approx(1.0, abs=0.05)
    lines = (tmp_path / "u_EN.csv").read_text().splitlines()
    assert lines[0] == "N,E_N" and len(lines) == 1 + 82
    bad = tmp_path / "bad.json"
    bad.write_text("[{")
    assert cli.main(["sparsity", str(bad)]) == 4


def test_fit_decay_subcommand(tmp_path, capsys):
    assert cli.main(["fit-decay", str(BUNDLED), "--out-dir", str(tmp_path)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["inverse"]["eta"] > 0 and doc["alpha_lo"] == 0.5
    assert (tmp_path / "fourier1d_cosine_decay.json").exists()


def test_legendre_config_runs(tmp_path):
    cfg = {
        "problem": {"basis": "legendre_bs", "nu": [1.0, 0.0, 0.5], "sigma": [1.0]},
        "rhs": {"mode": "manufactured", "eta": 1.0, "t": 1.0, "support_radius": 60},
        "algorithm": {"name": "dyn_gal", "epsilon": 1e-8},
        "window": {"radius_max": 256, "bandwidth": 4},
        "decay": {"mode": "override", "c": 2.0, "eta": 0.5},
    }
    assert cli.main(["solve", write_cfg(tmp_path, cfg), "--out-dir", str(tmp_path)]) == 0
    p = build_problem(validate_config(cfg))
    assert p.alpha_lo == pytest.approx(1.0, abs=1e-9)
