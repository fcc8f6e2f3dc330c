import csv
import subprocess
import sys

import numpy as np
import pytest

from conftest import TAIL_WEIGHTS
from mivlue.cli import main
from mivlue.design import read_design
from mivlue.estimators import read_weights
from mivlue.graph import generate, read_edgelist, write_edgelist
from mivlue.models import SamplingSpec, sample_params, write_params
from mivlue.prior import sania_constant, sania_uncorrelated, write_prior
from mivlue.solver import read_report
from mivlue.unbiased import exists_by_feasibility


def _records(text):
    out, cur = [], {}
    for line in text.splitlines():
        if not line.strip():
            out.append(cur)
            cur = {}
            continue
        k, _, v = line.partition(":")
        cur[k.strip()] = v.strip()
    out.append(cur)
    return [r for r in out if r]


@pytest.fixture
def files(tmp_path):
    g = tmp_path / "g.txt"
    write_edgelist(generate("triangle_tail_v1", 4), g)
    d = tmp_path / "d.txt"
    assert main(["gen-design", "--type", "bernoulli", "--n", "4", "--exclude-trivial", "--out", str(d)]) == 0
    pr = tmp_path / "prior.txt"
    write_prior(sania_constant(4, jitter=0.0), pr)
    return tmp_path, g, d, pr


def test_gen_graph_round_trip(tmp_path, capsys):
    out = tmp_path / "g.txt"
    assert main(["gen-graph", "--family", "erdos_renyi", "--n", "7", "--p", "0.4", "--seed", "3",
                 "--out", str(out)]) == 0
    rec = _records(capsys.readouterr().out)[0]
    g = read_edgelist(out)
    assert g == generate("erdos_renyi", 7, seed=3, p=0.4)
    assert int(rec["edges"]) == g.num_edges()


def test_gen_design_types(tmp_path):
    ring = tmp_path / "ring.txt"
    write_edgelist(generate("ring", 5), ring)
    cases = [
        (["--type", "crd", "--n", "5", "--k", "2"], 10),
        (["--type", "bernoulli", "--n", "3"], 8),
        (["--type", "ring_orbit", "--base", "11000"], 5),
        (["--type", "coloring", "--graph", str(ring)], None),
    ]
    for argv, size in cases:
        out = tmp_path / "d.txt"
        assert main(["gen-design", *argv, "--out", str(out)]) == 0
        d = read_design(out)
        if size is not None:
            assert d.size == size
        assert d.pmf.sum() == pytest.approx(1.0)


def test_check_reports_witness(tmp_path, capsys):
    g = tmp_path / "g.txt"
    write_edgelist(generate("triangle_tail_v3", 4), g)
    d = tmp_path / "d.txt"
    main(["gen-design", "--type", "crd", "--n", "4", "--k", "2", "--out", str(d)])
    capsys.readouterr()
    assert main(["check", "--graph", str(g), "--design", str(d), "--kind", "SANIA"]) == 0
    rec = _records(capsys.readouterr().out)[0]
    assert rec["exists"] == "false"
    assert rec["witness_unit_one_based"] == "3"
    assert rec["feasible"] == "false"


def test_check_all_kinds(files, capsys):
    _, g, d, _ = files
    capsys.readouterr()
    assert main(["check", "--graph", str(g), "--design", str(d)]) == 0
    recs = _records(capsys.readouterr().out)
    assert [r["kind"] for r in recs] == ["SUTVA", "NIA", "SNIA", "SANIA", "SANASIA"]
    graph, design = read_edgelist(g), read_design(d)
    for r in recs:
        assert r["exists"] == str(exists_by_feasibility(r["kind"], graph, design).exists).lower()
    # without the all-control allocation a unit never sees untreated neighbors in both arms
    assert [r["exists"] for r in recs] == ["true", "false", "false", "true", "true"]


def test_solve_reproduces_tail_weights(files, capsys):
    tmp, g, d, pr = files
    out = tmp / "w.txt"
    assert main(["solve", "--graph", str(g), "--design", str(d), "--kind", "SANIA",
                 "--prior", str(pr), "--method", "general", "--out", str(out)]) == 0
    rep = read_report(out)
    assert np.abs(rep.weights.weights - TAIL_WEIGHTS).max() <= 0.1
    assert rep.optimal and rep.kkt_residual < 1e-6
    capsys.readouterr()
    assert main(["check", "--graph", str(g), "--design", str(d), "--kind", "SANIA",
                 "--weights", str(out)]) == 0
    assert _records(capsys.readouterr().out)[0]["unbiased"] == "true"


def test_solve_errors(files, tmp_path):
    tmp, g, d, pr = files
    g3 = tmp / "g3.txt"
    write_edgelist(generate("triangle_tail_v3", 4), g3)
    crd = tmp / "crd.txt"
    main(["gen-design", "--type", "crd", "--n", "4", "--k", "2", "--out", str(crd)])
    base = ["solve", "--kind", "SANIA", "--out", str(tmp / "x.txt")]
    assert main(base + ["--graph", str(g3), "--design", str(crd), "--prior", str(pr)]) == 1
    # an exactly singular Sigma(z) cannot go through the nonsingular reduction
    assert main(base + ["--graph", str(g), "--design", str(d), "--prior", str(pr),
                        "--method", "nonsingular"]) == 1
    assert main(base + ["--graph", str(g), "--design", str(d)]) == 1  # no prior
    assert main(base + ["--graph", str(g), "--design", str(d), "--prior", str(pr),
                        "--method", "sanasia"]) == 1
    assert main(base + ["--graph", str(g), "--design", str(d), "--prior", str(pr),
                        "--tol-kkt", "-1"]) == 1
    assert main(["solve", "--graph", str(tmp / "missing.txt"), "--design", str(d), "--kind", "SANIA",
                 "--prior", str(pr), "--out", str(tmp / "x.txt")]) == 1
    assert not (tmp / "x.txt").exists()


def test_solve_closed_form_methods(files):
    tmp, g, _, _ = files
    d = tmp / "full.txt"
    main(["gen-design", "--type", "bernoulli", "--n", "4", "--out", str(d)])
    pr = tmp / "unc.txt"
    write_prior(sania_uncorrelated(4), pr)
    for method, kind in (("thm3", "SANIA"), ("thm4", "NIA"), ("auto", "SANIA")):
        out = tmp / f"{method}.txt"
        assert main(["solve", "--graph", str(g), "--design", str(d), "--kind", kind,
                     "--prior", str(pr), "--method", method, "--out", str(out)]) == 0
        assert read_report(out).optimal


def test_evaluate(files, capsys):
    tmp, g, d, pr = files
    params = tmp / "params.txt"
    graph = read_edgelist(g)
    write_params(sample_params("SANIA", graph, SamplingSpec(0, 1, 2, 1, 1, 1), seed=1), "SANIA", params)
    w = tmp / "w.txt"
    main(["solve", "--graph", str(g), "--design", str(d), "--kind", "SANIA", "--prior", str(pr),
          "--out", str(w)])
    capsys.readouterr()
    assert main(["evaluate", "--graph", str(g), "--design", str(d), "--params", str(params),
                 "--weights", str(w), "--prior", str(pr)]) == 0
    rec = _records(capsys.readouterr().out)[0]
    assert abs(float(rec["bias"])) < 1e-9
    assert float(rec["integrated_variance"]) == pytest.approx(0.3349611359874123, abs=1e-8)
    saved = tmp / "ht.txt"
    assert main(["evaluate", "--graph", str(g), "--design", str(d), "--params", str(params),
                 "--estimator", "horvitz_thompson", "--save-weights", str(saved)]) == 0
    assert read_weights(saved)[0].weights.shape == (14, 4)
    assert main(["evaluate", "--graph", str(g), "--design", str(d), "--params", str(params)]) == 1


def test_config_file_defaults_and_override(files, capsys):
    tmp, g, d, pr = files
    cfg = tmp / "solve.cfg"
    out = tmp / "w.txt"
    cfg.write_text(f"graph = {g}\ndesign = {d}\nkind = SANIA\nprior = {pr}\nmethod = nonsingular\n"
                   f"out = {out}\n")
    assert main(["solve", "--config", str(cfg)]) == 1  # singular Sigma under the config's method
    assert main(["solve", "--config", str(cfg), "--method", "general"]) == 0
    assert read_report(out).path_used == "general_pinv"


@pytest.mark.parametrize("scenario,expected", [
    ("vary_n_density", 2 * 2 * 6), ("vary_effects", 2 * 2 * 6), ("vary_degree_power", 2 * 6),
])
def test_sweep_writes_csv(tmp_path, capsys, scenario, expected):
    cfg = tmp_path / "sweep.cfg"
    cfg.write_text(f"scenario = {scenario}\nreplicates = 2\nn = 5\nn_values = 5, 6\n"
                   "mu_beta = 0 2\nmu_gamma = 0 1\nrho = 0 1\nseed = 1\n")
    out = tmp_path / "out.csv"
    assert main(["sweep", "--config", str(cfg), "--out", str(out), "--seed", "4"]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == expected
    assert {r["seed"] for r in rows} == {"4"}
    assert {r["scenario"] for r in rows} == {scenario}


def test_sweep_config_errors(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("scenario = vary_effects\nbogus = 1\n")
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o.csv")]) == 1
    cfg.write_text("replicates = 2\n")
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o.csv")]) == 1


def test_console_script(tmp_path):
    out = tmp_path / "g.txt"
    r = subprocess.run([sys.executable, "-m", "mivlue.cli", "gen-graph", "--family", "ring", "--n", "5",
                        "--out", str(out)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert read_edgelist(out) == generate("ring", 5)
    r = subprocess.run([sys.executable, "-m", "mivlue.cli", "gen-graph"], capture_output=True, text=True)
    assert r.returncode == 1 and "error" in r.stderr
