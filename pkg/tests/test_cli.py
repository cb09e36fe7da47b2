import csv
import json

import numpy as np
import pytest

from tsallis_ot.cli import run
from tsallis_ot.fileio import coupling_csv, fmt, load_measure, measure_to_dict, read_coupling_csv
from tsallis_ot.measures import DiscreteMeasure


def write_measure(path, atoms, weights, dim=1):
    path.write_text(json.dumps({"dim": dim, "atoms": atoms, "weights": weights}))
    return str(path)


@pytest.fixture
def pair(tmp_path):
    mu = write_measure(tmp_path / "mu.json", [0.0, 0.3, 0.7, 1.0], [0.1, 0.2, 0.3, 0.4])
    nu = write_measure(tmp_path / "nu.json", [0.1, 0.5, 0.9], [0.5, 0.25, 0.25])
    return mu, nu


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def test_float_format_round_trips():
    rng = np.random.default_rng(0)
    for x in rng.standard_normal(1000) * 10.0 ** rng.integers(-30, 30, 1000):
        assert float(fmt(x)) == x


def test_measure_json_round_trip(tmp_path):
    mu = DiscreteMeasure([[0.0, 1.0], [2.0, 3.0]], [0.25, 0.75])
    p = tmp_path / "m.json"
    p.write_text(json.dumps(measure_to_dict(mu)))
    back = load_measure(p)
    assert np.array_equal(back.atoms, mu.atoms) and np.array_equal(back.weights, mu.weights)


def test_coupling_csv_round_trip(tmp_path):
    P = np.random.default_rng(1).random((3, 4)) / 7
    p = tmp_path / "plan.csv"
    p.write_text(coupling_csv(P))
    assert p.read_text().splitlines()[0] == "row,0,1,2,3"
    assert np.array_equal(read_coupling_csv(p), P)


def test_solve_regularised(pair, tmp_path):
    out = tmp_path / "solve.json"
    plan = tmp_path / "plan.csv"
    code = run(["solve", "--mu", pair[0], "--nu", pair[1], "--q", "2", "--epsilon", "0.1",
                "--out", str(out), "--plan-out", str(plan)])
    assert code == 0
    res = read_json(out)
    assert res["converged"] and res["relative_gap"] <= 1e-6
    assert res["manifest"]["subcommand"] == "solve"
    assert res["manifest"]["inputs"]["mu"].startswith("sha256:")
    P = read_coupling_csv(plan)
    np.testing.assert_allclose(P.sum(1), [0.1, 0.2, 0.3, 0.4], atol=1e-9)


def test_solve_epsilon_zero_is_exact(pair, tmp_path):
    out = tmp_path / "exact.json"
    assert run(["solve", "--mu", pair[0], "--nu", pair[1], "--epsilon", "0", "--out", str(out)]) == 0
    res = read_json(out)
    assert res["method"].startswith("exact")
    # monotone plan for |x - y| on these atoms
    assert res["value"] == pytest.approx(0.1 * 0.1 + 0.2 * 0.2 + 0.2 * 0.6 + 0.1 * 0.2 + 0.15 * 0.5 + 0.25 * 0.1)


def test_solve_kl_auto_uses_sinkhorn(pair, tmp_path):
    out = tmp_path / "kl.json"
    assert run(["solve", "--mu", pair[0], "--nu", pair[1], "--q", "1", "--epsilon", "0.1", "--out", str(out)]) == 0
    assert read_json(out)["method"] == "sinkhorn"


def test_malformed_measure_exit_one(tmp_path, pair, capsys):
    bad = write_measure(tmp_path / "bad.json", [0.0, 1.0], [0.5, 0.4])
    code = run(["solve", "--mu", bad, "--nu", pair[1], "--epsilon", "0.1"])
    assert code == 1
    assert "mass" in capsys.readouterr().err


def test_unknown_flag_exit_one(pair, capsys):
    assert run(["solve", "--mu", pair[0], "--nu", pair[1], "--epsilon", "0.1", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err
    assert run([]) == 1
    assert run(["solve", "--mu", pair[0], "--nu", pair[1], "--epsilon", "-1"]) == 1


def test_non_convergence_exit_three(pair, tmp_path):
    out = tmp_path / "nc.json"
    code = run(["solve", "--mu", pair[0], "--nu", pair[1], "--epsilon", "0.001", "--max-iter", "1",
                "--out", str(out)])
    assert code == 3
    assert read_json(out)["converged"] is False


def sweep_args(out, extra=()):
    return ["sweep", "--n", "32", "--grid", "0.2:0.5:4", "--out", str(out), *extra]


def test_sweep_outputs(tmp_path):
    out = tmp_path / "sweep.csv"
    assert run(sweep_args(out)) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["epsilon", "gap", "upper_env", "kl_env", "lower_env", "solver_gap", "converged"]
    assert [float(r["epsilon"]) for r in rows] == [0.2, 0.1, 0.05, 0.025]
    assert all(r["converged"] == "1" for r in rows)
    summary = read_json(tmp_path / "sweep.json")
    assert summary["grid"] == [0.2, 0.1, 0.05, 0.025]
    assert {"slope", "r2", "band_violations", "manifest"} <= set(summary)


def test_sweep_bytes_identical_across_threads(tmp_path, monkeypatch):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    monkeypatch.setenv("TSALLIS_OT_THREADS", "1")
    assert run(sweep_args(a)) == 0
    monkeypatch.setenv("TSALLIS_OT_THREADS", "4")
    assert run(sweep_args(b)) == 0
    assert a.read_bytes() == b.read_bytes()


def test_bad_thread_env(tmp_path, monkeypatch):
    monkeypatch.setenv("TSALLIS_OT_THREADS", "many")
    assert run(sweep_args(tmp_path / "x.csv")) == 1


def test_compare_paired_columns(tmp_path):
    out = tmp_path / "cmp.csv"
    assert run(["compare", "--q", "2", "--q", "1", "--n", "32", "--grid", "0.2:0.5:3", "--out", str(out)]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0])[:3] == ["epsilon", "gap_q2", "gap_q1"]
    # the KL-regularised gap is the smaller one on this grid
    assert all(float(r["gap_q1"]) < float(r["gap_q2"]) for r in rows)
    assert run(["compare", "--q", "2", "--n", "8", "--out", str(out)]) == 1


def test_quantize_command(tmp_path):
    atoms = ((np.arange(64) + 0.5) / 64).tolist()
    src = write_measure(tmp_path / "u.json", atoms, [1 / 64] * 64)
    out = tmp_path / "q.json"
    assert run(["quantize", "--in", src, "--n", "4", "--p", "1", "--out", str(out)]) == 0
    data = read_json(out)
    np.testing.assert_allclose(data["atoms"], [0.125, 0.375, 0.625, 0.875], atol=1e-12)
    assert data["achieved_wp"] == pytest.approx(1 / 16, rel=1e-2)
    # the output is itself a loadable measure
    assert load_measure(out).size == 4


def test_shadow_check_command(pair, tmp_path):
    out = tmp_path / "sc.json"
    assert run(["shadow-check", "--mu", pair[0], "--nu", pair[1], "--n", "2", "--out", str(out)]) == 0
    rep = read_json(out)
    assert rep["wp_identity_residual"] <= 1e-6
    inter, final = rep["intermediate"], rep["final"]
    assert inter["divergence_after"] <= inter["divergence_bound"] + 1e-9
    assert final["wp_to_optimal"] <= final["wp_bound"] + 1e-9


def test_reruns_identical_except_timestamp(pair, tmp_path):
    outs = [tmp_path / f"r{k}.json" for k in range(2)]
    for o in outs:
        assert run(["solve", "--mu", pair[0], "--nu", pair[1], "--epsilon", "0.05", "--out", str(o)]) == 0
    a, b = (read_json(o) for o in outs)
    for d in (a, b):
        d["manifest"].pop("timestamp")
        d["manifest"]["config"].pop("out")
    assert a == b
