import csv
import json

import pytest

from robust_tpp import cli
from robust_tpp.errors import ImpossibleStream
from robust_tpp.scenarios import homogeneous_scenario


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def small(tmp_path):
    sc = tmp_path / "sc.json"
    sc.write_text(json.dumps(homogeneous_scenario(rates=(1, 4), n_per_class=10, n_outliers=2, L=2, seed=3)))
    ev, truth = tmp_path / "ev.csv", tmp_path / "truth.csv"
    assert cli.run(["simulate", "--scenario", str(sc), "--out", str(ev), "--truth", str(truth)]) == 0
    return tmp_path, ev, truth


def _cluster(ev, out, *extra):
    return cli.run(["cluster", str(ev), "--out", str(out), "--set", "K=2", "--set", "max_iters=20", *extra])


def test_pipeline_files_and_hashes(small):
    tmp, ev, truth = small
    fits, dist = tmp / "fits.json", tmp / "dist.csv"
    assert cli.run(["fit", str(ev), "--out", str(fits)]) == 0
    assert cli.run(["dist", str(fits), "--out", str(dist)]) == 0
    out = tmp / "run"
    assert _cluster(ev, out, "--fits", str(fits), "--dist", str(dist)) == 0
    model = json.loads((out / "model.json").read_text())
    h = model["config_hash"]
    for name in ("assignments.csv", "trace.csv"):
        assert {r["config_hash"] for r in _rows(out / name)} == {h}
    assert {"config", "source_hash", "B", "pi", "rho"} <= set(model)
    assert _rows(dist)[0]["config_hash"]
    metrics = tmp / "m.csv"
    grid = tmp / "grid.csv"
    args = ["eval", str(out / "assignments.csv"), "--truth", str(truth), "--model", str(out / "model.json"),
            "--out", str(metrics), "--emit-grid", str(grid), "--grid-points", "48"]
    assert cli.run(args) == 0
    got = {(r["metric"], r["scope"]): float(r["value"]) for r in _rows(metrics)}
    assert 0 < got[("purity", "all")] <= 1
    assert {r["config_hash"] for r in _rows(metrics)} == {h}
    g = _rows(grid)
    assert len(g) == 48 and set(g[0]) == {"t", "lambda_0", "lambda_1", "config_hash"}


def test_cluster_deterministic(small):
    tmp, ev, _ = small
    a, b = tmp / "a", tmp / "b"
    assert _cluster(ev, a, "--seed", "7") == 0
    assert _cluster(ev, b, "--seed", "7") == 0
    for name in ("model.json", "assignments.csv", "trace.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_eval_refuses_mismatched_source(small, tmp_path):
    tmp, ev, _ = small
    out = tmp / "run"
    assert _cluster(ev, out) == 0
    sc = tmp_path / "other.json"
    sc.write_text(json.dumps(homogeneous_scenario(rates=(1, 4), n_per_class=10, n_outliers=2, L=2, seed=4)))
    other = tmp_path / "truth2.csv"
    assert cli.run(["simulate", "--scenario", str(sc), "--out", str(tmp_path / "e2.csv"), "--truth", str(other)]) == 0
    args = ["eval", str(out / "assignments.csv"), "--truth", str(other), "--out", str(tmp_path / "m.csv")]
    assert cli.run(args) == 1
    assert cli.run(args + ["--force"]) == 0


def test_dist_single_stream(tmp_path):
    ev = tmp_path / "one.csv"
    ev.write_text("id,time\nonly,1.5\nonly,7.25\n")
    fits, dist = tmp_path / "f.json", tmp_path / "d.csv"
    assert cli.run(["fit", str(ev), "--out", str(fits)]) == 0
    assert cli.run(["dist", str(fits), "--out", str(dist)]) == 0
    rows = _rows(dist)
    assert len(rows) == 1 and float(rows[0]["only"]) == 0.0


def test_exit_codes(tmp_path, monkeypatch, capsys):
    assert cli.run([]) == 1
    assert cli.run(["cluster"]) == 1
    assert cli.run(["--print-config", "--set", "bogus=1"]) == 1
    assert "bogus" in capsys.readouterr().err
    bad = tmp_path / "bad.csv"
    bad.write_text("id,time\na,notatime\n")
    assert cli.run(["fit", str(bad), "--out", str(tmp_path / "f.json")]) == 2
    assert cli.run(["fit", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "f.json")]) == 2
    ev = tmp_path / "ev.csv"
    ev.write_text("".join(["id,time\n"] + [f"s{i},{i % 24 + 0.5}\n" for i in range(12)]))

    def boom(*a, **k):
        raise ImpossibleStream("stream 's3' has zero likelihood under every class")

    monkeypatch.setattr(cli, "fit", boom)
    assert cli.run(["cluster", str(ev), "--out", str(tmp_path / "r"), "--set", "K=2"]) == 3
    assert "'s3'" in capsys.readouterr().err


def test_print_config(capsys):
    assert cli.run(["--print-config", "--set", "K=6", "--seed", "3"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["K"] == 6 and cfg["seed"] == 3 and cfg["eps_bound"] == 0.1


def test_paper_scenario_end_to_end(tmp_path, capsys):
    ev, truth, out = tmp_path / "ev.csv", tmp_path / "t.csv", tmp_path / "run"
    assert cli.run(["simulate", "--outlier-type", "3", "--L", "4", "--out", str(ev), "--truth", str(truth)]) == 0
    assert cli.run(["cluster", str(ev), "--out", str(out)]) == 0
    m = tmp_path / "m.csv"
    assert cli.run(["eval", str(out / "assignments.csv"), "--truth", str(truth), "--out", str(m)]) == 0
    got = {(r["metric"], r["scope"]): float(r["value"]) for r in _rows(m)}
    assert got[("purity", "inliers")] >= 0.85
