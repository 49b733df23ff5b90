import csv
import hashlib
import json

import numpy as np
import pytest

from convexadmm import cli
from convexadmm.data import DataError, benchmark, ingest_csv, scaling_exponents, synth, write_csv
from convexadmm.model import load


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_ingest_small(tmp_path):
    ds = ingest_csv(_write(tmp_path / "a.csv", "x,y\n1,2\n3,4\n5,6\n"))
    assert (ds.n, ds.d) == (3, 1)
    assert ds.X[:, 0].tolist() == [1, 3, 5] and ds.y.tolist() == [2, 4, 6]
    ds = ingest_csv(_write(tmp_path / "b.csv", "y,x\n2,1\n4,3\n"), target_column="y")
    assert ds.y.tolist() == [2, 4] and ds.X[:, 0].tolist() == [1, 3]
    ds = ingest_csv(_write(tmp_path / "c.csv", "1,0\n2,1\n"), has_header=False, classification=True)
    assert ds.y.dtype.kind == "i"


@pytest.mark.parametrize("text,match", [
    ("x,y\n1,2\n3,abc\n", r"row 2, column 2"),
    ("x,y\n1,2\n3\n", "row 2 has 1 fields"),
    ("", "empty"),
    ("x,y\n", "no data"),
])
def test_ingest_errors(tmp_path, text, match):
    with pytest.raises(DataError, match=match):
        ingest_csv(_write(tmp_path / "e.csv", text))
    with pytest.raises(DataError, match="missing target"):
        ingest_csv(_write(tmp_path / "f.csv", "x,y\n1,2\n"), target_column="z")


def test_ingest_large_matches_reference_reader(tmp_path):
    rng = np.random.default_rng(0)
    M = rng.normal(size=(10000, 4))
    p = tmp_path / "big.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["a", "b", "c", "y"])
        w.writerows([[repr(float(v)) for v in row] for row in M])
    ds = ingest_csv(p)
    ref = np.loadtxt(p, delimiter=",", skiprows=1)
    digest = lambda a: hashlib.sha256(np.ascontiguousarray(a).tobytes()).hexdigest()
    assert digest(ds.X) == digest(ref[:, :3]) and digest(ds.y) == digest(ref[:, 3])


def test_synth_properties(tmp_path):
    a, b = synth("convex", 50, 3, 0.1, 7), synth("convex", 50, 3, 0.1, 7)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
    c = synth("convex", 40, 1, 0.0, 1)
    np.testing.assert_array_equal(c.y, c.X[:, 0] ** 2)
    dc = synth("dc", 30, 2, 0.0, 2)
    np.testing.assert_allclose(dc.y, np.abs(dc.X).sum(1) - (dc.X**2).sum(1))
    br = synth("bregman", 40, 2, 0.0, 3)
    assert br.classification and set(br.y.tolist()) == {0, 1}
    gap = br.X[br.y == 1, 0].mean() - br.X[br.y == 0, 0].mean()
    assert 3.0 < gap < 5.0
    write_csv(tmp_path / "s.csv", a)
    back = ingest_csv(tmp_path / "s.csv")
    assert np.array_equal(back.X, a.X) and np.array_equal(back.y, a.y)


def test_benchmark_rows_and_scaling():
    rows = benchmark([(200, 2), (200, 8)], iters=5)
    assert [(r["n"], r["d"]) for r in rows] == [(200, 2), (200, 8)]
    fake = [{"n": n, "d": d, "per_iter_ms": n**2 * d * 1e-6} for n in (100, 200) for d in (2, 4)]
    p, q = scaling_exponents(fake)
    assert p == pytest.approx(2.0) and q == pytest.approx(1.0)


@pytest.fixture
def linear_csv(tmp_path):
    return _write(tmp_path / "lin.csv", "x,y\n0,0\n1,1\n2,2\n")


def test_cli_fit_predict_round_trip(tmp_path, linear_csv):
    out = tmp_path / "fit"
    rc = cli.main(["fit", "--data", str(linear_csv), "--lambda", "1e-3", "--iters", "20000", "--out-dir", str(out)])
    assert rc == 0
    for name in ("model.json", "report.csv", "manifest.json"):
        assert (out / name).exists()
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "fit" and man["resolved"]["rho"] == "auto" and man["seed"] == 0
    pts = _write(tmp_path / "pts.csv", "x\n0\n1\n2\n")
    rc = cli.main(["predict", "--model", str(out / "model.json"), "--points", str(pts), "--out", str(tmp_path / "p.csv")])
    assert rc == 0
    pred = np.loadtxt(tmp_path / "p.csv", skiprows=1)
    np.testing.assert_allclose(pred, [0, 1, 2], atol=1e-2)


def test_cli_exit_codes(tmp_path, linear_csv, capsys):
    out = tmp_path / "m"
    assert cli.main(["fit", "--data", str(linear_csv), "--iters", "10", "--out-dir", str(out)]) == 0
    bad = _write(tmp_path / "bad.csv", "a,b\n1,2\n")
    assert cli.main(["predict", "--model", str(out / "model.json"), "--points", str(bad), "--out",
                     str(tmp_path / "x.csv")]) == 2
    with pytest.raises(SystemExit) as info:
        cli.main(["fit", "--data", str(linear_csv), "--rho", "1", "--rho-auto", "--out-dir", str(out)])
    assert info.value.code == 2
    assert cli.main(["fit", "--data", str(tmp_path / "missing.csv"), "--out-dir", str(out)]) == 2
    _write(tmp_path / "nn.csv", "x,y\n1,abc\n")
    assert cli.main(["fit", "--data", str(tmp_path / "nn.csv"), "--out-dir", str(out)]) == 2


def test_cli_divergence_exit_code(tmp_path, linear_csv, monkeypatch):
    from convexadmm.convex_fit import DivergenceError

    def boom(*a, **k):
        raise DivergenceError(12, 0.5)
    monkeypatch.setattr(cli, "fit_task", boom)
    out = tmp_path / "d"
    assert cli.main(["fit", "--data", str(linear_csv), "--out-dir", str(out)]) == 3
    assert "error" in json.loads((out / "manifest.json").read_text())["resolved"]


def test_cli_synth_tune_rerun(tmp_path):
    syn = tmp_path / "syn"
    assert cli.main(["synth", "--task", "bregman", "--n", "20", "--d", "2", "--seed", "1", "--out-dir", str(syn)]) == 0
    syn2 = tmp_path / "syn2"
    assert cli.main(["rerun", str(syn / "manifest.json"), "--out-dir", str(syn2)]) == 0
    assert (syn / "data.csv").read_bytes() == (syn2 / "data.csv").read_bytes()
    t1 = tmp_path / "t1"
    assert cli.main(["tune", "--task", "bregman", "--data", str(syn / "data.csv"), "--grid", "0.01,1",
                     "--refine-rounds", "0", "--iters", "300", "--out-dir", str(t1)]) == 0
    with open(t1 / "tune_summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    chosen = [r for r in rows if r["chosen"] == "1"][0]
    assert float(chosen["mean"]) == 1.0
    t2 = tmp_path / "t2"
    assert cli.main(["rerun", str(t1 / "manifest.json"), "--out-dir", str(t2)]) == 0
    assert (t1 / "model.json").read_bytes() == (t2 / "model.json").read_bytes()
    assert load(t1 / "model.json", kind="bregman").n == 20
    div = tmp_path / "div.csv"
    assert cli.main(["divergences", "--model", str(t1 / "model.json"), "--out", str(div)]) == 0
    D = np.loadtxt(div, delimiter=",", skiprows=1)
    assert D.shape == (20, 20) and D.min() >= -1e-9


def test_cli_benchmark(tmp_path):
    out = tmp_path / "b"
    assert cli.main(["benchmark", "--n", "100,200", "--d", "2,4", "--iters", "5", "--out-dir", str(out)]) == 0
    lines = (out / "benchmark.csv").read_text().splitlines()
    assert lines[0] == "n,d,iters,seconds,per_iter_ms" and len(lines) == 5
    assert "exponent_n" in json.loads((out / "manifest.json").read_text())["resolved"]
