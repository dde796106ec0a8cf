import json
import os

import pytest

from lossland.cli import execute, main


def _run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path)])


@pytest.fixture(scope="module")
def spurious_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("spurious")
    assert main(["spurious", "--out", str(out)]) == 0
    return out


def test_spurious_writes_certificate(spurious_dir):
    rep = json.loads((spurious_dir / "spurious_report.json").read_text())
    assert rep["pass"] is True and rep["command"] == "spurious"
    assert (spurious_dir / "certificate.json").exists()
    assert not [f for f in os.listdir(spurious_dir) if f.endswith(".tmp")]


def test_verify_and_tamper(spurious_dir, tmp_path):
    cert = spurious_dir / "certificate.json"
    assert _run(tmp_path, "verify", str(cert)) == 0
    d = json.loads(cert.read_text())
    d["scalars"]["witness_loss"] *= 0.5
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(d))
    assert _run(tmp_path, "verify", str(bad)) == 1
    d = json.loads(cert.read_text())
    d["x_d"][0][0] += 1.0
    bad.write_text(json.dumps(d))
    assert _run(tmp_path, "verify", str(bad)) == 2


def test_config_errors(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"dims": [1], "bogus": 1}))
    assert _run(tmp_path, "jung", "--config", str(cfg)) == 2
    cfg.write_text("[1, 2]")
    assert _run(tmp_path, "jung", "--config", str(cfg)) == 2
    assert _run(tmp_path, "jung", "--config", str(tmp_path / "missing.json")) == 2
    assert _run(tmp_path, "verify") == 2
    assert _run(tmp_path, "jung", "--jobs", "0") == 2
    assert not (tmp_path / "jung_report.json").exists()


def test_reports_independent_of_jobs(tmp_path):
    cfg = {"dims": [1, 2, 3], "trials": 50}
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert execute("jung", cfg, jobs=1, out_dir=str(a))[0] == 0
    assert execute("jung", cfg, jobs=2, out_dir=str(b))[0] == 0
    assert (a / "jung_report.json").read_bytes() == (b / "jung_report.json").read_bytes()


def test_seed_override():
    _, r1 = execute("jung", {"dims": [2], "trials": 20}, seed=5)
    assert r1["config"]["seed"] == 5


def test_figure1_csv(tmp_path):
    cfg = {"step": 0.5, "random_points": 1000, "csv_max_rows": 300}
    code, rep = execute("figure1", cfg, out_dir=str(tmp_path))
    assert code == 0, rep
    for name in ("figure1_linear.csv", "figure1_toy.csv"):
        raw = (tmp_path / name).read_bytes()
        lines = raw.split(b"\r\n")
        assert lines[0].startswith(b"y1,y2,y3,")
        assert 1 < len([x for x in lines if x]) <= 301
