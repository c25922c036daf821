import json

import pytest

from rsloc import runner
from rsloc.cli import main

GAUSS = """
measure.kind = gaussian
measure.n = 2
measure.k = 1
run.horizon = 1
run.dt = 0.02
run.seed = 7
mala.count = 300
checks.samples = 5000
checks.freedman_paths = 2000
checks.hessian_points = 200
"""


def _cfg(tmp_path, text, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _load(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    cfg = _cfg(tmp, GAUSS)
    code = main(["run", "--config", cfg, "--out", str(tmp / "out"), "--replicas", "200", "--quiet"])
    return tmp / "out", code


def test_full_run_passes(full_run):
    out, code = full_run
    assert code == 0
    summary = _load(out / "summary.json")
    assert list(summary["checks"]) == sorted(runner.CHECKLIST)
    assert summary["checks"]["martingale"]["status"] == "pass"
    assert summary["config"]["run.seed"] == 7
    for name in ("paths.csv", "spectra.csv", "curves.csv", "plots/alpha.svg", "plots/martingale.svg"):
        assert (out / name).exists()
    header = (out / "paths.csv").read_text().splitlines()[0].split(",")
    assert header[:3] == ["replica", "t", "c0"] and "qv_bound" in header


def test_report_after_run(full_run, capsys):
    out, _ = full_run
    assert main(["report", "--out", str(out)]) == 0
    doc = _load(out / "report.json")
    assert list(doc["checklist"]) == sorted(runner.CHECKLIST)
    assert doc["missing"] == [] and doc["failed"] == []
    first = [line.split()[0] for line in capsys.readouterr().out.splitlines()]
    assert sorted(first) == sorted(runner.CHECKLIST)


def test_report_missing_checks_fail(tmp_path):
    cfg = _cfg(tmp_path, "measure.kind = flat_strong\nmeasure.eta = 2\n")
    out = tmp_path / "o"
    assert main(["verify-potential", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    assert main(["report", "--out", str(out), "--quiet"]) == 1
    doc = _load(out / "report.json")
    assert "martingale" in doc["missing"] and "hypothesis" not in doc["missing"]


def test_report_without_summaries(tmp_path):
    assert main(["report", "--out", str(tmp_path / "nothing"), "--quiet"]) == 2


def test_report_failing_check(tmp_path):
    out = tmp_path / "o"
    out.mkdir()
    checks = {name: runner.check("pass") for name in runner.CHECKLIST}
    checks["martingale"] = runner.check("fail")
    doc = {"stage": "run", "config": {}, "checks": checks, "failed": ["martingale"]}
    (out / "summary.json").write_text(json.dumps(doc))
    assert main(["report", "--out", str(out), "--quiet"]) == 1
    assert _load(out / "report.json")["failed"] == ["martingale"]


def test_verify_potential_flat_strong(tmp_path, capsys):
    cfg = _cfg(tmp_path, "measure.kind = flat_strong\nmeasure.n = 3\nmeasure.eta = 2\n")
    assert main(["verify-potential", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    detail = _load(tmp_path / "o" / "verify.json")["checks"]["hypothesis"]["detail"]
    assert detail["min_restricted_eig"] == pytest.approx(2.0)


def test_freedman_table(tmp_path, capsys):
    cfg = _cfg(tmp_path, "checks.freedman_paths = 10000\n")
    assert main(["freedman", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = _load(tmp_path / "o" / "freedman.json")["checks"]["freedman_brownian"]["detail"]["rows"]
    row = next(r for r in rows if r["a"] == 2.0 and r["b"] == 1.0)
    assert row["bound"] == pytest.approx(0.13534, abs=1e-5)
    assert row["fraction"] == pytest.approx(0.0228, abs=0.005)
    assert "0.13534" in capsys.readouterr().out


def test_concentration_quartile(tmp_path):
    cfg = _cfg(tmp_path, "measure.n = 4\nmeasure.k = 2\nchecks.samples = 100000\n")
    assert main(["concentration", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet"]) == 0
    rows = (tmp_path / "o" / "curves.csv").read_text().splitlines()[1:]
    r, alpha = zip(*[(float(x.split(",")[0]), float(x.split(",")[1])) for x in rows])
    import numpy as np

    assert np.interp(0.6744897501960817, r, alpha) == pytest.approx(0.25, abs=0.02)


def test_single_replica_is_insufficient(tmp_path):
    cfg = _cfg(tmp_path, GAUSS.replace("run.dt = 0.02", "run.dt = 0.1"))
    out = tmp_path / "o"
    assert main(["run-path", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    checks = _load(out / "path.json")["checks"]
    assert checks["martingale"]["status"] == "insufficient_ensemble"
    assert checks["martingale"]["hard"] is False


def test_ensemble_determinism(tmp_path):
    cfg = _cfg(tmp_path, GAUSS.replace("run.dt = 0.02", "run.dt = 0.1"))
    for name in ("a", "b"):
        main(["ensemble", "--config", cfg, "--out", str(tmp_path / name), "--replicas", "8", "--quiet"])
    for f in ("paths.csv", "spectra.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    main(["ensemble", "--config", cfg, "--out", str(tmp_path / "c"), "--replicas", "8", "--seed", "8", "--quiet"])
    assert (tmp_path / "a" / "paths.csv").read_bytes() != (tmp_path / "c" / "paths.csv").read_bytes()


def test_bad_config_exit_code(tmp_path, capsys):
    cfg = _cfg(tmp_path, "measure.n = 2\nmeasure.nope = 1\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "line 2" in capsys.readouterr().err
