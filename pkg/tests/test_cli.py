import csv
import hashlib
import json
import os

import pytest

from regime_lab import cli
from regime_lab.experiment import CONVERGENCE_COLUMNS

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


def cfg(name):
    return os.path.join(CONFIGS, name)


def run(tmp_path, *args):
    out = tmp_path / "out"
    code = cli.main(list(args) + ["--out", str(out)])
    return code, out


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_validate_writes_report_and_manifest(tmp_path):
    code, out = run(tmp_path, "validate", "--config", cfg("mm1.json"))
    assert code == 0
    rep = json.loads((out / "validate.json").read_text())
    assert rep["passed"]
    man = json.loads((out / "manifest.json").read_text())
    with open(cfg("mm1.json"), "rb") as fh:
        assert man["config_sha256"] == hashlib.sha256(fh.read()).hexdigest()
    assert man["seed"] == 1
    assert {"numpy", "scipy", "numba", "regime_lab"} <= set(man["versions"])
    assert man["status"] == "ok"


def test_fluid_and_diffusion(tmp_path):
    code, out = run(tmp_path, "fluid", "--config", cfg("two_class.json"))
    assert code == 0
    rows = read_csv(out / "fluid.csv")
    assert rows[0] == ["model", "n", "x_star", "residual"]
    assert json.loads(rows[1][2]) == [12.5, 12.5]
    code, out = run(tmp_path, "diffusion", "--config", cfg("mm2.json"))
    assert code == 0
    spec = json.loads((out / "diffusion.json").read_text())
    assert spec["Sigma"] == [[pytest.approx(5.0)]]
    assert spec["sigma_alpha2"]["0.5"] == [[pytest.approx(1.0)]]


def test_identity_check_gate(tmp_path, monkeypatch, capsys):
    code, out = run(tmp_path, "identity-check", "--config", cfg("mm2.json"), "--n", "100")
    assert code == 0
    assert "max rel_gap" in capsys.readouterr().out
    header = read_csv(out / "identity.csv")[0]
    assert header[:9] == ["model", "n", "alpha", "f", "x_hat", "k", "lhs", "rhs", "rel_gap"]
    monkeypatch.setattr(cli, "IDENTITY_GATE", -1.0)
    code, _ = run(tmp_path, "identity-check", "--config", cfg("mm2.json"), "--n", "100")
    assert code == 3


def test_simulate_json_and_seed_override(tmp_path):
    code, out = run(tmp_path, "simulate", "--config", cfg("mm1.json"), "--n", "25", "--seed", "42",
                    "--format", "json")
    assert code == 0
    rows = json.loads((out / "simulate.json").read_text())
    assert {r["f"] for r in rows} == {"x", "x2"}
    assert json.loads((out / "manifest.json").read_text())["seed"] == 42


def test_simulate_is_bit_reproducible(tmp_path):
    a = run(tmp_path / "a", "simulate", "--config", cfg("mm2.json"), "--n", "25")[1]
    b = run(tmp_path / "b", "simulate", "--config", cfg("mm2.json"), "--n", "25", "--threads", "2")[1]
    assert (a / "simulate.csv").read_text() == (b / "simulate.csv").read_text()


def test_drift_and_probe(tmp_path):
    code, out = run(tmp_path, "drift-check", "--config", cfg("two_class.json"), "--n", "100")
    assert code == 0
    rep = json.loads((out / "drift_check.json").read_text())
    assert rep["Gk"]["passed"] and rep["sandwich"]["holds"]
    code, out = run(tmp_path, "residual-probe", "--config", cfg("mm2.json"))
    assert code == 0
    rows = read_csv(out / "residual_probe.csv")
    # the linear function has identically vanishing residuals and yields no rows
    assert {r[3] for r in rows[1:]} == {"x2"}


def test_convergence_outputs(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"type": "mm_infinity", "lambda": [1.0], "mu": [1.0], "alpha": 1.0,
                                "n_grid": [25, 100], "f_list": ["x2"], "sim": {"horizon": 200}}))
    code, out = run(tmp_path, "convergence", "--config", str(conf))
    assert code == 0
    rows = read_csv(out / "convergence.csv")
    assert rows[0] == CONVERGENCE_COLUMNS
    assert len(rows) == 3
    assert "x2" in json.loads((out / "convergence_summary.json").read_text())


def test_convergence_failure_marker(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"type": "mm_infinity", "lambda": [1.0], "mu": [1.0],
                                "n_grid": [25, 400], "f_list": ["x2"],
                                "sim": {"horizon": 100, "max_events": 20000}}))
    code, out = run(tmp_path, "convergence", "--config", str(conf))
    assert code == 3
    rows = read_csv(out / "convergence.csv")
    assert rows[-1][0] == "FAILED:EventBudgetExceeded"


@pytest.mark.parametrize("argv", [[], ["nope"], ["validate"], ["validate", "--config", "x.json",
                                                               "--threads", "0"],
                                  ["simulate", "--config", "x.json", "--format", "xml"]])
def test_usage_errors(argv, capsys):
    assert cli.main(argv) == 4
    err = capsys.readouterr().err
    assert err.startswith("regime-lab: usage error") and err.count("\n") == 1


def test_validation_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"type": "mm_infinity", "lambda": [1.0, -2.0], "mu": [1.0, 1.0],
                               "Q": [[-1, 1], [1, -1]]}))
    code, _ = run(tmp_path, "validate", "--config", str(bad))
    assert code == 2
    assert "NonpositiveRate" in capsys.readouterr().err
    bad.write_text("{not json")
    assert run(tmp_path, "fluid", "--config", str(bad))[0] == 2
    bad.write_text(json.dumps({"type": "mm_infinity", "lambda": [1.0, 2.0], "mu": [1.0, 1.0],
                               "Q": [[-1, 1], [0.5, -1]]}))
    code, _ = run(tmp_path, "fluid", "--config", str(bad))
    assert code == 2
    assert "RowSumNonzero" in capsys.readouterr().err


def test_numerical_error_exit(tmp_path, capsys):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"type": "custom", "jumps": [[1], [-1]], "rates": ["n + x1", "0.5 * x1"]}))
    code, _ = run(tmp_path, "fluid", "--config", str(conf))
    assert code == 3
    assert "NoEquilibrium" in capsys.readouterr().err


def test_env_threads_override(tmp_path, monkeypatch):
    monkeypatch.setenv("REGIME_LAB_THREADS", "junk")
    code, _ = run(tmp_path, "simulate", "--config", cfg("mm1.json"), "--n", "25")
    assert code == 2
