import json
import math

import numpy as np
import pytest

from dpqml.cli import main


@pytest.fixture()
def panel_csv(tmp_path):
    rng = np.random.default_rng(0)
    n, horizon = 40, 20
    x = np.zeros((n, horizon))
    x[:, 0] = rng.standard_normal(n)
    for m in range(1, horizon):
        x[:, m] = 0.5 * x[:, m - 1] + rng.standard_normal(n)
    c = rng.standard_normal(n)
    y = np.zeros((n, horizon))
    for m in range(1, horizon):
        y[:, m] = 0.5 * y[:, m - 1] + 0.7 * x[:, m] + c + rng.standard_normal(n)
    rows = ["id,period,y,x"]
    for i in range(n):
        for t in range(12, horizon):
            rows.append(f"{i},{t},{y[i, t]:.10f},{x[i, t]:.10f}")
    path = tmp_path / "panel.csv"
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return path


def test_estimate_writes_fit_document(panel_csv, tmp_path, capsys):
    out = tmp_path / "fit.json"
    code = main([
        "estimate", "--input", str(panel_csv), "--estimator", "lqml_ecme",
        "--lags", "1", "--id-col", "id", "--period-col", "period",
        "--y-col", "y", "--x-cols", "x", "--output", str(out),
    ])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["estimator"] == "lqml_ecme"
    assert "sigma_a_zeroed" in doc
    assert doc["converged"] is True
    printed = capsys.readouterr().out
    assert "delta_1" in printed and "std.err" in printed


def test_estimate_missing_column_exits_one(panel_csv, tmp_path, capsys):
    code = main([
        "estimate", "--input", str(panel_csv), "--estimator", "lqml_ecme",
        "--y-col", "y", "--x-cols", "wages", "--id-col", "id", "--period-col", "period",
        "--output", str(tmp_path / "f.json"),
    ])
    assert code == 1
    assert "wages" in capsys.readouterr().err


def test_estimate_structured_diff_rejects_higher_lags(panel_csv, tmp_path, capsys):
    code = main([
        "estimate", "--input", str(panel_csv), "--estimator", "dqml_x",
        "--lags", "2", "--id-col", "id", "--period-col", "period",
        "--y-col", "y", "--x-cols", "x", "--output", str(tmp_path / "f.json"),
    ])
    assert code == 1
    assert "UnsupportedLagOrder" in capsys.readouterr().err


def test_estimate_gmm_document(panel_csv, tmp_path):
    out = tmp_path / "g.json"
    code = main([
        "estimate", "--input", str(panel_csv), "--estimator", "dgmm",
        "--id-col", "id", "--period-col", "period", "--y-col", "y",
        "--x-cols", "x", "--output", str(out),
    ])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["instrument_count"] > 0


def test_simulate_rejects_bad_reps(tmp_path):
    assert main(["simulate", "--table", "1", "--reps", "0", "--out-dir", str(tmp_path)]) == 1


def test_simulate_deterministic_outputs(tmp_path, capsys, monkeypatch):
    # shrink the grid for speed: patch the module-level constants
    from dpqml import montecarlo as mc

    monkeypatch.setattr(mc, "DELTA_GRID", (0.0, 0.4))
    monkeypatch.setattr(mc, "SIGMA_ZETA_GRID", (1.0,))

    def run(out):
        code = main([
            "simulate", "--table", "1", "--reps", "3", "--seed", "7",
            "--estimators", "dgmm,dqml_x", "--workers", "1", "--out-dir", str(out),
        ])
        assert code == 0
        return (out / "table1_report.csv").read_bytes(), (out / "table1_report.md").read_bytes()

    a_csv, a_md = run(tmp_path / "a")
    stdout_a = capsys.readouterr().out
    b_csv, b_md = run(tmp_path / "b")
    stdout_b = capsys.readouterr().out
    assert a_csv == b_csv
    assert a_md == b_md
    assert stdout_a == stdout_b
    assert stdout_a.encode() == a_md  # single formatting path


def test_simulate_markdown_layout(tmp_path, capsys):
    from dpqml import montecarlo as mc

    code = main([
        "simulate", "--table", "2", "--reps", "2", "--seed", "5",
        "--estimators", "dgmm", "--workers", "1", "--out-dir", str(tmp_path),
    ])
    assert code == 0
    md = (tmp_path / "table2_report.md").read_text()
    assert md.count("### sigma_zeta") == 2
    header = next(l for l in md.splitlines() if l.startswith("| estimator"))
    assert header.count("|") == 9  # estimator, stat, six delta columns
    del mc


def test_verify_all_passes(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 4


def test_verify_perturbation_hook_fails(capsys):
    assert main(["verify", "reconstruction", "--perturb", "1e-6"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_verify_determinant_dims(capsys):
    assert main(["verify", "determinant", "--dims", "2..10"]) == 0
    out = capsys.readouterr().out
    assert "determinant" in out
    err = float(out.split("max relative error")[1].split()[0])
    assert err <= 1e-10


def test_env_overrides(panel_csv, tmp_path, monkeypatch):
    monkeypatch.setenv("DPQML_MAX_ITER", "1")
    monkeypatch.setenv("DPQML_TOL", "1e-3")
    out = tmp_path / "fit.json"
    code = main([
        "estimate", "--input", str(panel_csv), "--estimator", "lqml_unrestricted",
        "--id-col", "id", "--period-col", "period", "--y-col", "y",
        "--x-cols", "x", "--output", str(out),
    ])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["iterations"] <= 2  # two starting weightings, one iteration each
    assert not math.isnan(doc["loglik"])
