import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from zinbarma.cli import main
from zinbarma.io import RunReport


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def simulated(workdir):
    out = workdir / "m1.csv"
    assert main(["simulate", "--config", "model1", "--out", str(out), "--seed", "21", "--n", "500"]) == 0
    return out


@pytest.fixture(scope="module")
def fits(workdir, simulated):
    paths = {}
    for method in ("nr", "em"):
        rep = workdir / f"fit_{method}.json"
        code = main(["fit", "--data", str(simulated), "--config", "model1", "--method", method,
                     "--report", str(rep), "--seed", "21", "--no-timestamp"])
        assert code == 0
        paths[method] = rep
    return paths


def test_simulate_writes_dataset(simulated):
    rows = _rows(simulated)
    assert len(rows) == 500
    assert list(rows[0]) == ["t", "y"]
    assert rows[0]["t"] == "1"


def test_simulate_is_seed_deterministic(workdir, simulated):
    again = workdir / "again.csv"
    main(["simulate", "--config", "model1", "--out", str(again), "--seed", "21", "--n", "500"])
    assert again.read_bytes() == simulated.read_bytes()


def test_fit_recovers_generating_parameters(fits):
    rep = RunReport.from_json(fits["em"].read_text())
    truth = json.loads(fits["em"].read_text())["config"]["true_params"]
    true_vec = np.concatenate([truth[k] if isinstance(truth[k], list) else [truth[k]]
                               for k in ("beta", "theta", "delta", "gamma", "k")])
    est = np.array([r["estimate"] for r in rep.estimates])
    se = np.array([r["std_error"] for r in rep.estimates])
    assert rep.converged
    assert np.all(np.abs(est - true_vec) < 3 * se)


def test_nr_and_em_logliks_agree(fits):
    a = RunReport.from_json(fits["nr"].read_text())
    b = RunReport.from_json(fits["em"].read_text())
    assert abs(a.loglik - b.loglik) <= 1e-3


def test_fit_writes_estimates_table(fits):
    rows = _rows(fits["em"].with_suffix(".csv"))
    assert [r["parameter"] for r in rows][0] == "W:intercept"
    assert set(rows[0]) == {"parameter", "estimate", "std_error", "z", "p_value"}


def test_report_is_byte_identical_without_timestamp(workdir, simulated, fits):
    rep = workdir / "fit_em_again.json"
    main(["fit", "--data", str(simulated), "--config", "model1", "--method", "em",
          "--report", str(rep), "--seed", "21", "--no-timestamp"])
    assert rep.read_bytes() == fits["em"].read_bytes()


def test_diagnose_outputs(workdir, simulated, fits):
    out = workdir / "diag"
    assert main(["diagnose", "--report", str(fits["em"]), "--data", str(simulated), "--out", str(out),
                 "--seed", "3"]) == 0
    for name in ("residuals.csv", "acf.csv", "qq.csv", "sensitivity.csv", "summary.json"):
        assert (out / name).exists()
    summary = json.loads((out / "summary.json").read_text())
    assert 0.0 <= summary["excess_zero_probability"] <= 1.0
    assert summary["ljung_box"]["df"] == 10 - 2
    assert summary["ljung_box"]["p_value"] > 0.01
    assert len(_rows(out / "residuals.csv")) == 500
    assert len(_rows(out / "acf.csv")) == 11


def test_diagnose_midpoint_is_seed_free(workdir, simulated, fits):
    a, b = workdir / "mid_a", workdir / "mid_b"
    for out, seed in ((a, "1"), (b, "2")):
        main(["diagnose", "--report", str(fits["em"]), "--data", str(simulated), "--out", str(out),
              "--seed", seed, "--midpoint"])
    assert (a / "residuals.csv").read_bytes() == (b / "residuals.csv").read_bytes()


def test_validation_errors_exit_1(workdir, simulated, capsys):
    bad = workdir / "bad.json"
    bad.write_text(json.dumps({"w_covariates": [{"kind": "intercept"}], "orders": {"q9": 1}}))
    assert main(["fit", "--data", str(simulated), "--config", str(bad), "--report", str(workdir / "x.json")]) == 1
    assert "q9" in capsys.readouterr().err
    assert main(["fit", "--data", str(workdir / "nope.csv"), "--config", "model1",
                 "--report", str(workdir / "x.json")]) == 1
    neg = workdir / "neg.csv"
    neg.write_text("t,y\n1,1\n2,-3\n")
    assert main(["fit", "--data", str(neg), "--config", "model1", "--report", str(workdir / "x.json")]) == 1
    assert "row 2" in capsys.readouterr().err


def test_nonconvergence_exits_2(workdir, simulated):
    cfg = json.loads(json.dumps({
        "w_covariates": [{"kind": "intercept"}, {"kind": "harmonic", "period": 6}],
        "m_covariates": [{"kind": "intercept"}, {"kind": "harmonic", "period": 6}],
        "orders": {"q1": 2, "q2": 1},
        "options": {"max_iter": 1},
    }))
    path = workdir / "capped.json"
    path.write_text(json.dumps(cfg))
    rep = workdir / "capped_report.json"
    assert main(["fit", "--data", str(simulated), "--config", str(path), "--method", "nr",
                 "--report", str(rep)]) == 2
    assert RunReport.from_json(rep.read_text()).converged is False


def test_mc_study_small(workdir):
    out = workdir / "mc"
    assert main(["mc-study", "--config", "model1", "--reps", "3", "--sizes", "60", "--seed", "5",
                 "--out", str(out)]) == 0
    rows = _rows(out / "summary_em_N60.csv")
    assert [r["parameter"] for r in rows][-1] == "k"
    assert list(rows[0]) == ["parameter", "true", "est", "se", "abs_bias", "ci_low", "ci_high"]
    study = json.loads((out / "study.json").read_text())
    assert study["results"]["em_N60"]["n_requested"] == 3


def test_compare_table_and_tests(workdir, simulated):
    nb = workdir / "nb.json"
    nb.write_text(json.dumps({
        "name": "nb_ma2",
        "w_covariates": [{"kind": "intercept"}, {"kind": "harmonic", "period": 6}],
        "orders": {"q1": 2},
    }))
    zinb_small = workdir / "zinb_small.json"
    zinb_small.write_text(json.dumps({
        "name": "zinb_ma2",
        "w_covariates": [{"kind": "intercept"}, {"kind": "harmonic", "period": 6}],
        "m_covariates": [{"kind": "intercept"}, {"kind": "harmonic", "period": 6}],
        "orders": {"q1": 2},
    }))
    out = workdir / "cmp.csv"
    assert main(["compare", "--data", str(simulated), "--configs", f"model1,{nb},{zinb_small}",
                 "--out", str(out)]) == 0
    rows = _rows(out)
    assert [r["model"] for r in rows] == ["model1", "nb_ma2", "zinb_ma2"]  # input order kept
    for r in rows:
        assert float(r["bic"]) - float(r["aic"]) == pytest.approx(int(r["p"]) * (np.log(500) - 2), abs=1e-9)
    tests = _rows(workdir / "cmp_tests.csv")
    kinds = {(t["test"], t["model_a"], t["model_b"]) for t in tests}
    assert ("lrt", "zinb_ma2", "model1") in kinds
    assert ("vuong", "zinb_ma2", "nb_ma2") in kinds
    vu = next(t for t in tests if t["test"] == "vuong")
    assert float(vu["statistic"]) > 0  # the data are zero-inflated


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "zinbarma.cli", "simulate", "--config", "model3",
                        "--out", str(tmp_path / "m3.csv"), "--seed", "1", "--n", "50"],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    r = subprocess.run([sys.executable, "-m", "zinbarma.cli", "frobnicate"], capture_output=True, text=True)
    assert r.returncode == 1
    r = subprocess.run([sys.executable, "-m", "zinbarma.cli", "fit", "--method", "ols"], capture_output=True, text=True)
    assert r.returncode == 1


@pytest.mark.parametrize("script, extra", [
    ("dengue_like_workflow.py", []),
    ("model3_study.py", ["--reps", "2", "--sizes", "40"]),
])
def test_scripts_run(tmp_path, script, extra):
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "scripts" / script
    r = subprocess.run([sys.executable, str(path), "--out", str(tmp_path / "run"), *extra],
                       capture_output=True, text=True, timeout=600)
    assert r.returncode == 0, r.stderr
