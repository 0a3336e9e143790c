import json
import subprocess
import sys

import numpy as np
import pytest

from snippetcov.cli import EXIT_ABORT, EXIT_INPUT, EXIT_OK, EXIT_STAGE, main


def read_matrix(path):
    rows = [line.split(",") for line in path.read_text().splitlines()]
    return np.array([[float(v) for v in r[1:]] for r in rows[1:]]), np.array([float(v) for v in rows[0][1:]])


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["--seed", "5", "--out", str(out), "simulate", "--setting", "I", "--n", "60"]) == EXIT_OK
    return out


def test_simulate_outputs(simulated):
    for name in ("data.csv", "truth_cov_grid.csv", "truth_mean_grid.csv", "truth_var_grid.csv", "summary.txt"):
        assert (simulated / name).exists()
    assert (simulated / "data.csv").read_text().splitlines()[0] == "subject_id,t,y"
    cov, grid = read_matrix(simulated / "truth_cov_grid.csv")
    assert cov.shape == (51, 51) and grid.size == 51
    summary = json.loads((simulated / "summary.txt").read_text())
    assert summary["sim"]["n"] == 60 and summary["sim"]["seed"] == 5


def test_global_flags_after_subcommand(tmp_path, simulated):
    assert main(["simulate", "--seed", "5", "--out", str(tmp_path), "--setting", "I", "--n", "60"]) == EXIT_OK
    assert (tmp_path / "data.csv").read_bytes() == (simulated / "data.csv").read_bytes()


def test_estimate_and_predict_grid(tmp_path, simulated):
    est = tmp_path / "est"
    data = str(simulated / "data.csv")
    assert main(["estimate", "--data", data, "--domain", "0", "1", "--out", str(est)]) == EXIT_OK
    cov, grid = read_matrix(est / "cov_grid.csv")
    assert cov.shape == (51, 51) and np.array_equal(cov, cov.T)
    summary = json.loads((est / "summary.txt").read_text())
    assert summary["correlation"]["family"] == "matern"
    assert summary["n_subjects"] == 60 and summary["dropped_subjects"] == 0
    assert "h0" in summary["noise"] and "bandwidth" in summary["mean"]

    pred = tmp_path / "pred"
    args = ["predict-grid", "--data", data, "--domain", "0", "1", "--summary", str(est / "summary.txt")]
    assert main(args + ["--grid-size", "11", "--out", str(pred)]) == EXIT_OK
    cov2, grid2 = read_matrix(pred / "cov_grid.csv")
    assert grid2.size == 11
    s2 = json.loads((pred / "summary.txt").read_text())
    assert s2["mean"]["bandwidth"] == summary["mean"]["bandwidth"]
    assert s2["noise"]["h0"] == summary["noise"]["h0"]
    np.testing.assert_allclose(s2["correlation"]["theta"], summary["correlation"]["theta"], rtol=1e-6)
    np.testing.assert_allclose(cov2, cov[::5, ::5], rtol=1e-5, atol=1e-8)


def test_estimate_fourier_aic(tmp_path, simulated):
    args = ["estimate", "--data", str(simulated / "data.csv"), "--correlation", "fourier", "--dn-method", "aic"]
    assert main(args + ["--dn-candidates", "1", "2", "--out", str(tmp_path)]) == EXIT_OK
    s = json.loads((tmp_path / "summary.txt").read_text())
    assert s["dn"] in (1, 2) and s["correlation"]["family"] == "fourier"


def test_benchmark_determinism(tmp_path):
    args = ["benchmark", "--setting", "III", "--n", "40", "--sigma0-sq", "0.25", "--replicates", "3", "--methods", "noise"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b"), "--threads", "2"]) == EXIT_OK
    a = (tmp_path / "a" / "bench_results.csv").read_bytes()
    assert a == (tmp_path / "b" / "bench_results.csv").read_bytes()
    assert len(a.decode().splitlines()) == 4


def test_config_file(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"sim": {"setting": "II", "n": 25, "snr": 4.0}, "benchmark": {"replicates": 2, "methods": ["noise"]}}))
    assert main(["--config", str(cfg), "--out", str(tmp_path), "benchmark"]) == EXIT_OK
    s = json.loads((tmp_path / "summary.txt").read_text())
    assert s["scenario"]["sim"]["setting"] == "II" and s["scenario"]["replicates"] == 2
    cfg.write_text(json.dumps({"sim": {"colour": "red"}}))
    assert main(["--config", str(cfg), "--out", str(tmp_path), "simulate"]) == EXIT_INPUT


def test_calibrate(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"settings": [{"setting": "I", "n": 50, "sigma0_sq": 0.25}], "G": 3}))
    assert main(["calibrate-h0", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_OK
    s = json.loads((tmp_path / "summary.txt").read_text())
    assert s["G"] == 3 and len(s["rows"]) == 1
    assert float(capsys.readouterr().out) == pytest.approx(s["constant"])


def test_exit_codes(tmp_path):
    assert main(["estimate", "--data", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == EXIT_INPUT
    bad = tmp_path / "bad.csv"
    bad.write_text("subject_id,t,y\na,0.1,x\n")
    assert main(["estimate", "--data", str(bad), "--out", str(tmp_path)]) == EXIT_INPUT
    singles = tmp_path / "single.csv"
    singles.write_text("subject_id,t,y\n" + "".join(f"s{i},{i / 20},{i % 3}\n" for i in range(1, 15)))
    assert main(["estimate", "--data", str(singles), "--domain", "0", "1", "--out", str(tmp_path)]) == EXIT_STAGE
    assert main(["estimate", "--data", str(singles), "--domain", "1", "0", "--out", str(tmp_path)]) == EXIT_INPUT


def test_abort_exit_code(tmp_path, monkeypatch):
    import snippetcov.bench as bench

    monkeypatch.setattr(bench, "fit_marginals", lambda ds, cfg: (_ for _ in ()).throw(RuntimeError("boom")))
    args = ["benchmark", "--n", "20", "--replicates", "2", "--methods", "noise", "--out", str(tmp_path)]
    assert main(args) == EXIT_ABORT
    assert "failed" in (tmp_path / "bench_results.csv").read_text()


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "snippetcov.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("simulate", "estimate", "benchmark", "calibrate-h0", "predict-grid"):
        assert cmd in out.stdout
