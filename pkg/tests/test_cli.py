"""End-to-end tests of the command-line interface."""

import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from stablesde.cli import main

BASE_CONFIG = """
beta = 1.5
output_dir = "out"

[model]
drift = "-al1 * x"
scale = "g1"
alpha = ["al1"]
gamma = ["g1"]

[model.bounds]
al1 = [-10.0, 10.0]
g1 = [0.05, 20.0]

[data.simulate]
n = 40
t_end = 1.0
x0 = 0.0

[data.simulate.theta]
al1 = 1.0
g1 = 1.0

[prior]
type = "normal"
mean = [0.0, 0.0]
sd = [2.0, 2.0]

[mcmc]
iterations = 200
variant = "mwg"
seed = 11
"""


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "experiment.toml"
    path.write_text(BASE_CONFIG)
    return path


def _stderr_payload(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


class TestSimulate:
    def test_writes_series(self, config_path, tmp_path):
        assert main(["simulate", "-c", str(config_path)]) == 0
        series = tmp_path / "out" / "series.csv"
        lines = series.read_text().splitlines()
        assert lines[0] == "t,x"
        assert len(lines) == 42  # header + N + 1 states

    def test_byte_identical_reruns(self, config_path, tmp_path):
        main(["simulate", "-c", str(config_path), "--output-dir", str(tmp_path / "a")])
        main(["simulate", "-c", str(config_path), "--output-dir", str(tmp_path / "b")])
        assert (tmp_path / "a" / "series.csv").read_bytes() == (
            tmp_path / "b" / "series.csv"
        ).read_bytes()

    def test_requires_simulate_block(self, tmp_path, capsys):
        cfg = BASE_CONFIG.replace(
            "[data.simulate]\nn = 40\nt_end = 1.0\nx0 = 0.0\n",
            '[data]\npath = "x.csv"\ncolumn = "x"\nt_end = 1.0\n',
        ).replace("[data.simulate.theta]\nal1 = 1.0\ng1 = 1.0\n", "")
        path = tmp_path / "file.toml"
        path.write_text(cfg)
        assert main(["simulate", "-c", str(path)]) == 1
        payload = _stderr_payload(capsys)
        assert payload["error"] == "UserInputError"
        assert payload["exit_code"] == 1


class TestFit:
    def test_fit_simulated(self, config_path, tmp_path):
        assert main(["fit", "-c", str(config_path)]) == 0
        out = tmp_path / "out"
        trace_lines = (out / "trace.csv").read_text().splitlines()
        assert trace_lines[0] == "iter,al1,g1,accepted"
        assert len(trace_lines) == 201  # header + M iterations
        summary = json.loads((out / "summary.json").read_text())
        assert 0.0 < summary["acceptance_rate"] < 1.0
        assert set(summary) >= {
            "acceptance_rate", "posterior_mean", "posterior_sd", "mle",
            "beta", "N", "T", "h", "seed",
        }
        assert summary["mle"] is None
        assert summary["N"] == 40 and summary["T"] == 1.0 and summary["h"] == 0.025
        assert summary["seed"] == 11 and summary["beta"] == 1.5
        assert set(summary["posterior_mean"]) == {"al1", "g1"}
        assert summary["posterior_sd"]["g1"] > 0
        assert np.isfinite(summary["time_average"]["drift"])
        assert summary["time_average"]["scale"] > 0
        assert summary["variant"] == "mwg"

    def test_fit_deterministic(self, config_path, tmp_path):
        main(["fit", "-c", str(config_path), "--output-dir", str(tmp_path / "a")])
        main(["fit", "-c", str(config_path), "--output-dir", str(tmp_path / "b")])
        for name in ("trace.csv", "summary.json"):
            assert (tmp_path / "a" / name).read_bytes() == (
                tmp_path / "b" / name
            ).read_bytes()

    def test_fit_from_csv_matches_simulated_data(self, config_path, tmp_path):
        main(["simulate", "-c", str(config_path)])
        file_cfg = BASE_CONFIG.replace(
            "[data.simulate]\nn = 40\nt_end = 1.0\nx0 = 0.0\n\n[data.simulate.theta]\nal1 = 1.0\ng1 = 1.0\n",
            '[data]\npath = "out/series.csv"\ncolumn = "x"\nt_end = 1.0\n',
        ).replace('output_dir = "out"', 'output_dir = "out_file"')
        path = tmp_path / "file.toml"
        path.write_text(file_cfg)
        assert main(["fit", "-c", str(path), "--init", "mle"]) == 0
        summary = json.loads((tmp_path / "out_file" / "summary.json").read_text())
        assert summary["N"] == 40
        assert 0.0 < summary["acceptance_rate"] < 1.0

    def test_fit_cpm_variant(self, config_path, tmp_path):
        cfg = BASE_CONFIG.replace(
            'variant = "mwg"', 'variant = "cpm"\nrho = 0.9'
        )
        path = tmp_path / "cpm.toml"
        path.write_text(cfg)
        assert main(["fit", "-c", str(path)]) == 0
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert summary["variant"] == "cpm"

    def test_burn_in_overflow_is_user_error(self, config_path, capsys):
        assert main(["fit", "-c", str(config_path), "--burn-in", "500"]) == 1
        assert _stderr_payload(capsys)["error"] == "UserInputError"


class TestMLE:
    def test_mle_summary(self, config_path, tmp_path):
        assert main(["mle", "-c", str(config_path)]) == 0
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert summary["posterior_mean"] is None
        assert set(summary["mle"]) == {"al1", "g1"}
        assert summary["mle"]["g1"] > 0
        assert np.isfinite(summary["loglik"])
        assert summary["converged"] in (True, False)


class TestSweep:
    def test_small_sweep(self, config_path, tmp_path):
        code = main([
            "sweep", "-c", str(config_path),
            "--n-list", "10,20", "--iterations", "80", "--replicates", "2",
        ])
        assert code == 0
        lines = (tmp_path / "out" / "sweep.csv").read_text().splitlines()
        assert lines[0] == "N,mean_rate,sd_rate"
        assert len(lines) == 3
        for line in lines[1:]:
            n, mean_rate, sd_rate = line.split(",")
            assert int(n) in (10, 20)
            assert 0.0 <= float(mean_rate) <= 1.0
            assert float(sd_rate) >= 0.0

    def test_bad_n_list(self, config_path, capsys):
        assert main(["sweep", "-c", str(config_path), "--n-list", "10,abc"]) == 1
        assert _stderr_payload(capsys)["error"] == "UserInputError"


class TestBvM:
    def test_report_written(self, config_path, tmp_path):
        assert main(["bvm", "-c", str(config_path), "--burn-in", "20"]) == 0
        payload = json.loads((tmp_path / "out" / "bvm.json").read_text())
        assert payload["center_label"] == "theta0"
        assert set(payload["ks"]) == {"al1", "g1"}
        for v in payload["ks"].values():
            assert 0.0 <= v <= 1.0
        assert payload["center"] == {"al1": 1.0, "g1": 1.0}
        assert len(payload["limit_cov"]) == 2
        assert payload["bl_distance"] >= 0.0


class TestPP:
    def test_table_written(self, config_path, tmp_path, capsys):
        assert main(["pp", "-c", str(config_path), "--burn-in", "50"]) == 0
        lines = (tmp_path / "out" / "pp.csv").read_text().splitlines()
        assert lines[0] == "empirical,model"
        assert len(lines) == 41  # header + one point per increment
        pts = np.array([[float(c) for c in line.split(",")] for line in lines[1:]])
        assert np.all((pts >= 0.0) & (pts <= 1.0))
        assert "max_abs_deviation=" in capsys.readouterr().out


class TestEstimateBeta:
    def test_estimates_from_simulated(self, config_path, tmp_path, capsys):
        cfg = BASE_CONFIG.replace("n = 40", "n = 4000")
        path = tmp_path / "big.toml"
        path.write_text(cfg)
        assert main(["estimate-beta", "-c", str(path)]) == 0
        payload = json.loads((tmp_path / "out" / "beta.json").read_text())
        assert 1.0 <= payload["beta"] <= 1.99
        assert payload["beta_clamped"] in (True, False)
        assert "beta=" in capsys.readouterr().out


class TestErrorPaths:
    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["fit", "-c", str(tmp_path / "nope.toml")]) == 1
        assert _stderr_payload(capsys)["error"] == "ConfigError"

    def test_config_violations_listed(self, tmp_path, capsys):
        path = tmp_path / "bad.toml"
        path.write_text(BASE_CONFIG.replace("beta = 1.5", "beta = 3.0"))
        assert main(["fit", "-c", str(path)]) == 1
        payload = _stderr_payload(capsys)
        assert payload["error"] == "ConfigError"
        assert "beta" in payload["message"]

    def test_bad_data_cell(self, config_path, tmp_path, capsys):
        csv_path = tmp_path / "bad.csv"
        csv_path.write_text("t,x\n0,1.0\n1,oops\n2,2.0\n")
        cfg = BASE_CONFIG.replace(
            "[data.simulate]\nn = 40\nt_end = 1.0\nx0 = 0.0\n\n[data.simulate.theta]\nal1 = 1.0\ng1 = 1.0\n",
            '[data]\npath = "bad.csv"\ncolumn = "x"\nt_end = 1.0\n',
        )
        path = tmp_path / "file.toml"
        path.write_text(cfg)
        assert main(["fit", "-c", str(path)]) == 1
        payload = _stderr_payload(capsys)
        assert payload["error"] == "DataFileError"
        assert "row 2" in payload["message"]

    def test_numerical_failure_exits_two(self, tmp_path, capsys):
        cfg = """
beta = 1.0
output_dir = "out"

[model]
drift = "1000000 * x"
scale = "g1"
alpha = []
gamma = ["g1"]

[model.bounds]
g1 = [0.0001, 1.0]

[data.simulate]
n = 10
t_end = 1.0
x0 = 1.0

[data.simulate.theta]
g1 = 0.001

[mcmc]
iterations = 10
"""
        path = tmp_path / "explode.toml"
        path.write_text(cfg)
        assert main(["simulate", "-c", str(path)]) == 2
        payload = _stderr_payload(capsys)
        assert payload["error"] == "SimulationError"
        assert payload["exit_code"] == 2

    def test_unknown_subcommand(self, capsys):
        assert main(["frobnicate"]) == 1
        assert _stderr_payload(capsys)["error"] == "UserInputError"

    def test_missing_config_flag(self, capsys):
        assert main(["fit"]) == 1

    def test_help_exits_zero(self):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0


class TestConsoleEntryPoint:
    def test_installed_script_or_module(self):
        exe = shutil.which("stablesde")
        if exe:
            proc = subprocess.run([exe], capture_output=True, text=True)
        else:
            proc = subprocess.run(
                [sys.executable, "-m", "stablesde.cli"], capture_output=True, text=True
            )
        assert proc.returncode == 1
        assert json.loads(proc.stderr.strip().splitlines()[-1])["exit_code"] == 1
