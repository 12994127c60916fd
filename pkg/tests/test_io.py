"""Tests for config parsing, CSV ingestion, and persistence."""

import json

import numpy as np
import pytest

from stablesde.errors import ConfigError, DataFileError
from stablesde.io import (
    ExperimentConfig,
    config_to_toml,
    load_config,
    load_csv,
    parse_config,
    read_trace,
    summary_dict,
    write_json,
    write_series,
    write_trace,
)
from stablesde.mcmc import MCMCConfig, PriorSpec, run_mwg
from stablesde.simulate import ObservationSet

GOOD_SIMULATE = """
beta = 1.5
output_dir = "artifacts"

[model]
drift = "-al1 * x"
scale = "g1"
alpha = ["al1"]
gamma = ["g1"]

[model.bounds]
al1 = [-10.0, 10.0]
g1 = [0.05, 20.0]

[data.simulate]
n = 100
t_end = 1.0
x0 = 0.0

[data.simulate.theta]
al1 = 1.0
g1 = 1.0

[prior]
type = "normal"
mean = [0.0, 0.0]
sd = [1.0, 1.0]

[mcmc]
iterations = 500
variant = "mwg"
seed = 7
"""

GOOD_FILE = """
beta = "estimate"

[model]
drift = "al1"
scale = "g1"
alpha = ["al1"]
gamma = ["g1"]

[model.bounds]
al1 = [-5.0, 5.0]
g1 = [0.01, 10.0]

[data]
path = "prices.csv"
column = "price"
t_end = 1170.0

[mcmc]
iterations = 1000
variant = "cpm"
rho = 0.99
"""


class TestParseConfig:
    def test_simulate_config(self):
        cfg = parse_config(GOOD_SIMULATE)
        assert cfg.beta == 1.5
        assert cfg.output_dir == "artifacts"
        assert cfg.model.names == ("al1", "g1")
        assert cfg.data.path is None
        assert cfg.data.simulate.n_increments == 100
        assert cfg.data.simulate.theta == {"al1": 1.0, "g1": 1.0}
        np.testing.assert_array_equal(cfg.theta0().full, [1.0, 1.0])
        prior = cfg.build_prior()
        assert prior == PriorSpec.standard_normal(2)
        mc = cfg.build_mcmc()
        assert isinstance(mc, MCMCConfig)
        assert mc.iterations == 500 and mc.seed == 7 and mc.variant == "mwg"
        assert mc.proposal_cov is None

    def test_file_config(self):
        cfg = parse_config(GOOD_FILE)
        assert cfg.beta == "estimate"
        assert cfg.data.path == "prices.csv"
        assert cfg.data.column == "price"
        assert cfg.data.t_end == 1170.0
        assert cfg.theta0() is None
        assert cfg.mcmc.variant == "cpm" and cfg.mcmc.rho == 0.99
        assert cfg.prior.kind == "normal"  # default block

    def test_proposal_scale_builds_scaled_default(self):
        text = GOOD_SIMULATE.replace("seed = 7", "seed = 7\nproposal_scale = 0.25")
        mc = parse_config(text).build_mcmc()
        np.testing.assert_allclose(mc.proposal_cov, 0.25 * (2.38**2 / 2) * np.eye(2))

    def test_explicit_proposal_cov(self):
        text = GOOD_SIMULATE.replace(
            "seed = 7", "seed = 7\nproposal_cov = [[2.0, 0.1], [0.1, 1.0]]"
        )
        mc = parse_config(text).build_mcmc()
        np.testing.assert_array_equal(mc.proposal_cov, [[2.0, 0.1], [0.1, 1.0]])

    def test_all_violations_reported_at_once(self):
        text = """
beta = 2.5

[model]
drift = "-al1 * x"
scale = "g1"
alpha = ["al1"]
gamma = ["g1"]

[model.bounds]
al1 = [-10.0, 10.0]
g1 = [0.05, 20.0]

[data]
path = "a.csv"

[data.simulate]
n = 0
t_end = 1.0
theta = { al1 = 1.0, g1 = 1.0 }

[mcmc]
iterations = 1
"""
        with pytest.raises(ConfigError) as err:
            parse_config(text)
        blob = "; ".join(err.value.violations)
        assert "beta" in blob
        assert "exactly one of data.path / data.simulate" in blob
        assert "data.simulate.n" in blob
        assert "data.t_end" in blob
        assert "mcmc" in blob
        assert len(err.value.violations) >= 5

    def test_undeclared_name_in_drift(self):
        text = GOOD_SIMULATE.replace('"-al1 * x"', '"-al1 * x + zeta"')
        with pytest.raises(ConfigError) as err:
            parse_config(text)
        assert any("model" in v and "zeta" in v for v in err.value.violations)

    def test_theta_must_cover_all_parameters(self):
        text = GOOD_SIMULATE.replace("al1 = 1.0\ng1 = 1.0", "al1 = 1.0")
        with pytest.raises(ConfigError) as err:
            parse_config(text)
        assert any("data.simulate.theta" in v for v in err.value.violations)

    def test_estimate_beta_needs_file_input(self):
        text = GOOD_SIMULATE.replace("beta = 1.5", 'beta = "estimate"')
        with pytest.raises(ConfigError) as err:
            parse_config(text)
        assert any("estimate" in v for v in err.value.violations)

    def test_cpm_requires_rho(self):
        text = GOOD_FILE.replace("rho = 0.99\n", "")
        with pytest.raises(ConfigError) as err:
            parse_config(text)
        assert any("rho" in v for v in err.value.violations)

    def test_unknown_keys_rejected(self):
        text = GOOD_SIMULATE + "\n[extra]\nfoo = 1\n"
        with pytest.raises(ConfigError) as err:
            parse_config(text)
        assert any("extra" in v and "unknown field" in v for v in err.value.violations)

    def test_invalid_toml(self):
        with pytest.raises(ConfigError) as err:
            parse_config("beta = [unterminated")
        assert any(v.startswith("toml:") for v in err.value.violations)

    def test_uniform_prior_rejects_moments(self):
        text = GOOD_SIMULATE.replace('type = "normal"', 'type = "uniform"')
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_round_trip_idempotent(self):
        for text in (GOOD_SIMULATE, GOOD_FILE):
            cfg = parse_config(text)
            out = config_to_toml(cfg)
            cfg2 = parse_config(out)
            assert cfg2 == cfg
            assert config_to_toml(cfg2) == out

    def test_load_config_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.toml")
        path = tmp_path / "ok.toml"
        path.write_text(GOOD_SIMULATE)
        assert load_config(path) == parse_config(GOOD_SIMULATE)


class TestLoadCSV:
    def _write(self, tmp_path, text, name="data.csv"):
        p = tmp_path / name
        p.write_text(text)
        return p

    def test_drop_missing_rows(self, tmp_path):
        p = self._write(tmp_path, "x\n1.0\nNA\n2.0\n")
        with pytest.warns(UserWarning, match=r"\[2\]"):
            obs = load_csv(p, "x", t_end=2.0)
        np.testing.assert_array_equal(obs.values, [1.0, 2.0])
        assert obs.n_increments == 1
        assert obs.t_end == 2.0

    def test_header_column_selection(self, tmp_path):
        p = self._write(tmp_path, "t,price\n0,10.0\n1,10.5\n2,9.75\n")
        obs = load_csv(p, "price", t_end=3.0)
        np.testing.assert_array_equal(obs.values, [10.0, 10.5, 9.75])

    def test_headerless_last_column(self, tmp_path):
        p = self._write(tmp_path, "0,1.5\n1,2.5\n")
        obs = load_csv(p, None, t_end=1.0)
        np.testing.assert_array_equal(obs.values, [1.5, 2.5])

    def test_empty_cell_is_missing(self, tmp_path):
        p = self._write(tmp_path, "x\n1.0\n\n \n2.0\n3.0\n")
        # Fully blank lines are skipped outright; no missing cells remain.
        obs = load_csv(p, "x", t_end=1.0)
        np.testing.assert_array_equal(obs.values, [1.0, 2.0, 3.0])
        p2 = self._write(tmp_path, "t,x\n0,1.0\n1,\n2,2.0\n", name="d2.csv")
        with pytest.warns(UserWarning):
            obs2 = load_csv(p2, "x", t_end=1.0)
        np.testing.assert_array_equal(obs2.values, [1.0, 2.0])

    def test_all_missing_raises(self, tmp_path):
        p = self._write(tmp_path, "x\nNA\nNA\nNA\n")
        with pytest.raises(DataFileError, match="fewer than 2"):
            load_csv(p, "x", t_end=1.0)

    def test_unparseable_cell_reports_row_and_column(self, tmp_path):
        p = self._write(tmp_path, "t,x\n0,1.0\n1,oops\n")
        with pytest.raises(DataFileError, match="row 2, column x"):
            load_csv(p, "x", t_end=1.0)

    def test_missing_column(self, tmp_path):
        p = self._write(tmp_path, "t,x\n0,1.0\n")
        with pytest.raises(DataFileError, match="'y' not found"):
            load_csv(p, "y", t_end=1.0)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataFileError):
            load_csv(tmp_path / "nope.csv", "x", t_end=1.0)

    def test_bad_policy(self, tmp_path):
        p = self._write(tmp_path, "x\n1.0\n2.0\n")
        with pytest.raises(ValueError):
            load_csv(p, "x", t_end=1.0, missing_policy="interpolate")


class TestSeriesAndTrace:
    def test_series_round_trip(self, tmp_path):
        obs = ObservationSet([0.0, 0.1234567890123456789, -2.5], t_end=0.3)
        path = tmp_path / "series.csv"
        write_series(obs, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "t,x"
        assert len(lines) == 4
        back = load_csv(path, "x", t_end=0.3)
        np.testing.assert_array_equal(back.values, obs.values)

    def test_trace_round_trip(self, tmp_path):
        from stablesde.expressions import ModelSpec
        from stablesde.simulate import PathConfig, simulate_path

        model = ModelSpec("al", "g", ("al",), ("g",), {"al": (-5, 5), "g": (0.05, 10)})
        theta = model.theta(alpha=[0.3], gamma=[1.0])
        obs = simulate_path(model, theta, 1.5, 40, 1.0, PathConfig(seed=3))
        trace = run_mwg(model, obs, 1.5, PriorSpec.uniform(2), MCMCConfig(iterations=25, seed=4), theta)
        path = tmp_path / "trace.csv"
        write_trace(trace, model.names, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "iter,al,g,accepted"
        assert len(lines) == 26
        names, thetas, flags = read_trace(path)
        assert names == ["al", "g"]
        np.testing.assert_array_equal(thetas, trace.thetas)
        np.testing.assert_array_equal(flags, trace.accept_flags)

    def test_trace_two_iterations_three_params(self, tmp_path):
        class Stub:
            thetas = np.array([[1.0, 2.0, 3.0], [1.5, 2.0, 3.0]])
            accept_flags = np.array([True])

        path = tmp_path / "t.csv"
        write_trace(Stub(), ["a", "b", "c"], path)
        assert len(path.read_text().splitlines()) == 3

    def test_trace_name_mismatch(self, tmp_path):
        class Stub:
            thetas = np.zeros((2, 2))
            accept_flags = np.array([False])

        with pytest.raises(ValueError):
            write_trace(Stub(), ["a"], tmp_path / "t.csv")

    def test_unwritable_path_raises_oserror(self, tmp_path):
        obs = ObservationSet([0.0, 1.0], t_end=1.0)
        with pytest.raises(OSError):
            write_series(obs, tmp_path / "no" / "such" / "dir.csv")


class TestSummary:
    def test_schema_keys_always_present(self, tmp_path):
        s = summary_dict(
            ["al", "g"], beta=1.5, n_increments=100, t_end=2.0, seed=3,
            acceptance_rate=0.4, posterior_mean=[0.1, 1.2],
        )
        assert set(s) == {
            "acceptance_rate", "posterior_mean", "posterior_sd", "mle",
            "beta", "N", "T", "h", "seed",
        }
        assert s["posterior_mean"] == {"al": 0.1, "g": 1.2}
        assert s["posterior_sd"] is None and s["mle"] is None
        assert s["h"] == 0.02
        path = tmp_path / "s.json"
        write_json(s, path)
        assert json.loads(path.read_text()) == s
        # Sorted keys and trailing newline keep outputs byte-stable.
        text = path.read_text()
        assert text.endswith("}\n")
        top_level = list(json.loads(text))
        assert top_level == sorted(top_level)

    def test_extras_and_collisions(self):
        s = summary_dict(
            ["g"], beta=1.0, n_increments=10, t_end=1.0, seed=0,
            extras={"time_average": {"drift": 0.0, "scale": 1.0}},
        )
        assert s["time_average"] == {"drift": 0.0, "scale": 1.0}
        with pytest.raises(ValueError):
            summary_dict(["g"], beta=1.0, n_increments=10, t_end=1.0, seed=0,
                         extras={"beta": 2.0})

    def test_nan_rejected(self, tmp_path):
        s = summary_dict(["g"], beta=1.0, n_increments=10, t_end=1.0, seed=0,
                         acceptance_rate=float("nan"))
        with pytest.raises(ValueError):
            write_json(s, tmp_path / "bad.json")
