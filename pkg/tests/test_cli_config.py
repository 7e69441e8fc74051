import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from aoisched import ConfigError, ExperimentConfig, reference_ar_model
from aoisched.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

RENEWAL = {
    "h_table": [1, 2, 3, 4, 5, 6, 7, 8],
    "channel": {"transition": [[1.0]], "transmission": [[[1, 1.0]]], "feedback": [[[1, 1.0]]]},
    "policy": {"buffer_size": 1},
    "simulation": {"horizon": 20000, "warm_up": 100, "seeds": [0, 1], "alphas": []},
}


def write(tmp_path, raw, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(raw))
    return str(p)


def header(path):
    return Path(path).read_text().splitlines()[0]


class TestConfig:
    def test_reference_config_defaults(self):
        cfg = ExperimentConfig.load(CONFIGS / "reference.yaml")
        assert cfg.source_model() == reference_ar_model()
        assert cfg.policy.buffer_size == 64 and cfg.policy.delta_max == 500
        assert cfg.simulation.seeds == tuple(range(10))
        assert cfg.channel_model().transition.tolist() == [[0.9, 0.1], [0.1, 0.9]]

    @pytest.mark.parametrize("name", ["reference.yaml", "renewal.yaml"])
    def test_round_trip(self, name):
        cfg = ExperimentConfig.load(CONFIGS / name)
        again = ExperimentConfig.from_yaml(cfg.to_yaml())
        assert again == cfg
        assert again.to_dict() == cfg.to_dict()
        assert again.config_hash() == cfg.config_hash()

    def test_dense_coefficients_round_trip(self):
        raw = {"ar_model": {"coefficients": [0.5, 0.0, 0.1], "noise_var": 1.0}, "channel": {"alpha": 0.5}}
        cfg = ExperimentConfig.from_dict(raw)
        assert ExperimentConfig.from_yaml(cfg.to_yaml()) == cfg

    def test_sparse_trailing_zero_lags_kept(self):
        raw = {"ar_model": {"coefficients": {1: 0.5}, "order": 4, "noise_var": 1.0}, "channel": {"alpha": 0.5}}
        cfg = ExperimentConfig.from_dict(raw)
        assert cfg.ar_model.coefficients == (0.5, 0.0, 0.0, 0.0)
        assert ExperimentConfig.from_yaml(cfg.to_yaml()) == cfg

    def test_hash_ignores_output(self):
        a = ExperimentConfig.from_dict({**RENEWAL, "output": {"dir": "x"}})
        b = ExperimentConfig.from_dict({**RENEWAL, "output": {"dir": "y"}})
        c = ExperimentConfig.from_dict({**RENEWAL, "h_table": [1, 2, 3]})
        assert a.config_hash() == b.config_hash() != c.config_hash()

    @pytest.mark.parametrize(
        "patch, path",
        [
            ({"h_table": None}, "ar_model|h_table"),
            ({"ar_model": {"coefficients": [0.1], "noise_var": 1.0}}, "ar_model|h_table"),
            ({"policy": {"buffer_size": 0}}, "policy.buffer_size"),
            ({"policy": {"bogus": 1}}, "policy.bogus"),
            ({"channel": {"alpha": 0.5, "transition": [[1.0]]}}, "channel.alpha"),
            ({"channel": {"transition": [[1.0]], "transmission": [[[0, 1.0]]], "feedback": [[[1, 1.0]]]}}, "channel.transmission[0]"),
            ({"channel": {"transition": [[0.0, 1.0], [1.0, 0.0]]}}, "channel"),
            ({"simulation": {"alphas": [2.5]}}, "simulation.alphas[0]"),
            ({"simulation": {"horizon": 10, "warm_up": 10}}, "simulation.warm_up"),
            ({"simulation": {"policies": ["greedy"]}}, "simulation.policies[0]"),
            ({"h_table": [1, "x"]}, "h_table[1]"),
        ],
    )
    def test_validation_paths(self, patch, path):
        raw = {**RENEWAL, **patch}
        with pytest.raises(ConfigError) as err:
            ExperimentConfig.from_dict(raw)
        assert err.value.path == path

    def test_nonstationary_source(self):
        raw = {"ar_model": {"coefficients": [1.2], "noise_var": 1.0}, "channel": {"alpha": 0.5}}
        with pytest.raises(ConfigError) as err:
            ExperimentConfig.from_dict(raw)
        assert err.value.path == "ar_model"

    def test_exponent_without_dot(self):
        cfg = ExperimentConfig.from_yaml("h_table: [1, 2]\nchannel: {alpha: 0.5}\noracle: {tol: 1e-10}\n")
        assert cfg.oracle.tol == 1e-10


class TestCLI:
    def test_error_curve_white_noise(self, tmp_path, capsys):
        raw = {"ar_model": {"coefficients": [], "noise_var": 0.01, "obs_noise_var": 0.001},
               "channel": {"alpha": 0.5}, "policy": {"delta_max": 20}}
        assert main(["error-curve", "--config", write(tmp_path, raw), "--out", str(tmp_path)]) == 0
        out = tmp_path / "error_curve.csv"
        assert header(out).startswith("# config_hash=")
        data = np.loadtxt(out, delimiter=",", skiprows=2)
        assert data.shape == (20, 2)
        np.testing.assert_allclose(data[:, 1], 0.011, atol=1e-12)

    def test_error_curve_reference_99_rows(self, tmp_path):
        raw = yaml.safe_load((CONFIGS / "reference.yaml").read_text())
        raw["policy"]["delta_max"] = 99
        assert main(["error-curve", "--config", write(tmp_path, raw), "--out", str(tmp_path)]) == 0
        h = np.loadtxt(tmp_path / "error_curve.csv", delimiter=",", skiprows=2)[:, 1]
        assert h.size == 99 and np.any(np.diff(h) < 0)

    def test_error_curve_empirical_columns(self, tmp_path):
        raw = {"ar_model": {"coefficients": [0.5], "noise_var": 0.75, "obs_noise_var": 0.001},
               "channel": {"alpha": 0.5}, "policy": {"delta_max": 3}}
        args = ["error-curve", "--config", write(tmp_path, raw), "--out", str(tmp_path), "--empirical", "20000", "--seed", "4"]
        assert main(args) == 0
        assert "seed=4" in header(tmp_path / "error_curve.csv")
        assert (tmp_path / "error_curve.csv").read_text().splitlines()[1] == "delta,h,h_empirical,stderr"

    def test_missing_source_exit_1(self, tmp_path, capsys):
        assert main(["solve", "--config", write(tmp_path, {"channel": {"alpha": 0.5}})]) == 1
        assert "ar_model|h_table" in capsys.readouterr().err

    def test_solve_simulate_oracle_renewal(self, tmp_path, capsys):
        cfg = write(tmp_path, RENEWAL)
        out = str(tmp_path / "o")
        assert main(["solve", "--config", cfg, "--out", out]) == 0
        art = json.loads((tmp_path / "o" / "policy.json").read_text())
        assert art["beta"] == 1.5 and art["mapping"] == [0]
        assert main(["simulate", "--config", cfg, "--out", out]) == 0
        assert "simulated cost: 1.5 " in capsys.readouterr().out
        rows = (tmp_path / "o" / "simulate.csv").read_text().splitlines()
        assert rows[0].endswith("seed=0,1") and len(rows) == 4
        assert main(["oracle-check", "--config", cfg, "--out", out]) == 0
        assert capsys.readouterr().out.rstrip().endswith("PASS")
        assert (tmp_path / "o" / "oracle_values.csv").exists()

    def test_solve_constant_and_monotone(self, tmp_path, capsys):
        const = {**RENEWAL, "h_table": [2.0] * 5, "channel": {"alpha": 0.4}, "policy": {"buffer_size": 3}}
        assert main(["solve", "--config", write(tmp_path, const), "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "psi*: [0, 0]" in out and "beta = h_opt = 2\n" in out
        mono = {**const, "h_table": [0.1, 0.2, 0.4, 0.8]}
        assert main(["solve", "--config", write(tmp_path, mono), "--out", str(tmp_path)]) == 0
        assert "psi*: [0, 0]" in capsys.readouterr().out

    def test_zero_wait_simulation(self, tmp_path, capsys):
        assert main(["simulate", "--config", write(tmp_path, RENEWAL), "--out", str(tmp_path), "--policy", "zero_wait", "--seed", "3"]) == 0
        assert "simulated cost: 1.5 " in capsys.readouterr().out

    def test_artifact_hash_mismatch(self, tmp_path, capsys):
        out = str(tmp_path)
        assert main(["solve", "--config", write(tmp_path, RENEWAL), "--out", out]) == 0
        other = write(tmp_path, {**RENEWAL, "h_table": [1, 2, 3, 5]}, "other.yaml")
        assert main(["simulate", "--config", other, "--out", out]) == 1
        assert "hash" in capsys.readouterr().err

    def test_oracle_truncation_config_error(self, tmp_path, capsys):
        raw = {**RENEWAL, "oracle": {"wait_cap": 5, "aoi_cap": 2}}
        assert main(["oracle-check", "--config", write(tmp_path, raw)]) == 1
        assert "oracle" in capsys.readouterr().err

    def test_oracle_mismatch_exit_3(self, tmp_path, capsys):
        # a truncated wait cap that binds: the threshold action falls outside the oracle's action set
        raw = {**RENEWAL, "h_table": [9.0, 9.0, 9.0, 0.0, 0.0, 9.0], "oracle": {"wait_cap": 0}}
        assert main(["oracle-check", "--config", write(tmp_path, raw)]) == 3
        assert "FAIL" in capsys.readouterr().out

    def test_sweep_small(self, tmp_path):
        raw = yaml.safe_load((CONFIGS / "reference.yaml").read_text())
        raw["simulation"] = {"horizon": 20000, "seeds": 2, "alphas": [1.0], "jobs": 1}
        raw["policy"]["buffer_size"] = 8
        assert main(["sweep", "--config", write(tmp_path, raw), "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "sweep.csv").read_text().splitlines()
        assert lines[0].startswith("# config_hash=") and lines[1].startswith("alpha,policy")
        assert len(lines) == 5

    def test_deterministic_outputs(self, tmp_path):
        cfg = write(tmp_path, RENEWAL)
        for d in ("a", "b"):
            assert main(["simulate", "--config", cfg, "--out", str(tmp_path / d), "--policy", "zero_wait"]) == 0
        assert (tmp_path / "a" / "simulate.csv").read_text() == (tmp_path / "b" / "simulate.csv").read_text()
