import json

import numpy as np
import pytest

from ssilab import ConfigError, replay, resolve_config, run_command
from ssilab.cli import main


def write_config(tmp_path, data):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data))
    return path


class TestConfigValidation:
    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="unknown keys"):
            resolve_config("invert", {"seed": 1, "bogus": 2})

    def test_unknown_nested_key(self):
        with pytest.raises(ConfigError, match="unknown keys"):
            resolve_config("invert", {"seed": 1,
                                      "oracle": {"kind": "circle", "blah": 1}})

    def test_missing_seed(self):
        with pytest.raises(ConfigError, match="seed"):
            resolve_config("invert", {})

    def test_zero_trials(self):
        with pytest.raises(ConfigError, match="trials"):
            resolve_config("invert", {"seed": 1, "trials": 0})

    def test_nonpositive_t_ssi(self):
        with pytest.raises(ConfigError, match="t_ssi"):
            resolve_config("invert", {"seed": 1, "t_ssi": 0.0})

    def test_unknown_command(self):
        with pytest.raises(ConfigError):
            resolve_config("frobnicate", {"seed": 1})

    def test_command_mismatch(self):
        with pytest.raises(ConfigError):
            resolve_config("invert", {"seed": 1, "command": "sweep-tssi"})

    def test_command_key_leak(self):
        # keys of one command are unknown to another
        with pytest.raises(ConfigError, match="unknown keys"):
            resolve_config("invert", {"seed": 1, "sigma_ladder": [0.1]})

    def test_defaults_are_filled(self):
        cfg = resolve_config("sweep-tssi", {"seed": 1})
        assert cfg["t_ssi_ladder"] == [0.001, 0.01, 0.1, 0.2]
        assert cfg["steps_ladder"] == [40, 100, 200]
        assert cfg["command"] == "sweep-tssi"

    def test_bad_lambda(self):
        with pytest.raises(ConfigError):
            resolve_config("interpolate", {"seed": 1, "lambdas": [1.5]})

    def test_bad_delta(self):
        with pytest.raises(ConfigError):
            resolve_config("reconstruct", {"seed": 1, "delta": 1.0})


class TestExitCodes:
    def test_success(self, tmp_path):
        cfg = write_config(tmp_path, {"seed": 1, "trials": 20})
        assert main(["verify-projection", "--config", str(cfg), "--quiet",
                     "--trials", "200"]) == 0

    def test_config_error_is_2(self, tmp_path):
        cfg = write_config(tmp_path, {"seed": 1, "nope": True})
        assert main(["invert", "--config", str(cfg), "--quiet"]) == 2

    def test_zero_trials_is_2(self):
        assert main(["invert", "--seed", "1", "--trials", "0", "--quiet"]) == 2

    def test_missing_config_file_is_2(self, tmp_path):
        assert main(["invert", "--config", str(tmp_path / "gone.json"),
                     "--quiet"]) == 2

    def test_descending_grid_is_2(self, tmp_path):
        cfg = write_config(tmp_path, {
            "seed": 1, "trials": 5, "t_ssi": 5.0,
            "grid": {"kind": "uniform", "t_min": 5.0, "t_max": 1.0, "steps": 10}})
        assert main(["invert", "--config", str(cfg), "--quiet"]) == 2

    def test_verdict_failure_is_4(self, tmp_path):
        # an absurd manifold threshold forces a FAIL verdict
        cfg = write_config(tmp_path, {
            "seed": 1, "oracle": {"kind": "gaussian_on_axis"},
            "grid": {"kind": "karras", "t_min": 0.002, "t_max": 80.0,
                     "rho": 7.0, "steps": 40},
            "manifold_threshold": 1e-300})
        assert main(["interpolate", "--config", str(cfg), "--quiet"]) == 4


class TestOutputs:
    def test_report_and_csv_written(self, tmp_path):
        out = tmp_path / "run"
        cfg = write_config(tmp_path, {"seed": 2, "trials": 10})
        assert main(["verify-singularity", "--config", str(cfg),
                     "--out", str(out), "--quiet"]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["tool"] == "ssilab"
        assert report["command"] == "verify-singularity"
        assert report["config"]["seed"] == 2
        assert "csv" not in report
        lines = (out / "trace.csv").read_text().splitlines()
        assert lines[0].startswith("# ssilab ")
        assert report["config_sha256"][:12] in lines[0]
        assert lines[1] == "sigma,rms_ratio"
        assert len(lines) == 2 + 200

    def test_flag_overrides_config(self, tmp_path):
        cfg = write_config(tmp_path, {"seed": 2, "trials": 10})
        out = tmp_path / "run2"
        main(["verify-singularity", "--config", str(cfg), "--seed", "9",
              "--out", str(out), "--quiet"])
        report = json.loads((out / "report.json").read_text())
        assert report["config"]["seed"] == 9


def small_configs():
    return [
        ("verify-singularity", {"seed": 5, "trials": 10}),
        ("verify-projection", {"seed": 5, "trials": 400}),
        ("invert", {"seed": 5, "trials": 8,
                    "oracle": {"kind": "toy_image"},
                    "grid": {"kind": "karras", "t_min": 0.002, "t_max": 80.0,
                             "rho": 7.0, "steps": 40}}),
        ("sweep-tssi", {"seed": 5, "trials": 4,
                        "oracle": {"kind": "gaussian_on_axis"},
                        "t_ssi_ladder": [0.01, 0.1, 0.2],
                        "steps_ladder": [20]}),
        ("interpolate", {"seed": 5, "oracle": {"kind": "gaussian_on_axis"},
                         "grid": {"kind": "karras", "t_min": 0.002,
                                  "t_max": 80.0, "rho": 7.0, "steps": 30}}),
        ("reconstruct", {"seed": 5, "trials": 120,
                         "oracle": {"kind": "gaussian_on_axis"},
                         "grid": {"kind": "karras", "t_min": 0.002,
                                  "t_max": 80.0, "rho": 7.0, "steps": 40}}),
    ]


@pytest.mark.parametrize("command,raw", small_configs())
def test_replay_bit_identical(command, raw):
    report = run_command(resolve_config(command, raw))
    again = replay(report)
    assert json.dumps(report["aggregates"], sort_keys=True) == \
        json.dumps(again["aggregates"], sort_keys=True)
    assert json.dumps(report["trials"], sort_keys=True) == \
        json.dumps(again["trials"], sort_keys=True)
    assert report["seed_ledger"] == again["seed_ledger"]


def test_shared_input_mode():
    cfg = resolve_config("invert", {
        "seed": 5, "trials": 6, "shared_input": True,
        "oracle": {"kind": "toy_image"},
        "grid": {"kind": "karras", "t_min": 0.002, "t_max": 80.0,
                 "rho": 7.0, "steps": 40}})
    rep = run_command(cfg)
    # different seeds on one input still give near-orthogonal noises
    assert rep["aggregates"]["ssi_mean_abs_cosine"] < 3 / np.sqrt(192)


def test_baseline_requires_vp():
    cfg = resolve_config("invert", {"seed": 5, "trials": 4,
                                    "method": "baseline_ddim"})
    with pytest.raises(ConfigError, match="VP"):
        run_command(cfg)


def test_projection_regime_guard():
    cfg = resolve_config("verify-projection", {
        "seed": 5, "trials": 400, "sigma_ladder": [2.0]})
    rep = run_command(cfg)
    assert rep["verdict"] is None
    assert rep["aggregates"]["rungs"][0]["flag"] == "asymptotic regime violated"
