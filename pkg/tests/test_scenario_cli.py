import copy
import os

import numpy as np
import pytest
import yaml

from vibench import scenario as vbscenario
from vibench.cli import main
from vibench.scenario import (ScenarioError, load_scenario, save_scenario,
                              load_schedule, save_schedule, config_hash)


class TestScenarioConfig:
    def test_round_trip(self, tmp_path, shaw):
        path = tmp_path / "s.yaml"
        save_scenario(shaw, path)
        again = load_scenario(path)
        assert again.raw == shaw.raw
        assert config_hash(again.raw) == config_hash(shaw.raw)

    def test_missing_key_rejected(self, shaw):
        raw = copy.deepcopy(shaw.raw)
        del raw["plant"]["exciter"]["coil_resistance_ohm"]
        with pytest.raises(ScenarioError):
            vbscenario.Scenario(raw)

    def test_invalid_damping_rejected(self, shaw):
        raw = copy.deepcopy(shaw.raw)
        raw["plant"]["modes"]["damping_ratio"] = [1.2, 0.01]
        with pytest.raises(ScenarioError):
            vbscenario.Scenario(raw)

    def test_harmonics_below_two_rejected(self, shaw):
        raw = copy.deepcopy(shaw.raw)
        raw["control"]["harmonics"] = [1, 2]
        with pytest.raises(ScenarioError):
            vbscenario.Scenario(raw)

    def test_order_must_cover_harmonics(self, shaw):
        raw = copy.deepcopy(shaw.raw)
        raw["estimator"]["truncation_order"] = 3
        with pytest.raises(ScenarioError):
            vbscenario.Scenario(raw)

    def test_unknown_builtin(self):
        with pytest.raises(ScenarioError):
            load_scenario("no-such-scenario")

    def test_default_cutoff_is_tenth_of_mode_one(self, shaw):
        raw = copy.deepcopy(shaw.raw)
        del raw["estimator"]["cutoff_rad_s"]
        s = vbscenario.Scenario(raw)
        assert abs(s.estimator_cutoff - 55.92 / 10) < 1e-12


class TestScheduleConfig:
    def test_round_trip(self, tmp_path, shaw):
        sched = load_schedule("schedule_isola_forward", shaw)
        path = tmp_path / "sched.yaml"
        save_schedule(sched, path)
        again = load_schedule(path, shaw)
        np.testing.assert_allclose(again.ratios, sched.ratios)
        assert again.jump.delta_ratio == sched.jump.delta_ratio
        np.testing.assert_allclose(again.jump.post_ratios,
                                   sched.jump.post_ratios)

    def test_shipped_schedules_load(self, shaw):
        for name in ("schedule_main", "schedule_isola_forward",
                     "schedule_isola_backward", "schedule_iterative"):
            sched = load_schedule(name, shaw)
            assert sched.ratios.size >= 2


def write_tiny_schedule(tmp_path):
    cfg = {
        "grid": {"list_ratio": [1.0, 1.02]},
        "direction": "forward",
        "ramp_periods": 5,
        "hold_periods": 50,
        "window_periods": 25,
    }
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


class TestCli:
    def test_simulate_writes_artifacts(self, tmp_path):
        sched = write_tiny_schedule(tmp_path)
        out = tmp_path / "run"
        code = main(["simulate", "--scenario", "shaw-beam",
                     "--schedule", str(sched), "--out", str(out)])
        assert code == 0
        assert (out / "points.csv").exists()
        assert (out / "points.npz").exists()
        assert (out / "states.npz").exists()
        summary = __import__("json").loads((out / "summary.json").read_text())
        assert summary["schema"] == "vibench-points-v1"
        assert summary["n_points"] == 2
        header = (out / "points.csv").read_text().splitlines()[0]
        assert "Ffft3_re" in header and "Q1_im" in header

    def test_simulate_missing_scenario_is_validation_error(self, tmp_path):
        sched = write_tiny_schedule(tmp_path)
        code = main(["simulate", "--scenario", "nope", "--schedule",
                     str(sched), "--out", str(tmp_path / "x")])
        assert code == 2

    def test_stability_verdicts(self, tmp_path):
        out = tmp_path / "stab"
        code = main(["stability", "--scenario", "shaw-beam", "--drive",
                     "x1,x2", "--grid", "0.5:8.0:1500", "--kp-bar", "3",
                     "--out", str(out)])
        assert code == 0
        verdicts = __import__("json").loads(
            (out / "verdicts.json").read_text())
        assert verdicts["admissible"]["x1"] is True
        assert verdicts["admissible"]["x2"] is False
        assert (out / "margins.csv").exists()

    def test_campaign_manifest_only(self, tmp_path):
        out = tmp_path / "camp"
        code = main(["campaign", "--scenario", "shaw-beam", "--steps", "",
                     "--out", str(out)])
        assert code == 0
        manifest = __import__("json").loads(
            (out / "manifest.json").read_text())
        assert manifest["artifacts"] == {}
        # determinism: same seed, same hashes
        out2 = tmp_path / "camp2"
        main(["campaign", "--scenario", "shaw-beam", "--steps", "",
              "--out", str(out2)])
        manifest2 = __import__("json").loads(
            (out2 / "manifest.json").read_text())
        assert manifest["scenario_hash"] == manifest2["scenario_hash"]

    def test_simulate_rerun_identical(self, tmp_path):
        sched = write_tiny_schedule(tmp_path)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        main(["simulate", "--scenario", "shaw-beam", "--schedule",
              str(sched), "--out", str(out_a)])
        main(["simulate", "--scenario", "shaw-beam", "--schedule",
              str(sched), "--out", str(out_b)])
        a = np.load(out_a / "points.npz")
        b = np.load(out_b / "points.npz")
        np.testing.assert_array_equal(a["exc_fft"], b["exc_fft"])
        np.testing.assert_array_equal(a["resp_fft"], b["resp_fft"])

    def test_tune_cli(self, tmp_path):
        out = tmp_path / "tune"
        code = main(["tune", "--scenario", "shaw-beam", "--out", str(out)])
        assert code == 0
        report = __import__("json").loads((out / "tuning.json").read_text())
        assert 2.0 <= report["kp_bar_selected"] <= 4.5
