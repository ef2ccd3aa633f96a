import numpy as np
import pytest

from vibench import tuning
from conftest import scenario_variant

W1 = 55.92


def synth_history(kind, n=8000, dt=1e-3, order=4):
    t = dt * np.arange(n)
    hist = np.zeros((n, order + 1), dtype=complex)
    hist[:, 1] = 2.0
    if kind == "settling":
        hist[:, 3] = 0.5 * np.exp(-1.5 * t)
    elif kind == "growing":
        hist[:, 3] = 0.002 * np.exp(0.92 * t) * np.cos(8.0 * t)
    elif kind == "ripple":
        hist[:, 3] = 0.02 + 0.01 * np.cos(8.0 * t)
    return hist, dt


class TestOnsetDetector:
    def test_settling_is_quiet(self):
        hist, dt = synth_history("settling")
        fired, _ = tuning.detect_oscillation_onset(hist, dt, W1, 2.0)
        assert not fired

    def test_growing_oscillation_fires(self):
        hist, dt = synth_history("growing")
        fired, harmonic = tuning.detect_oscillation_onset(hist, dt, W1, 2.0)
        assert fired and harmonic == 3

    def test_fires_promptly_after_crossing(self):
        hist, dt = synth_history("growing")
        period = 2 * np.pi / W1
        # envelope peak-to-peak crosses the 5%-of-target threshold at
        # t ~ 3.5 s; the detector must fire within 3 windows after that
        env = 2 * 0.002 * np.exp(0.92 * dt * np.arange(len(hist)))
        i_cross = int(np.argmax(env > 0.05 * 2.0))
        n = i_cross + int(3 * 5 * period / dt)
        fired, _ = tuning.detect_oscillation_onset(hist[:n], dt, W1, 2.0)
        assert fired

    def test_bounded_ripple_below_threshold_is_quiet(self):
        hist, dt = synth_history("ripple")
        fired, _ = tuning.detect_oscillation_onset(hist, dt, W1, 2.0)
        assert not fired

    def test_requires_history(self):
        with pytest.raises(ValueError):
            tuning.detect_oscillation_onset(np.zeros((0, 3)), 1e-3, W1, 2.0)
        with pytest.raises(ValueError):
            tuning.detect_oscillation_onset(
                np.ones((50, 3), dtype=complex), 1e-3, W1, 2.0)


class TestTune:
    @pytest.fixture(scope="class")
    def report(self, shaw):
        return tuning.tune(shaw, representative_ratio=1.0)

    def test_noiseless_cutoff_fallback(self, report):
        assert abs(report.cutoff - W1 / 10.0) < 1e-9
        assert "degenerate" in report.cutoff_note
        assert all(entry["admissible"] for entry in report.cutoff_scan)

    def test_selections_are_half_the_critical_values(self, report):
        fired_kp = [e["bar"] for e in report.kp_trace if e["fired"]]
        fired_ki = [e["bar"] for e in report.ki_trace if e["fired"]]
        assert fired_kp and fired_ki
        assert abs(report.kp_bar_selected - fired_kp[0] / 2) < 1e-12
        assert abs(report.ki_bar_selected - fired_ki[0] / 2) < 1e-12
        report.validate()

    def test_selection_near_customary_values(self, report):
        # one geometric sweep step (x1.5) around 3 and 2
        assert 3.0 / 1.5 <= report.kp_bar_selected <= 3.0 * 1.5
        assert 2.0 / 1.5 <= report.ki_bar_selected <= 2.0 * 1.5

    def test_noisy_cutoff_selects_largest_admissible(self, shaw):
        s = scenario_variant(shaw, **{"noise.excitation_std": 0.02})
        cfg = tuning.TuningConfig(settle_periods=600,
                                  kp_bar_start=2.0, kp_bar_max=8.0,
                                  ki_bar_start=1.0, ki_bar_max=6.0,
                                  candidate_periods=120.0)
        rep = tuning.tune(s, representative_ratio=1.0, eps_tol=1e-3,
                          config=cfg)
        admissible = [e["cutoff"] for e in rep.cutoff_scan
                      if e["admissible"]]
        rejected = [e["cutoff"] for e in rep.cutoff_scan
                    if not e["admissible"]]
        assert rejected, "noise should make the top of the range inadmissible"
        assert rep.cutoff == max(admissible)

    def test_decoupled_plant_conservative_path(self, shaw):
        # negligible armature mass: the loop is unconditionally stable,
        # no onset is found and the sweep bound is used conservatively
        s = scenario_variant(shaw,
                             **{"plant.exciter.moving_mass_kg": 1e-9})
        cfg = tuning.TuningConfig(settle_periods=500, candidate_periods=100,
                                  kp_bar_start=1.0, kp_bar_max=3.0,
                                  ki_bar_start=1.0, ki_bar_max=3.0)
        rep = tuning.tune(s, representative_ratio=1.0, config=cfg)
        assert not any(e["fired"] for e in rep.kp_trace)
        assert rep.kp_critical is None
        # conservative selection: half of the sweep bound (last candidate)
        last_bar = rep.kp_trace[-1]["bar"]
        assert abs(rep.kp_bar_selected - last_bar / 2) < 1e-12
