"""Heuristic controller tuning: adaptive-filter cutoff selection from an
open-loop run, then sequential proportional- and integral-gain sweeps up
to the oscillation-onset boundary, selecting half the critical values.

The fundamental level controller stays active throughout.  Each gain
candidate restarts from the same settled closed-loop state, so sweeps
are comparable and deterministic.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .estimator import run_filter, fluctuation_metric
from .scenario import build_session

__all__ = [
    "TuningConfig",
    "TuningReport",
    "detect_oscillation_onset",
    "tune",
]


@dataclass
class TuningConfig:
    """Knobs of the heuristic scheme (defaults match the shipped bench)."""

    settle_periods: float = 800.0
    cutoff_record_periods: float = 300.0
    cutoff_metric_periods: float = 100.0
    cutoff_grid_points: int = 9         # geometric over [w1/100, w1]
    candidate_periods: float = 240.0
    onset_window_periods: float = 5.0
    onset_threshold_ratio: float = 0.05
    sweep_ratio: float = 1.5
    kp_bar_start: float = 1.0
    kp_bar_max: float = 30.0
    ki_bar_start: float = 0.5
    ki_bar_max: float = 30.0


@dataclass
class TuningReport:
    cutoff: float
    cutoff_scan: list
    cutoff_note: str
    kp_trace: list = field(default_factory=list)
    ki_trace: list = field(default_factory=list)
    kp_critical: float | None = None
    ki_critical: float | None = None
    kp_selected: float = 0.0
    ki_selected: float = 0.0
    kp_bar_selected: float = 0.0
    ki_bar_selected: float = 0.0
    representative: tuple = (0.0, 0.0)
    wall_time: float = 0.0

    def validate(self):
        if self.kp_critical is not None:
            assert self.kp_selected <= self.kp_critical
        if self.ki_critical is not None:
            assert self.ki_selected <= self.ki_critical


def detect_oscillation_onset(coeff_history, dt, omega, target,
                             window_periods=5.0, threshold_ratio=0.05,
                             skip_periods=20.0):
    """Detect growing coefficient oscillations in a gain-candidate run.

    ``coeff_history``: complex estimate history (n, order+1) sampled every
    ``dt`` seconds.  Fires when the windowed peak-to-peak of any
    ``|F_h|``, h >= 2, grows over consecutive windows and exceeds
    ``threshold_ratio * target``.  Returns ``(fired, harmonic)``.
    """
    history = np.asarray(coeff_history)
    if history.size == 0:
        raise ValueError("empty history")
    period = 2.0 * np.pi / omega
    n_skip = int(round(skip_periods * period / dt))
    if history.shape[0] - n_skip < int(round(4 * window_periods * period / dt)):
        raise ValueError("history must cover at least 20 periods past "
                         "activation")
    mags = np.abs(history[n_skip:, 2:])
    n_win = max(1, int(round(window_periods * period / dt)))
    n_chunks = mags.shape[0] // n_win
    if n_chunks < 3:
        raise ValueError("history too short for onset detection")
    ptp = np.array([mags[k * n_win:(k + 1) * n_win].max(axis=0)
                    - mags[k * n_win:(k + 1) * n_win].min(axis=0)
                    for k in range(n_chunks)])
    threshold = threshold_ratio * target
    for k in range(2, n_chunks):
        over = ptp[k] > threshold
        growing = (ptp[k] > ptp[k - 1]) & (ptp[k - 1] > ptp[k - 2])
        hit = over & growing
        if np.any(hit):
            return True, int(np.argmax(hit)) + 2
    return False, -1


def _candidate_history(scenario, snap, k_p, k_i, config):
    session = build_session(scenario, harmonization_enabled=True,
                            k_p=k_p, k_i=k_i)
    session.restore(snap)
    session.harm_on = True
    stride = max(1, int(round(0.001 / session.dt)))
    seg = session.run_hold(config.candidate_periods, record=False,
                           snap_stride=stride)
    return seg.snap_fcoef, stride * session.dt


def _sweep(scenario, snap, omega, target, config, bar_values, gain_of,
           fixed_kp=None):
    """Raise the gain until the onset detector fires; returns
    (critical_bar or None, trace)."""
    trace = []
    for bar in bar_values:
        if fixed_kp is None:
            k_p, k_i = gain_of(bar), 0.0
        else:
            k_p, k_i = fixed_kp, gain_of(bar)
        hist, dt_hist = _candidate_history(scenario, snap, k_p, k_i, config)
        fired, harmonic = detect_oscillation_onset(
            hist, dt_hist, omega, target,
            window_periods=config.onset_window_periods,
            threshold_ratio=config.onset_threshold_ratio)
        trace.append({"bar": bar, "fired": fired, "harmonic": harmonic})
        if fired:
            return bar, trace
    return None, trace


def tune(scenario, representative_ratio=1.0, representative_level=None,
         eps_tol=1e-4, config=None):
    """Run the heuristic tuning scheme at a representative point.

    Returns a :class:`TuningReport` with the selected cutoff frequency and
    gains (half the detected critical values).  When no oscillation onset
    is found within the sweep bounds, the bound itself is reported as a
    conservative critical value.  When the cutoff scan is degenerate (all
    candidates admissible, i.e. a noiseless record), the customary
    ``omega_1 / 10`` is selected and noted.
    """
    config = config or TuningConfig()
    t_start = time.perf_counter()
    omega1 = scenario.plant.structure.omega[0]
    omega = representative_ratio * omega1
    target = (representative_level if representative_level is not None
              else scenario.target_level)
    g_over_r = scenario.plant.exciter.voltage_gain

    # -- open-loop run (harmonization off), shared by all tuning steps
    session = build_session(scenario, harmonization_enabled=False,
                            target_level=target)
    session.set_omega(omega)
    session.run_hold(config.settle_periods, record=False)
    snap = session.snapshot()
    seg = session.run_hold(config.cutoff_record_periods, record=True)
    record_session = session

    # -- cutoff selection: offline filters over the recorded signal
    grid = np.geomspace(omega1 / 100.0, omega1, config.cutoff_grid_points)
    metric_periods = config.cutoff_metric_periods
    n_metric = int(round(metric_periods * 2 * np.pi
                         / (omega * record_session.dt)))
    scan = []
    admissible = []
    for cutoff in grid:
        hist, _ = run_filter(seg.exc, seg.tau0, omega, record_session.dt,
                             record_session.order, cutoff, stride=10)
        tail = hist[-max(1, n_metric // 10):]
        metric = fluctuation_metric(tail, omega, 10 * record_session.dt)
        worst = float(np.max(metric[1:]))
        ok = worst < eps_tol / 2.0
        scan.append({"cutoff": float(cutoff), "metric": worst,
                     "admissible": ok})
        if ok:
            admissible.append(float(cutoff))
    if not admissible:
        raise RuntimeError(
            "no admissible cutoff in the scanned range: improve the "
            "signal-to-noise ratio (lower noise or raise the level)")
    if len(admissible) == len(grid):
        cutoff = omega1 / 10.0
        note = ("scan degenerate (all candidates admissible, noise-free "
                "record); customary omega_1/10 selected")
    else:
        cutoff = max(admissible)
        note = "largest admissible cutoff selected"

    scenario_t = _with_cutoff(scenario, cutoff, target)
    # re-settle with the selected cutoff so sweep candidates are comparable
    session = build_session(scenario_t, harmonization_enabled=False)
    session.set_omega(omega)
    session.run_hold(config.settle_periods, record=False)
    snap = session.snapshot()

    # -- proportional gain sweep (integral off)
    bars = _geometric(config.kp_bar_start, config.kp_bar_max,
                      config.sweep_ratio)
    kp_crit_bar, kp_trace = _sweep(
        scenario_t, snap, omega, target, config, bars,
        gain_of=lambda b: b / g_over_r)
    conservative_kp = kp_crit_bar is None
    if conservative_kp:
        kp_crit_bar = bars[-1]
    kp_bar_sel = kp_crit_bar / 2.0
    k_p_sel = kp_bar_sel / g_over_r

    # -- integral gain sweep (selected proportional gain held)
    bars_i = _geometric(config.ki_bar_start, config.ki_bar_max,
                        config.sweep_ratio)
    ki_crit_bar, ki_trace = _sweep(
        scenario_t, snap, omega, target, config, bars_i,
        gain_of=lambda b: b * cutoff / g_over_r, fixed_kp=k_p_sel)
    conservative_ki = ki_crit_bar is None
    if conservative_ki:
        ki_crit_bar = bars_i[-1]
    ki_bar_sel = ki_crit_bar / 2.0
    k_i_sel = ki_bar_sel * cutoff / g_over_r

    report = TuningReport(
        cutoff=cutoff, cutoff_scan=scan, cutoff_note=note,
        kp_trace=kp_trace, ki_trace=ki_trace,
        kp_critical=None if conservative_kp else kp_crit_bar / g_over_r,
        ki_critical=None if conservative_ki else ki_crit_bar * cutoff / g_over_r,
        kp_selected=k_p_sel, ki_selected=k_i_sel,
        kp_bar_selected=kp_bar_sel, ki_bar_selected=ki_bar_sel,
        representative=(omega, target),
        wall_time=time.perf_counter() - t_start)
    return report


def _geometric(start, stop, ratio):
    out = [start]
    while out[-1] * ratio <= stop * (1 + 1e-12):
        out.append(out[-1] * ratio)
    return out


def _with_cutoff(scenario, cutoff, target):
    from .scenario import Scenario
    import copy

    raw = copy.deepcopy(scenario.raw)
    raw.setdefault("estimator", {})["cutoff_rad_s"] = float(cutoff)
    raw.setdefault("control", {})["target_level"] = float(target)
    return Scenario(raw)
