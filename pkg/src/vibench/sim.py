"""Time-marching engine and stepped-sine test protocol.

A :class:`ClosedLoopSession` owns the coupled plant / adaptive-filter /
controller state and advances it segment by segment (frequency ramps and
constant-frequency holds) through the engine backend.  The controllers
and the filter step at the fixed sample rate; the plant is integrated in
between with an adaptive Dormand-Prince 5(4) scheme.

:func:`run_stepped_sine` implements the full protocol: half-cosine ramps
between grid points, fixed-duration holds, FFT post-processing of the
final window, settledness diagnostics, and the optional sudden
frequency/voltage jump used to reach isolated response branches.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import model
from ._engine import core as _core
from ._engine import BACKEND

__all__ = [
    "IntegratorConfig",
    "integrate_segment",
    "ramp_frequency",
    "fft_window_spectrum",
    "ClosedLoopSession",
    "SteppedSineSchedule",
    "JumpSpec",
    "PointRecord",
    "RunRecord",
    "run_stepped_sine",
    "jump_to_isola",
    "classify_branch",
]


@dataclass
class IntegratorConfig:
    """Adaptive Runge-Kutta settings (Dormand-Prince 5(4) pair)."""

    method: str = "dopri54"
    max_step: float = 1e-3
    rtol: float = 1e-8
    atol: float = 1e-10

    def __post_init__(self):
        if self.method != "dopri54":
            raise ValueError("only the Dormand-Prince 5(4) scheme is provided")
        if self.max_step <= 0 or self.rtol <= 0 or self.atol <= 0:
            raise ValueError("integrator settings must be positive")


def integrate_segment(rhs, t_span, x0, config=None, sample_rate=10000.0):
    """Integrate ``x' = rhs(t, x)`` and sample the solution at a fixed rate.

    Returns ``(t, X)`` with ``t`` of shape (n+1,) including both span
    endpoints and ``X`` of shape (n+1, len(x0)).  Internally the solver
    adapts its step below ``config.max_step``; output times are hit
    exactly (no interpolation).

    Raises
    ------
    model.BlowupError
        On state blow-up or step-size underflow; carries the last valid
        time in ``.time``.
    """
    config = config or IntegratorConfig()
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not (t1 > t0):
        raise ValueError("t_span must be increasing")
    x = np.array(x0, dtype=float)
    if not np.all(np.isfinite(x)):
        raise model.BlowupError("initial state is not finite", time=t0)
    n_out = max(1, int(round((t1 - t0) * sample_rate)))
    ts = t0 + (t1 - t0) * np.arange(n_out + 1) / n_out
    ts[-1] = t1
    out = np.empty((n_out + 1, x.size))
    out[0] = x
    h = min(config.max_step, (t1 - t0) / n_out)
    for i in range(n_out):
        x, h = _rk45_span(rhs, ts[i], ts[i + 1], x, h, config)
        out[i + 1] = x
    return ts, out


# Dormand-Prince 5(4) coefficients (shared with the engine kernels)
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_DP_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200,
         22 / 525, -1 / 40)


def _rk45_span(rhs, t0, t1, x, h, config):
    """Advance ``x`` from t0 to t1 with embedded error control."""
    t = t0
    k = [None] * 7
    k[0] = np.asarray(rhs(t, x), dtype=float)
    h_min = 1e-12 * max(t1 - t0, abs(t1))
    while t < t1 - 1e-12 * (t1 - t0):
        h_try = min(h, config.max_step, t1 - t)
        clamped = h_try < h
        if h_try < h_min:
            raise model.BlowupError("integrator step-size underflow", time=t)
        for j in range(1, 7):
            xs = x + h_try * sum(a * k[m] for m, a in enumerate(_DP_A[j]) if a)
            k[j] = np.asarray(rhs(t + _DP_C[j] * h_try, xs), dtype=float)
        x5 = x + h_try * sum(b * k[m] for m, b in enumerate(_DP_B) if b)
        err = h_try * sum(e * k[m] for m, e in enumerate(_DP_E) if e)
        scale = config.atol + config.rtol * np.maximum(np.abs(x), np.abs(x5))
        err_norm = math.sqrt(float(np.mean((err / scale) ** 2)))
        if not math.isfinite(err_norm):
            raise model.BlowupError("state blow-up during integration", time=t)
        if err_norm <= 1.0:
            t += h_try
            x = x5
            k[0] = np.asarray(rhs(t, x), dtype=float)
            fac = 5.0 if err_norm == 0.0 else min(5.0, max(0.2, 0.9 * err_norm ** -0.2))
            if not clamped:
                h = h_try * fac
        else:
            h = h_try * max(0.2, 0.9 * err_norm ** -0.2)
    return x, h


class ramp_frequency:
    """Half-cosine frequency blend from ``omega_from`` to ``omega_to``.

    Provides the instantaneous frequency ``omega(t)`` and the exact phase
    integral ``tau(t)``; both endpoints have zero frequency slope.
    """

    def __init__(self, omega_from, omega_to, duration):
        if duration <= 0.0:
            raise ValueError("ramp duration must be positive")
        self.omega_from = float(omega_from)
        self.omega_to = float(omega_to)
        self.duration = float(duration)

    def omega(self, t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.duration)
        return self.omega_from + (self.omega_to - self.omega_from) * 0.5 * (
            1.0 - np.cos(np.pi * t / self.duration))

    def tau(self, t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.duration)
        d = self.omega_to - self.omega_from
        return self.omega_from * t + 0.5 * d * (
            t - (self.duration / np.pi) * np.sin(np.pi * t / self.duration))

    @property
    def total_phase(self):
        return 0.5 * (self.omega_from + self.omega_to) * self.duration


def fft_window_spectrum(samples, dt, omega, tau0=0.0, order=7):
    """Fourier coefficients of a windowed record (no taper).

    Evaluates the discrete Fourier sums directly at the exact harmonic
    frequencies ``h * omega`` (``tau0`` is the excitation phase at the
    first window sample), which avoids the fractional-bin frequency
    mismatch of a grid-locked transform.  The window should cover an
    integer number of fundamental periods; the nearest-sample rounding
    then leaves a leakage floor of order ``1/(2 N)`` relative.
    Coefficients follow the ``F[0] + Re sum F[h] e^{i h tau}`` convention.
    """
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    periods = n * dt * omega / (2.0 * np.pi)
    if periods < 1.0 - 1e-9:
        raise ValueError("window shorter than one fundamental period")
    if order * omega >= np.pi / dt:
        raise ValueError("requested order violates the sampling rate")
    rot = np.exp(-1j * (tau0 + omega * dt * np.arange(n)))
    out = np.zeros(order + 1, dtype=complex)
    out[0] = samples.mean()
    cur = rot
    for h in range(1, order + 1):
        out[h] = 2.0 * np.mean(samples * cur)
        cur = cur * rot
    return out


def classify_branch(amplitude, low_reference, high_reference):
    """Label a response amplitude against known branch levels."""
    mid = 0.5 * (low_reference + high_reference)
    return "high" if amplitude >= mid else "low"


@dataclass
class SegmentResult:
    exc: np.ndarray | None
    obs: np.ndarray | None
    u: np.ndarray | None
    snap_fcoef: np.ndarray
    snap_ucmd: np.ndarray
    snap_u1: np.ndarray
    snap_stride: int
    tau0: float
    omega: float
    n_samples: int
    n_frozen: int
    n_clamped: int
    n_steps: int
    n_rejected: int


class ClosedLoopSession:
    """Stateful closed-loop simulation of one virtual test.

    Parameters mirror the scenario: the plant, the observation location,
    adaptive-filter settings, controller gains and flags, sample rate,
    integrator settings and optional measurement noise / command-voltage
    disturbance coefficients.
    """

    def __init__(self, plant, observe_at, filter_order, filter_cutoff,
                 target_level, fundamental_gain, harmonics, k_p, k_i,
                 voltage_limit=10.0, sample_rate=10000.0,
                 integrator=None, noise_std=0.0, rng=None,
                 disturbance=None, fundamental_enabled=True,
                 harmonization_enabled=True):
        self.plant = plant
        self.pack = plant.pack(observe_at)
        self.observe_at = observe_at
        self.order = int(filter_order)
        if harmonics and self.order < max(harmonics):
            raise ValueError("filter order must cover the controlled harmonics")
        self.cutoff = float(filter_cutoff)
        self.dt = 1.0 / float(sample_rate)
        if self.dt * self.cutoff > 0.1:
            import warnings
            warnings.warn("dt*cutoff > 0.1: adaptive filter is under-resolved",
                          RuntimeWarning, stacklevel=2)
        self.target = float(target_level)
        self.k_f = float(fundamental_gain)
        self.k_p = float(k_p)
        self.k_i = float(k_i)
        self.voltage_limit = float(voltage_limit)
        self.integrator = integrator or IntegratorConfig()
        self.noise_std = float(noise_std)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.hmask = np.zeros(self.order + 1, dtype=np.uint8)
        for h in harmonics:
            self.hmask[h] = 1
        self.fund_on = bool(fundamental_enabled)
        self.harm_on = bool(harmonization_enabled)
        self.wdist = np.zeros(self.order + 1, dtype=complex)
        if disturbance:
            for h, c in disturbance.items():
                self.wdist[int(h)] = complex(c[0], c[1])

        # evolving state
        self.x = plant.initial_state()
        self.fcoef = np.zeros(self.order + 1, dtype=complex)
        self.integ = np.zeros(self.order + 1, dtype=complex)
        self.u1 = 0.0
        self.ucmd = np.zeros(self.order + 1, dtype=complex)
        self.tau = 0.0
        self.omega = 0.0
        self.h_next = self.dt
        self.t = 0.0
        self.total_frozen = 0
        self.total_clamped = 0

    # -- state management -------------------------------------------------

    def snapshot(self):
        return {
            "x": self.x.copy(), "fcoef": self.fcoef.copy(),
            "integ": self.integ.copy(), "u1": self.u1,
            "ucmd": self.ucmd.copy(), "tau": self.tau,
            "omega": self.omega, "h_next": self.h_next, "t": self.t,
        }

    def restore(self, snap):
        self.x = snap["x"].copy()
        self.fcoef = snap["fcoef"].copy()
        self.integ = snap["integ"].copy()
        self.u1 = snap["u1"]
        self.ucmd = snap["ucmd"].copy()
        self.tau = snap["tau"]
        self.omega = snap["omega"]
        self.h_next = snap["h_next"]
        self.t = snap["t"]

    def set_omega(self, omega):
        self.omega = float(omega)

    def apply_jump(self, d_omega, d_voltage):
        """Sudden frequency and fundamental-voltage increase."""
        self.omega += float(d_omega)
        self.u1 = min(max(self.u1 + float(d_voltage), 0.0), self.voltage_limit)

    # -- segment drivers ---------------------------------------------------

    def _run(self, om_a, om_b, t_ramp, n_samples, record, snap_stride,
             forced_amp=None):
        noise = None
        if self.noise_std > 0.0:
            noise = self.noise_std * self.rng.standard_normal(n_samples)
        rec_exc = rec_obs = rec_u = None
        if record:
            rec_exc = np.empty(n_samples)
            rec_obs = np.empty(n_samples)
            rec_u = np.empty(n_samples)
        tau0 = math.remainder(self.tau, 2.0 * math.pi)
        res = _core.run_segment(
            self.pack, self.x, self.fcoef, self.integ, self.u1, self.ucmd,
            self.wdist, self.hmask, self.k_p, self.k_i, self.k_f, self.target,
            self.voltage_limit, self.fund_on, self.harm_on, self.cutoff,
            tau0, om_a, om_b, t_ramp, n_samples, self.dt,
            self.integrator.rtol, self.integrator.atol,
            self.integrator.max_step, self.h_next,
            forced_amp is not None, forced_amp or 0.0, noise,
            rec_exc, rec_obs, rec_u, snap_stride)
        if res["status"] == 1:
            raise model.BlowupError(
                "simulation state blew up",
                time=self.t + res["i_fail"] * self.dt)
        if res["status"] == 2:
            raise model.BlowupError(
                "integrator step-size underflow",
                time=self.t + res["i_fail"] * self.dt)
        self.x = np.asarray(res["x"])
        self.fcoef = np.asarray(res["fcoef"])
        self.integ = np.asarray(res["integ"])
        self.u1 = res["u1"]
        self.ucmd = np.asarray(res["u_now"])
        self.tau = res["tau_end"]
        self.h_next = res["h_next"]
        self.t += n_samples * self.dt
        self.total_frozen += res["n_frozen"]
        self.total_clamped += res["n_clamped"]
        return SegmentResult(
            exc=rec_exc, obs=rec_obs, u=rec_u,
            snap_fcoef=res["snap_fcoef"], snap_ucmd=res["snap_ucmd"],
            snap_u1=res["snap_u1"], snap_stride=snap_stride,
            tau0=tau0, omega=om_b, n_samples=n_samples,
            n_frozen=res["n_frozen"], n_clamped=res["n_clamped"],
            n_steps=res["n_steps"], n_rejected=res["n_rejected"])

    def run_ramp(self, omega_to, duration, record=False, snap_stride=0):
        """Half-cosine frequency ramp from the current frequency."""
        n = max(1, int(round(duration / self.dt)))
        res = self._run(self.omega, float(omega_to), n * self.dt, n,
                        record, snap_stride)
        self.omega = float(omega_to)
        return res

    def run_hold(self, periods, record=True, snap_stride=0, forced_amp=None):
        """Constant-frequency hold over ``periods`` excitation periods."""
        n = max(1, int(round(periods * 2.0 * np.pi / (self.omega * self.dt))))
        return self._run(self.omega, self.omega, 0.0, n, record, snap_stride,
                         forced_amp=forced_amp)


@dataclass
class JumpSpec:
    """Sudden frequency/voltage increase applied after a grid point."""

    after_ratio: float
    delta_ratio: float
    delta_voltage: float
    post_ratios: tuple = ()

    def validate(self):
        if self.delta_ratio < 0.0:
            raise ValueError("jump must not decrease the frequency")


@dataclass
class SteppedSineSchedule:
    """Frequency grid and timing of a stepped-sine test.

    Ratios are multiples of the first linear modal frequency.  Ramp
    durations are measured in periods of that frequency; hold and
    post-processing windows in periods of the current excitation
    frequency.
    """

    ratios: np.ndarray
    direction: str = "forward"
    ramp_periods: float = 10.0
    hold_periods: float = 600.0
    window_periods: float = 300.0
    jump: JumpSpec | None = None

    def __post_init__(self):
        self.ratios = np.asarray(self.ratios, dtype=float)
        if self.ratios.size == 0:
            raise ValueError("empty frequency grid")
        d = np.diff(self.ratios)
        if self.direction == "forward":
            if np.any(d <= 0):
                raise ValueError("grid must increase for a forward test")
        elif self.direction == "backward":
            if np.any(d >= 0):
                raise ValueError("grid must decrease for a backward test")
        else:
            raise ValueError("direction must be 'forward' or 'backward'")
        if self.window_periods > self.hold_periods:
            raise ValueError("post-processing window exceeds the hold")
        if self.jump is not None:
            self.jump.validate()


@dataclass
class PointRecord:
    """Post-processed quantities of one stepped-sine grid point."""

    index: int
    omega: float
    ratio: float
    label: str
    exc_fft: np.ndarray
    exc_filter: np.ndarray
    resp_fft: np.ndarray
    u_coeffs: np.ndarray
    u1: float
    settled: bool
    settle_delta: float
    fluctuation: np.ndarray
    n_frozen: int
    n_clamped: int
    sim_time: float
    wall_time: float
    final_state: np.ndarray
    handoff_phase: float


@dataclass
class RunRecord:
    """Outcome of one stepped-sine run."""

    points: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def ratios(self):
        return np.array([p.ratio for p in self.points])

    def harmonic_ratio(self, h, label=None):
        """``|F_h| / target`` per point (excitation distortion measure)."""
        target = self.meta["target_level"]
        pts = [p for p in self.points if label is None or p.label == label]
        return np.array([abs(p.exc_fft[h]) / target for p in pts])

    def response_amplitude(self, h, label=None):
        pts = [p for p in self.points if label is None or p.label == label]
        return np.array([abs(p.resp_fft[h]) for p in pts])


def _postprocess_point(session, seg, schedule, settle_tol, target, index,
                       label, wall, ratio_ref):
    order = session.order
    omega = seg.omega
    dt = session.dt
    n_win = min(seg.n_samples, int(round(
        schedule.window_periods * 2.0 * np.pi / (omega * dt))))
    i0 = seg.n_samples - n_win
    tau0_win = seg.tau0 + omega * i0 * dt
    exc_win = seg.exc[i0:]
    obs_win = seg.obs[i0:]
    exc_fft = fft_window_spectrum(exc_win, dt, omega, tau0_win, order)
    resp_fft = fft_window_spectrum(obs_win, dt, omega, tau0_win, order)

    half = n_win // 2
    sp1 = fft_window_spectrum(exc_win[:half], dt, omega, tau0_win, order)
    sp2 = fft_window_spectrum(exc_win[half:2 * half], dt, omega,
                              tau0_win + omega * half * dt, order)
    settle_delta = float(np.max(np.abs(sp2 - sp1))) / target
    settled = settle_delta <= settle_tol

    # filter estimates averaged over the window, and their fluctuation
    if seg.snap_stride > 0 and seg.snap_fcoef.shape[0] > 0:
        snap_idx = (np.arange(1, seg.snap_fcoef.shape[0] + 1)
                    * seg.snap_stride - 1)
        in_win = snap_idx >= i0
        fwin = seg.snap_fcoef[in_win]
        exc_filter = fwin.mean(axis=0)
        mags = np.abs(fwin)
        means = mags.mean(axis=0)
        ref = means[1] if means[1] > 0 else 1.0
        fluctuation = np.max(np.abs(mags - means), axis=0) / ref
    else:
        exc_filter = session.fcoef.copy()
        fluctuation = np.zeros(order + 1)

    handoff = math.remainder(session.tau + np.angle(exc_fft[1]), 2.0 * math.pi)
    return PointRecord(
        index=index, omega=omega, ratio=omega / ratio_ref, label=label,
        exc_fft=exc_fft, exc_filter=exc_filter, resp_fft=resp_fft,
        u_coeffs=session.ucmd.copy(), u1=session.u1,
        settled=settled, settle_delta=settle_delta, fluctuation=fluctuation,
        n_frozen=seg.n_frozen, n_clamped=seg.n_clamped,
        sim_time=seg.n_samples * dt, wall_time=wall,
        final_state=session.x.copy(), handoff_phase=handoff)


def jump_to_isola(session, d_omega, d_voltage, schedule, settle_tol, target,
                  index, ratio_ref, snap_stride):
    """Apply a sudden frequency/voltage step and settle on the new branch.

    The fundamental controller restores the excitation level; the
    harmonizer stays active throughout.  Returns the landing point record.
    """
    if d_omega == 0.0 and d_voltage == 0.0:
        pass  # degenerate jump: the run simply continues
    session.apply_jump(d_omega, d_voltage)
    t0 = time.perf_counter()
    seg = session.run_hold(schedule.hold_periods, record=True,
                           snap_stride=snap_stride)
    wall = time.perf_counter() - t0
    return _postprocess_point(session, seg, schedule, settle_tol, target,
                              index, "landing", wall, ratio_ref)


def run_stepped_sine(scenario, schedule, dump_dir=None):
    """Run a stepped-sine test per the schedule; returns a RunRecord.

    Homogeneous initial conditions at the first grid point, state
    carried over between points, controllers active throughout.  When a
    jump is scheduled the run continues on the post-jump grid, tagging
    the points as ``isola``.
    """
    from .scenario import build_session  # local import to avoid a cycle

    session = build_session(scenario)
    omega1 = scenario.plant.structure.omega[0]
    settle_tol = scenario.settle_tol_ratio
    target = session.target
    snap_stride = max(1, int(round(0.001 / session.dt)))
    ramp_T = schedule.ramp_periods * 2.0 * np.pi / omega1

    record = RunRecord(meta={
        "target_level": target,
        "backend": BACKEND,
        "scenario": scenario.name,
        "seed": scenario.seed,
        "direction": schedule.direction,
        "omega1": omega1,
    })
    grid = [float(r) * omega1 for r in schedule.ratios]
    index = 0
    jumped = False
    for i, omega in enumerate(grid):
        t0 = time.perf_counter()
        if i == 0:
            session.set_omega(omega)
        else:
            session.run_ramp(omega, ramp_T)
        seg = session.run_hold(schedule.hold_periods, record=True,
                               snap_stride=snap_stride)
        wall = time.perf_counter() - t0
        point = _postprocess_point(session, seg, schedule, settle_tol,
                                   target, index, "main", wall, omega1)
        record.points.append(point)
        if dump_dir is not None:
            _dump_timeseries(dump_dir, index, session, seg)
        index += 1
        jump = schedule.jump
        if (jump is not None and not jumped
                and omega / omega1 >= jump.after_ratio - 1e-12):
            landing = jump_to_isola(
                session, jump.delta_ratio * omega1, jump.delta_voltage,
                schedule, settle_tol, target, index, omega1, snap_stride)
            record.points.append(landing)
            index += 1
            jumped = True
            for ratio in jump.post_ratios:
                t0 = time.perf_counter()
                session.run_ramp(float(ratio) * omega1, ramp_T)
                seg = session.run_hold(schedule.hold_periods, record=True,
                                       snap_stride=snap_stride)
                wall = time.perf_counter() - t0
                point = _postprocess_point(session, seg, schedule,
                                           settle_tol, target, index,
                                           "isola", wall, omega1)
                record.points.append(point)
                index += 1
            break
    record.meta["total_frozen"] = session.total_frozen
    record.meta["total_clamped"] = session.total_clamped
    return record


def _dump_timeseries(dump_dir, index, session, seg):
    """Columnar binary dump of one hold: time, voltage, excitation,
    observation (float64, shape (n, 4))."""
    import os

    os.makedirs(dump_dir, exist_ok=True)
    n = seg.n_samples
    t = session.t - n * session.dt + session.dt * np.arange(n)
    data = np.column_stack([t, seg.u, seg.exc, seg.obs])
    np.save(os.path.join(dump_dir, f"point_{index:03d}_timeseries.npy"), data)
