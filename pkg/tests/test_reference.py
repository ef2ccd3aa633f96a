import math

import numpy as np
import pytest

from vibench import reference as ref
from vibench import scenario as vbscenario
from vibench.analysis import interaction_ratio, structural_stiffness
from vibench.model import ForceDrive
from vibench.sim import fft_window_spectrum

from test_model import make_plant, make_structure, make_exciter

W1 = 55.92


class TestNewmark:
    def test_zero_forcing_zero_state(self):
        p = make_plant()
        res = ref.newmark_integrate(p, 0.0, W1, np.zeros(4), want_traj=True)
        assert np.all(res["traj"] == 0.0)

    def test_second_order_convergence(self):
        # one period of free vibration of a 1-DOF linear system:
        # endpoint error scales with steps^-2
        import vibench.model as model

        s = model.ModalStructure([10.0], [0.02], {"x": [1.0]})
        p = model.Plant(s, model.CubicSpring(0.0, [1.0]), make_exciter(),
                        model.ForceDrive([1.0]))
        x0 = np.array([1.0, 0.0])
        T = 2 * np.pi / 10.0
        wd = 10.0 * math.sqrt(1 - 0.02 ** 2)
        a = 0.02 * 10.0
        e = math.exp(-a * T)
        exact = np.array([
            e * (math.cos(wd * T) + a / wd * math.sin(wd * T)),
            e * (-(a * a / wd + wd) * math.sin(wd * T))])
        errs = []
        steps = [200, 400, 800, 1600]
        for n in steps:
            res = ref.newmark_integrate(p, 1e-30, 10.0, x0,
                                        steps_per_period=n)
            errs.append(np.linalg.norm(res["x_end"] - exact))
        slope = np.polyfit(np.log(steps), np.log(errs), 1)[0]
        assert abs(slope + 2.0) < 0.2

    def test_cross_integrator_agreement(self, shaw):
        # settled shaw-beam orbit endpoint: Newmark vs Dormand-Prince
        # over exactly one excitation period
        from vibench.sim import IntegratorConfig, integrate_segment

        sess = vbscenario.build_session(shaw)
        sess.set_omega(W1)
        sess.run_hold(150, record=False, forced_amp=2.0)
        x0 = sess.x.copy()
        tau0 = math.remainder(sess.tau, 2 * math.pi)
        res = ref.newmark_integrate(shaw.plant, 2.0, W1, x0,
                                    steps_per_period=1000, phase0=tau0)
        T = 2 * np.pi / W1
        rhs = lambda t, x: shaw.plant.forced_derivative(
            2.0 * math.cos(W1 * t + tau0), x)
        _, X = integrate_segment(rhs, (0.0, T), x0,
                                 IntegratorConfig(rtol=1e-11, atol=1e-14),
                                 sample_rate=1000.0)
        scale = np.linalg.norm(X[-1])
        # second-order phase error of the faster mode over one period is
        # (w2 T / steps)^2 / 12 * w2 T ~ 9e-4 rad; with its ~15% share of
        # the state this puts the agreement floor near 1.4e-4
        assert np.linalg.norm(res["x_end"] - X[-1]) / scale < 2.5e-4


class TestShooting:
    def test_linear_single_newton_step(self, shaw_linear):
        plant = shaw_linear.plant
        prob = ref.ShootingProblem(plant=plant, force_amp=2.0, omega=W1,
                                   observe_at="x3")
        point = ref.shoot(prob)
        assert point.iterations <= 2       # one update + converged check

    def test_linear_floquet_vs_analytic(self):
        # lightly damped single mode; fine steps to meet 1e-6
        import vibench.model as model

        s = model.ModalStructure([10.0], [0.03], {"x": [0.5]})
        p = model.Plant(s, model.CubicSpring(0.0, [0.5]), make_exciter(),
                        model.ForceDrive([0.5]))
        omega = 11.0
        T = 2 * np.pi / omega
        cfg = ref.ShootingConfig(steps_per_period=16384, tolerance=1e-10)
        point = ref.shoot(ref.ShootingProblem(
            plant=p, force_amp=0.5, omega=omega, observe_at="x"), cfg)
        lam = -0.03 * 10.0 + 1j * 10.0 * math.sqrt(1 - 0.03 ** 2)
        expected = {np.exp(lam * T), np.exp(lam.conjugate() * T)}
        got = sorted(point.floquet, key=lambda z: z.imag)
        exp = sorted(expected, key=lambda z: z.imag)
        for g, e in zip(got, exp):
            assert abs(g - e) < 1e-6

    def test_small_forcing_matches_linear_frf(self, shaw):
        plant = shaw.plant
        omega = 0.9 * W1
        cfg = ref.ShootingConfig()
        point = ref.shoot(ref.ShootingProblem(
            plant=plant, force_amp=1e-6, omega=omega, observe_at="x3"), cfg)
        s = plant.structure
        q = sum(s.row("x1")[l] * s.row("x3")[l]
                / structural_stiffness(s, l, omega) for l in range(2))
        assert abs(point.h1 - abs(q) * 1e-6) / (abs(q) * 1e-6) < 1e-3

    def test_residual_certificate(self, shaw):
        # fine steps and a tolerance consistent with the second-order
        # discretization error, so the 10x band is meaningful
        cfg = ref.ShootingConfig(steps_per_period=40000, tolerance=1e-7)
        omega = 0.95 * W1
        point = ref.shoot(ref.ShootingProblem(
            plant=shaw.plant, force_amp=2.0, omega=omega, observe_at="x3"),
            cfg)
        assert point.residual < cfg.tolerance
        res = ref.newmark_integrate(shaw.plant, 2.0, omega, point.x0,
                                    steps_per_period=80000)
        r = np.linalg.norm(res["x_end"] - point.x0)
        assert r / max(np.linalg.norm(point.x0), 1e-9) < 10 * cfg.tolerance


@pytest.fixture(scope="module")
def main_branch(shaw):
    cfg = ref.ShootingConfig()
    grid = np.arange(0.95, 1.22, 0.01) * W1
    return ref.trace_branch(shaw.plant, "x3", 2.0, grid, cfg)


class TestContinuation:
    def test_linear_branch_matches_frf(self, shaw_linear):
        plant = shaw_linear.plant
        grid = np.linspace(0.8, 1.3, 11) * W1
        br = ref.trace_branch(plant, "x3", 2.0, grid)
        assert br.termination == "grid_end"
        s = plant.structure
        for p in br.points:
            q = sum(s.row("x1")[l] * s.row("x3")[l]
                    / structural_stiffness(s, l, p.omega) for l in range(2))
            # bounded by the O(steps^-2) Newmark discretization error
            assert abs(p.h1 - 2.0 * abs(q)) / (2.0 * abs(q)) < 1e-4

    def test_fold_detection(self, main_branch):
        assert main_branch.termination == "turning_point"
        assert 1.19 < main_branch.omega_last / W1 < 1.21
        assert main_branch.omega_failed > main_branch.omega_last

    def test_reverse_retraces(self, shaw, main_branch):
        cfg = ref.ShootingConfig()
        start = main_branch.points[10]
        fwd = [p for p in main_branch.points
               if abs(p.omega - start.omega) < 0.03 * W1
               and p.omega <= start.omega]
        back = ref.continue_branch(
            shaw.plant, "x3", start,
            np.array([p.omega for p in reversed(fwd)]), cfg)
        for p_new in back.points[1:]:
            match = min(fwd, key=lambda q: abs(q.omega - p_new.omega))
            assert abs(p_new.h1 - match.h1) / match.h1 < 1e-8

    def test_stability_consistency(self, shaw, main_branch):
        # time marching started near a stable orbit stays near it
        point = main_branch.points[5]
        sess = vbscenario.build_session(shaw)
        sess.x = point.x0 * 1.02
        sess.tau = point.phase0
        sess.set_omega(point.omega)
        sess.run_hold(120, record=False, forced_amp=2.0)
        res = ref.newmark_integrate(shaw.plant, 2.0, point.omega, point.x0,
                                    steps_per_period=1000, want_traj=True)
        radius = np.max(np.linalg.norm(res["traj"], axis=1))
        # the state stays within the orbit's neighborhood
        assert np.linalg.norm(sess.x) < 1.5 * radius


@pytest.fixture(scope="module")
def isola(shaw, main_branch):
    xpk = main_branch.points[-1].x0
    sess = vbscenario.build_session(shaw)
    sess.x = xpk * 2.2
    sess.set_omega(1.40 * W1)
    seg = sess.run_hold(400, record=True, forced_amp=2.0)
    n_win = int(round(100 * 2 * np.pi / (sess.omega * sess.dt)))
    tau0w = seg.tau0 + sess.omega * (seg.n_samples - n_win) * sess.dt
    F = fft_window_spectrum(seg.exc[-n_win:], sess.dt, sess.omega, tau0w, 1)
    ph = math.remainder(sess.tau + np.angle(F[1]), 2 * math.pi)
    return ref.capture_isola(shaw.plant, "x3", 2.0, sess.x, 1.40 * W1, ph,
                             omega_min=1.10 * W1, omega_max=2.1 * W1,
                             n_points=60)


class TestIsola:
    def test_closed_with_stable_upper_and_unstable_lower(self, isola):
        assert isola["on_isola"]
        assert isola["closed"]
        upper, lower = isola["upper"], isola["lower"]
        stable_up = np.array([p.stable for p in upper.points])
        assert stable_up.mean() > 0.5          # torus region excepted
        assert all(not p.stable for p in lower.points[:-2])

    def test_overhang_has_single_escaped_multiplier(self, isola):
        # the lower (overhanging) part between the turning points
        lower = isola["lower"]
        mid = lower.points[len(lower.points) // 2]
        outside = np.sum(np.abs(mid.floquet) > 1.0 + 1e-6)
        assert outside == 1

    def test_torus_flag_raises_marginal_or_complex_exit(self, isola):
        # at the low-frequency end of the upper part a complex pair sits
        # outside the unit circle (torus instability)
        upper = isola["upper"]
        unstable = [p for p in upper.points if not p.stable]
        assert unstable
        # torus-type loss: a complex pair sits outside the unit circle
        # somewhere on the low-frequency part
        def complex_escape(p):
            fl = p.floquet[np.abs(p.floquet) > 1.0]
            return fl.size >= 2 and bool(np.any(np.abs(fl.imag) > 1e-8))
        assert any(complex_escape(p) for p in unstable)

    def test_seed_from_main_branch_is_rejected(self, shaw, main_branch):
        point = main_branch.points[2]     # weakly nonlinear, ordinary
        out = ref.capture_isola(shaw.plant, "x3", 2.0, point.x0,
                                point.omega, point.phase0,
                                omega_min=0.9 * W1, omega_max=1.3 * W1,
                                n_points=10)
        assert out["on_isola"] is False

    def test_low_level_has_no_isola_seed(self, shaw, main_branch):
        # at a low forcing level the jump scan lands on the ordinary
        # branch: the operation must report absence
        xpk = main_branch.points[-1].x0
        sess = vbscenario.build_session(shaw)
        sess.x = xpk.copy()
        sess.set_omega(1.40 * W1)
        sess.run_hold(300, record=False, forced_amp=0.2)
        out = ref.capture_isola(shaw.plant, "x3", 0.2, sess.x, 1.40 * W1,
                                0.0, omega_min=1.1 * W1, omega_max=1.8 * W1,
                                n_points=10)
        assert out["on_isola"] is False
