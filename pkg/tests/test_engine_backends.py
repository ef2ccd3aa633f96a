"""Cython core vs pure-Python fallback: identical semantics on every
kernel, verified on short segments of each operating mode."""

import numpy as np
import pytest

from vibench._engine import _purepy

try:
    from vibench._engine import _core
    HAVE_CORE = hasattr(_core, "run_segment")
except ImportError:
    HAVE_CORE = False

pytestmark = pytest.mark.skipif(not HAVE_CORE,
                                reason="compiled core not built")

W1 = 55.92


def shaw_pack():
    from vibench.scenario import load_scenario

    s = load_scenario("shaw-beam")
    return s.plant.pack("x3"), s


def segment_args(pack, mode="closed", n=3000, ramp=False, noise=False,
                 base=False):
    order = 7
    x0 = np.zeros(6 if base else 4)
    fc0 = np.zeros(order + 1, dtype=complex)
    integ0 = np.zeros(order + 1, dtype=complex)
    ucmd = np.zeros(order + 1, dtype=complex)
    wdist = np.zeros(order + 1, dtype=complex)
    wdist[3] = 0.05 + 0.02j
    hmask = np.zeros(order + 1, dtype=np.uint8)
    hmask[2:] = 1
    rng = np.random.default_rng(5)
    noise_arr = 1e-3 * rng.standard_normal(n) if noise else None
    om_a, om_b = W1 * 0.98, W1 * (1.06 if ramp else 0.98)
    t_ramp = n * 1e-4 if ramp else 0.0
    fund_on, harm_on, forced, famp = True, True, False, 0.0
    if mode == "open":
        fund_on = harm_on = False
        ucmd[1] = 0.8
        ucmd[3] = 0.05 - 0.01j
    elif mode == "forced":
        forced, famp = True, 2.0
    return dict(x0=x0, fc0=fc0, integ0=integ0, ucmd=ucmd, wdist=wdist,
                hmask=hmask, noise=noise_arr, om_a=om_a, om_b=om_b,
                t_ramp=t_ramp, fund_on=fund_on, harm_on=harm_on,
                forced=forced, famp=famp, n=n)


def run_backend(core, pack, a):
    n = a["n"]
    rec = [np.empty(n), np.empty(n), np.empty(n)]
    res = core.run_segment(
        pack, a["x0"], a["fc0"], a["integ0"], 0.0, a["ucmd"], a["wdist"],
        a["hmask"], 0.885, 3.299, 0.1, 2.0, 10.0, a["fund_on"],
        a["harm_on"], 5.592, 0.3, a["om_a"], a["om_b"], a["t_ramp"], n,
        1e-4, 1e-8, 1e-10, 1e-3, -1.0, a["forced"], a["famp"], a["noise"],
        rec[0], rec[1], rec[2], 10)
    return res, rec


@pytest.mark.parametrize("mode,ramp,noise", [
    ("closed", False, False),
    ("closed", True, True),
    ("open", False, False),
    ("forced", False, False),
])
def test_run_segment_equivalence(mode, ramp, noise):
    pack, _ = shaw_pack()
    a = segment_args(pack, mode=mode, ramp=ramp, noise=noise)
    r_py, rec_py = run_backend(_purepy, pack, dict(a))
    r_cy, rec_cy = run_backend(_core, pack, dict(a))
    assert r_py["status"] == r_cy["status"] == 0
    assert r_py["n_steps"] == r_cy["n_steps"]
    np.testing.assert_allclose(r_py["x"], r_cy["x"], rtol=1e-9, atol=1e-15)
    np.testing.assert_allclose(r_py["fcoef"], r_cy["fcoef"], rtol=1e-9,
                               atol=1e-15)
    np.testing.assert_allclose(r_py["integ"], r_cy["integ"], rtol=1e-9,
                               atol=1e-15)
    assert abs(r_py["u1"] - r_cy["u1"]) < 1e-12
    assert abs(r_py["tau_end"] - r_cy["tau_end"]) < 1e-12
    for b_py, b_cy in zip(rec_py, rec_cy):
        np.testing.assert_allclose(b_py, b_cy, rtol=1e-9, atol=1e-14)
    np.testing.assert_allclose(r_py["snap_fcoef"], r_cy["snap_fcoef"],
                               rtol=1e-9, atol=1e-15)


def test_base_drive_equivalence():
    from vibench import model

    s = model.ModalStructure([55.92, 199.18], [0.01, 0.01],
                             {"x3": [5.13, 3.8], "x4": [5.34, 4.67]})
    plant = model.Plant(s, model.CubicSpring(2.517e6, s.row("x4")),
                        model.Exciter(0.057, 2.0, 6.78, 417.4, 0.935),
                        model.BaseDrive([0.08, -0.05]))
    pack = plant.pack("x3")
    a = segment_args(pack, base=True)
    r_py, rec_py = run_backend(_purepy, pack, dict(a))
    r_cy, rec_cy = run_backend(_core, pack, dict(a))
    assert r_py["status"] == r_cy["status"] == 0
    np.testing.assert_allclose(r_py["x"], r_cy["x"], rtol=1e-9, atol=1e-15)
    np.testing.assert_allclose(rec_py[0], rec_cy[0], rtol=1e-9, atol=1e-12)


def test_filter_history_equivalence():
    rng = np.random.default_rng(8)
    sig = rng.standard_normal(5000)
    h_py, f_py = _purepy.filter_history(sig, 0.2, W1, 1e-4, 5.6, 5,
                                        np.zeros(6, complex), 7)
    h_cy, f_cy = _core.filter_history(sig, 0.2, W1, 1e-4, 5.6, 5,
                                      np.zeros(6, complex), 7)
    np.testing.assert_allclose(h_py, h_cy, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(f_py, f_cy, rtol=1e-12, atol=1e-15)


def test_newmark_orbit_equivalence():
    w2 = np.array([55.92, 199.18]) ** 2
    c2dw = 2 * 0.01 * np.array([55.92, 199.18])
    phi_nl = np.array([5.34, 4.67])
    phi_f = np.array([0.125, -0.575])
    x0 = np.array([1e-4, -2e-5, 3e-3, 1e-3])
    args = (w2, c2dw, phi_nl, 2.517e6, phi_f, W1, 2.0, 0.4, x0,
            500, 3, True, True, 1e-11, 20)
    r_py = _purepy.newmark_orbit(*args)
    r_cy = _core.newmark_orbit(*args)
    assert r_py["status"] == r_cy["status"] == 0
    np.testing.assert_allclose(r_py["x_end"], r_cy["x_end"], rtol=1e-9,
                               atol=1e-14)
    np.testing.assert_allclose(r_py["monodromy"], r_cy["monodromy"],
                               rtol=1e-8, atol=1e-11)
    np.testing.assert_allclose(r_py["traj"], r_cy["traj"], rtol=1e-9,
                               atol=1e-14)


def test_backend_reports_name():
    from vibench._engine import BACKEND

    assert BACKEND in ("cython", "python")
