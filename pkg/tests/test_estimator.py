import numpy as np
import pytest

from vibench.estimator import (AdaptiveFilter, run_filter, fluctuation_metric,
                               synthesize_series)
from vibench.sim import fft_window_spectrum

W = 55.92          # fundamental used throughout
DT = 1e-4


def taus(n, omega=W, tau0=0.0):
    return tau0 + omega * DT * np.arange(n)


class TestFilterStep:
    def test_dc_convergence(self):
        f = AdaptiveFilter(order=3, cutoff=5.0)
        n = int(50 * 2 * np.pi / (W * DT))
        for tau in taus(n):
            f.step(2.5, tau, DT)
        assert abs(f.coeffs[0].real - 2.5) < 1e-3
        assert np.all(np.abs(f.coeffs[1:]) < 1e-3)
        assert f.coeffs[0].imag == 0.0

    def test_low_pass_time_constant(self):
        # unit cosine at 10x the cutoff: |F1 - 1| decays at rate ~cutoff
        cutoff = W / 10.0
        f = AdaptiveFilter(order=3, cutoff=cutoff)
        n = int(25 * 2 * np.pi / (W * DT))
        tt = DT * np.arange(n)
        err = np.empty(n)
        for i, tau in enumerate(taus(n)):
            f.step(np.cos(tau), tau, DT)
            err[i] = abs(f.coeffs[1] - 1.0)
        # fit whole periods between start-up and the rounding floor
        i0 = int(2 * np.pi / (W * DT))
        keep = err[i0:] > 1e-8
        rate = -np.polyfit(tt[i0:][keep], np.log(err[i0:][keep]), 1)[0]
        assert abs(rate - cutoff) / cutoff < 0.10

    def test_three_harmonic_fft_oracle(self):
        rng = np.random.default_rng(42)
        coef = np.zeros(4, dtype=complex)
        coef[0] = rng.normal()
        coef[1:] = rng.normal(size=3) + 1j * rng.normal(size=3)
        periods = 400
        n = int(round(periods * 2 * np.pi / (W * DT)))
        tau = taus(n)
        samples = synthesize_series(coef, tau)
        hist, final = run_filter(samples, 0.0, W, DT, order=3, cutoff=W / 10)
        oracle = fft_window_spectrum(samples[-n // 2:], DT, W,
                                     tau[-n // 2], order=3)
        np.testing.assert_allclose(final, oracle, rtol=1e-3, atol=1e-6)

    def test_exact_fixed_point(self):
        rng = np.random.default_rng(7)
        coef = np.zeros(5, dtype=complex)
        coef[0] = 0.4
        coef[1:] = rng.normal(size=4) + 1j * rng.normal(size=4)
        f = AdaptiveFilter(order=4, cutoff=W / 5)
        f.coeffs[:] = coef
        for tau in taus(3000):
            f.step(float(synthesize_series(coef, tau)), tau, DT)
        assert np.max(np.abs(f.coeffs - coef)) < 1e-11

    def test_linearity(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=1000)
        b = rng.normal(size=1000)
        ha, _ = run_filter(a, 0.0, W, DT, 2, W / 8)
        hb, _ = run_filter(b, 0.0, W, DT, 2, W / 8)
        hab, _ = run_filter(a + b, 0.0, W, DT, 2, W / 8)
        np.testing.assert_allclose(hab, ha + hb, atol=1e-12)

    def test_phase_consistency(self):
        rng = np.random.default_rng(9)
        coef = np.zeros(4, dtype=complex)
        coef[1:] = rng.normal(size=3) + 1j * rng.normal(size=3)
        phi0 = 0.813
        n = int(600 * 2 * np.pi / (W * DT))
        tau = taus(n)
        _, ref = run_filter(synthesize_series(coef, tau), 0.0, W, DT, 3, W / 10)
        _, rot = run_filter(synthesize_series(coef, tau - phi0), 0.0, W, DT,
                            3, W / 10)
        h = np.arange(1, 4)
        np.testing.assert_allclose(rot[1:], ref[1:] * np.exp(-1j * h * phi0),
                                   atol=1e-6)

    def test_rejects_nonfinite_sample(self):
        f = AdaptiveFilter(2, 5.0)
        with pytest.raises(ValueError):
            f.step(np.nan, 0.0, DT)

    def test_warns_underresolved(self):
        f = AdaptiveFilter(2, 5.0)
        with pytest.warns(RuntimeWarning):
            f.step(1.0, 0.0, 0.05)


class TestFluctuationMetric:
    def test_noiseless_steady_is_zero(self):
        coef = np.array([0.0, 1.0, 0.2 + 0.1j, 0.05], dtype=complex)
        n = int(200 * 2 * np.pi / (W * DT))
        tau = taus(n)
        hist, _ = run_filter(synthesize_series(coef, tau), 0.0, W, DT,
                             3, W / 10, stride=10)
        metric = fluctuation_metric(hist[-len(hist) // 4:], W, 10 * DT)
        assert np.all(metric[1:] < 1e-6)

    def test_monotone_in_cutoff_under_noise(self):
        # white noise on a unit sinusoid: fluctuations grow with the
        # cutoff; halving the cutoff never increases them
        cutoffs = [W / 40, W / 20, W / 10]
        n = int(300 * 2 * np.pi / (W * DT))
        tau = taus(n)
        clean = np.cos(tau)
        medians = []
        for cutoff in cutoffs:
            vals = []
            for seed in range(10):
                rng = np.random.default_rng(seed)
                sig = clean + 0.05 * rng.standard_normal(n)
                hist, _ = run_filter(sig, 0.0, W, DT, 3, cutoff, stride=10)
                m = fluctuation_metric(hist[-len(hist) // 3:], W, 10 * DT)
                vals.append(float(np.max(m[1:])))
            medians.append(np.median(vals))
        assert medians[0] <= medians[1] <= medians[2]

    def test_preconditions(self):
        with pytest.raises(ValueError):
            fluctuation_metric(np.zeros((0, 3)), W, DT)
        with pytest.raises(ValueError):
            fluctuation_metric(np.ones((10, 3), dtype=complex), W, DT)
