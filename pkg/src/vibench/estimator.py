"""Steady-flow Fourier-coefficient estimation (time-continuous LMS filter).

Harmonic spectra follow the convention

    f(tau) = F[0] + Re sum_{h=1..H} F[h] * exp(i h tau)

and are stored as complex arrays indexed ``0..H`` with a real entry at
index 0.  The filter tracks the coefficients of a scalar signal whose
phase ``tau`` is supplied externally; in period average it behaves as a
first-order low-pass on each coefficient with cutoff ``cutoff`` (rad/s).
The DC channel uses gain ``cutoff`` instead of ``2*cutoff`` so that a
constant input has the exact fixed point ``F[0] = const``.
"""

import warnings

import numpy as np

from ._engine import core as _core

__all__ = [
    "AdaptiveFilter",
    "synthesize_series",
    "run_filter",
    "fluctuation_metric",
]


def synthesize_series(coeffs, tau):
    """Evaluate the harmonic series with coefficients ``coeffs`` at phase
    ``tau`` (scalar or array)."""
    coeffs = np.asarray(coeffs)
    tau = np.asarray(tau, dtype=float)
    h = np.arange(1, coeffs.size)
    osc = np.exp(1j * np.multiply.outer(tau, h))
    return coeffs[0].real + (osc * coeffs[1:]).real.sum(axis=-1)


class AdaptiveFilter:
    """Recursive Fourier-coefficient tracker.

    Parameters
    ----------
    order : int
        Highest tracked harmonic H (>= 1).
    cutoff : float
        Low-pass cutoff in rad/s (> 0).
    """

    def __init__(self, order, cutoff):
        if order < 1:
            raise ValueError("filter order must be >= 1")
        if cutoff <= 0.0:
            raise ValueError("cutoff must be positive")
        self.order = int(order)
        self.cutoff = float(cutoff)
        self.coeffs = np.zeros(self.order + 1, dtype=complex)
        self._warned_dt = False

    def spectrum(self):
        """Immutable snapshot of the current coefficient estimates."""
        out = self.coeffs.copy()
        out.flags.writeable = False
        return out

    def step(self, sample, tau, dt):
        """Advance the estimate by one explicit-Euler step.

        ``sample`` is the measured signal value at phase ``tau``;
        ``dt`` is the sample interval in seconds.
        """
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        if not np.isfinite(sample):
            raise ValueError("sample is not finite")
        if dt * self.cutoff > 0.1 and not self._warned_dt:
            warnings.warn("dt*cutoff > 0.1: adaptive filter is under-resolved",
                          RuntimeWarning, stacklevel=2)
            self._warned_dt = True
        c = self.coeffs
        rot = complex(np.cos(tau), np.sin(tau))
        est = c[0].real
        e_h = rot
        for h in range(1, self.order + 1):
            est += (c[h] * e_h).real
            e_h *= rot
        err = sample - est
        c[0] += dt * self.cutoff * err
        c[0] = complex(c[0].real, 0.0)
        gain = 2.0 * self.cutoff * dt * err
        e_h = rot.conjugate()
        for h in range(1, self.order + 1):
            c[h] += gain * e_h
            e_h *= rot.conjugate()


def run_filter(samples, tau0, omega, dt, order, cutoff, coeffs0=None, stride=1):
    """Apply the adaptive filter to a recorded signal at constant frequency.

    Returns the complex coefficient history, shape ``(ceil(n/stride), order+1)``,
    holding the estimates after each ``stride``-th update.
    """
    samples = np.ascontiguousarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("empty signal")
    if coeffs0 is None:
        coeffs0 = np.zeros(order + 1, dtype=complex)
    return _core.filter_history(samples, float(tau0), float(omega), float(dt),
                                float(cutoff), int(order),
                                np.asarray(coeffs0, dtype=complex).copy(),
                                int(stride))


def fluctuation_metric(history, omega, dt):
    """Per-harmonic fluctuation of estimates over an observation window.

    For each harmonic, the maximum deviation of ``|F_h|`` from its window
    mean, normalized by the window mean of ``|F_1|``.  ``history`` is a
    coefficient-history array ``(n, order+1)`` sampled every ``dt`` seconds
    while the excitation ran at frequency ``omega``.  The window must
    cover at least five fundamental periods.
    """
    history = np.asarray(history)
    if history.size == 0:
        raise ValueError("empty history")
    duration = history.shape[0] * dt
    if duration < 5.0 * 2.0 * np.pi / omega:
        raise ValueError("window must cover at least 5 fundamental periods")
    mags = np.abs(history)
    means = mags.mean(axis=0)
    ref = means[1]
    if ref == 0.0:
        raise ValueError("fundamental estimate is zero; metric undefined")
    return np.max(np.abs(mags - means), axis=0) / ref
