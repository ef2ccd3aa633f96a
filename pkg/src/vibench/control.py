"""Command-signal synthesis: fundamental level control and per-harmonic
PI harmonization.

The command voltage is

    u(tau) = Re{U1 exp(i tau)} + sum_{h in H} Re{U_h exp(i h tau)}

where ``U1`` is set by an integral level controller (phase pinned to 0,
frequency imposed externally) and each higher-harmonic coefficient
``U_h`` by a PI controller driven by the error ``-F_h`` so that the
applied excitation becomes purely sinusoidal.
"""

import numpy as np

__all__ = ["Harmonizer", "FundamentalController", "synthesize_command"]


class Harmonizer:
    """Per-harmonic PI controller bank.

    Parameters
    ----------
    harmonics : iterable of int
        Controlled harmonic indices, each >= 2.
    k_p, k_i : float
        Proportional and integral gain, shared by all harmonics
        (per-harmonic gains can be emulated with several instances).
    order : int, optional
        Size of the coefficient arrays; defaults to ``max(harmonics)``.
    """

    def __init__(self, harmonics, k_p, k_i, order=None):
        self.harmonics = tuple(sorted(set(int(h) for h in harmonics)))
        if self.harmonics and self.harmonics[0] < 2:
            raise ValueError("harmonizer acts on harmonics >= 2")
        if not np.isfinite(k_p) or not np.isfinite(k_i):
            raise ValueError("gains must be finite")
        if k_i < 0.0:
            raise ValueError("integral gain must be nonnegative")
        self.k_p = float(k_p)
        self.k_i = float(k_i)
        self.order = int(order if order is not None
                         else (max(self.harmonics) if self.harmonics else 1))
        if self.harmonics and self.order < max(self.harmonics):
            raise ValueError("order must cover the controlled harmonics")
        self.integrator = np.zeros(self.order + 1, dtype=complex)

    def step(self, spectrum, dt, freeze=False):
        """Advance the integrators and return the voltage coefficients.

        ``spectrum`` is a coefficient estimate covering at least the
        controlled harmonics.  With ``freeze=True`` the integrators are
        held (anti-windup) while the proportional path stays live.
        Returns a complex array indexed ``0..order`` with zeros outside
        the controlled set.
        """
        spectrum = np.asarray(spectrum)
        if spectrum.size - 1 < (max(self.harmonics) if self.harmonics else 0):
            raise ValueError("spectrum order is below the controlled harmonics")
        out = np.zeros(self.order + 1, dtype=complex)
        for h in self.harmonics:
            err = -spectrum[h]
            if not freeze:
                self.integrator[h] += dt * err
            out[h] = self.k_p * err + self.k_i * self.integrator[h]
        return out


class FundamentalController:
    """Integral controller holding the fundamental excitation level.

    Drives ``|F_1|`` of the applied excitation to ``target`` by
    integrating the level error into the (real, phase-0) fundamental
    voltage coefficient, clamped to ``[0, voltage_limit]``.
    """

    def __init__(self, target, gain, voltage_limit=10.0):
        if target <= 0.0:
            raise ValueError("target level must be positive")
        self.target = float(target)
        self.gain = float(gain)
        self.voltage_limit = float(voltage_limit)
        self.u1 = 0.0
        self.saturated = False

    def step(self, spectrum, dt):
        """Advance the level integrator; returns the new ``U1``."""
        level = abs(spectrum[1])
        if not np.isfinite(level):
            raise ValueError("fundamental estimate is not finite")
        self.u1 += self.gain * (self.target - level) * dt
        self.saturated = False
        if self.u1 > self.voltage_limit:
            self.u1 = self.voltage_limit
            self.saturated = True
        elif self.u1 < 0.0:
            self.u1 = 0.0
        return self.u1


def synthesize_command(u1, higher, tau):
    """Evaluate the command voltage at phase ``tau``.

    ``u1`` is the fundamental coefficient (real or complex), ``higher``
    a complex coefficient array indexed by harmonic (entries below 2 are
    ignored).
    """
    u = (u1 * np.exp(1j * tau)).real
    higher = np.asarray(higher)
    for h in range(2, higher.size):
        c = higher[h]
        if c != 0.0:
            u += (c * np.exp(1j * h * tau)).real
    return float(u)
