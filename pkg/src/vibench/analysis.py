"""Closed-form frequency-domain analysis of the harmonization loop.

Provides the structural and exciter dynamic stiffnesses, the
exciter-structure interaction ratio, the PI-loop stability margin, the
dimensionless exciter-mode mass ratios and a drive-point screening
report.  All functions are pure and cheap; grids can be evaluated
point-wise in parallel.
"""

import warnings

import numpy as np

__all__ = [
    "structural_stiffness",
    "exciter_stiffness",
    "interaction_ratio",
    "stability_margin",
    "mass_ratio",
    "fixed_point_voltage",
    "max_harmonic_order",
    "check_harmonic_order",
    "StabilityScan",
    "drive_point_report",
]


def structural_stiffness(structure, mode, omega):
    """Dynamic stiffness of one mode: ``-w^2 + 2 D wn i w + wn^2``."""
    wn = structure.omega[mode]
    D = structure.damping[mode]
    omega = np.asarray(omega, dtype=float)
    return -omega ** 2 + 2j * D * wn * omega + wn ** 2


def exciter_stiffness(exciter, omega):
    """Dynamic stiffness of the exciter armature suspension."""
    omega = np.asarray(omega, dtype=float)
    return -omega ** 2 + 2j * exciter.damping * exciter.omega * omega \
        + exciter.omega ** 2


def mass_ratio(coupling, exciter, mode):
    """Dimensionless exciter-mode coupling.

    Force drive: ``m_ex * phi_ex^2``;  base drive: ``gamma^2 / m_ex``.
    """
    if coupling.kind == "force":
        return exciter.moving_mass * coupling.phi_ex[mode] ** 2
    return coupling.gamma[mode] ** 2 / exciter.moving_mass


def interaction_ratio(omega, structure, exciter, coupling):
    """Exciter-structure interaction ratio, summed over all modes.

    ``Z(w) = sum_l mu_l * Se(w) / Sl(w)`` where ``mu_l`` is the mass
    ratio of mode ``l``.  Finite for all ``w`` since damping is positive.
    """
    se = exciter_stiffness(exciter, omega)
    total = np.zeros_like(np.asarray(omega, dtype=float), dtype=complex)
    for l in range(structure.n_modes):
        mu = mass_ratio(coupling, exciter, l)
        total = total + mu * se / structural_stiffness(structure, l, omega)
    return total


def stability_margin(omega, k_p, k_i, structure, exciter, coupling):
    """Signed stability indicator of the per-harmonic PI loop.

    ``Re{ k_i / (1 + k_p G/R + Z(w)) }`` evaluated at the harmonic
    frequency ``omega``; a positive value predicts an asymptotically
    stable harmonization fixed point there.
    """
    z = interaction_ratio(omega, structure, exciter, coupling)
    return (k_i / (1.0 + k_p * exciter.voltage_gain + z)).real


def fixed_point_voltage(disturbance, exciter):
    """Settled harmonizer voltage cancelling a disturbance coefficient:
    ``U = -D * R / G``."""
    return -np.asarray(disturbance) * exciter.coil_resistance \
        / exciter.force_constant


def max_harmonic_order(sample_rate_hz, omega_max):
    """Aliasing bound on the truncation order: ``H < 2 pi nu_s / w_max``."""
    return 2.0 * np.pi * sample_rate_hz / omega_max


def check_harmonic_order(order, sample_rate_hz, omega_max):
    """Validate a truncation order against the sampling rate.

    Raises ``ValueError`` above the aliasing bound and warns above the
    (stricter) Nyquist level at half the bound.
    """
    bound = max_harmonic_order(sample_rate_hz, omega_max)
    if order >= bound:
        raise ValueError(
            f"truncation order {order} violates the aliasing bound {bound:.1f}")
    if order > bound / 2.0:
        warnings.warn(
            f"truncation order {order} exceeds the Nyquist harmonic count "
            f"{bound / 2.0:.1f}", RuntimeWarning, stacklevel=2)
    return bound


class StabilityScan:
    """Stability-margin curve of one drive-point candidate."""

    def __init__(self, name, grid, margin, k_p, k_i, ratios):
        self.name = name
        self.grid = np.asarray(grid, dtype=float)
        self.margin = np.asarray(margin, dtype=float)
        self.k_p = k_p
        self.k_i = k_i
        self.ratios = np.asarray(ratios, dtype=float)

    @property
    def sign_change(self):
        return bool(np.any(np.diff(np.sign(self.margin)) != 0))

    def negative_crossings(self):
        """Frequencies where the margin crosses from + to - (midpoints)."""
        m = self.margin
        idx = np.where((m[:-1] > 0) & (m[1:] <= 0))[0]
        return 0.5 * (self.grid[idx] + self.grid[idx + 1])

    @property
    def admissible(self):
        return not self.sign_change and bool(np.all(self.margin > 0))


def drive_point_report(structure, exciter, candidates, grid, k_p_values,
                       k_i=1.0):
    """Screen drive-point candidates for harmonization stability.

    Parameters
    ----------
    candidates : iterable of str
        Location names to test (rows of the mode-shape table).
    grid : array_like
        Harmonic evaluation frequencies in rad/s.
    k_p_values : iterable of float
        Proportional gains to scan (one StabilityScan per pair).

    Returns
    -------
    dict with per-candidate scans, mass-ratio table and verdicts.
    """
    from .model import ForceDrive

    candidates = list(candidates)
    if not candidates:
        raise ValueError("at least one drive-point candidate is required")
    grid = np.asarray(grid, dtype=float)
    scans, verdicts, mass_ratios = [], {}, {}
    for name in candidates:
        coupling = ForceDrive(structure.row(name))
        mass_ratios[name] = [mass_ratio(coupling, exciter, l)
                             for l in range(structure.n_modes)]
        ok = True
        for k_p in k_p_values:
            margin = stability_margin(grid, k_p, k_i, structure, exciter,
                                      coupling)
            scan = StabilityScan(name, grid, margin, k_p, k_i, mass_ratios[name])
            scans.append(scan)
            ok = ok and scan.admissible
        verdicts[name] = ok
    return {"scans": scans, "mass_ratios": mass_ratios, "verdicts": verdicts}
