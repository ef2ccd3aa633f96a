"""Time-domain plant: modal structure, electrodynamic exciter and coupling.

The structure is described by mass-normalized modal coordinates ``eta``
with diagonal damping and stiffness.  A cubic spring attached at one
location couples the modes nonlinearly.  The exciter injects energy via
a voltage command, either as a force at a drive point (rigid stinger) or
as an imposed base motion.  The algebraic loop between applied force and
attachment acceleration is resolved in closed form, so the plant exposes
an explicit first-order state derivative suitable for any ODE solver.

State layout
------------
force drive : ``[eta_1..eta_M, deta_1..deta_M]``
base drive  : ``[eta_1..eta_M, deta_1..deta_M, q_b, dq_b]``
"""

import numpy as np

__all__ = [
    "ModalStructure",
    "Exciter",
    "CubicSpring",
    "ForceDrive",
    "BaseDrive",
    "Plant",
    "BlowupError",
]


class BlowupError(RuntimeError):
    """Raised when a simulation state stops being finite."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class ModalStructure:
    """Linear modal model of the structure under test.

    Parameters
    ----------
    omega : (M,) array_like
        Modal angular frequencies in rad/s, all positive.
    damping : (M,) array_like
        Modal damping ratios, each in (0, 1).
    mode_shapes : dict[str, array_like]
        Mass-normalized deflection shape rows in 1/sqrt(kg), keyed by
        location name.  Each row has one entry per mode.
    """

    def __init__(self, omega, damping, mode_shapes):
        self.omega = np.atleast_1d(np.asarray(omega, dtype=float))
        self.damping = np.atleast_1d(np.asarray(damping, dtype=float))
        self.mode_shapes = {
            name: np.atleast_1d(np.asarray(row, dtype=float))
            for name, row in mode_shapes.items()
        }
        if self.omega.size < 1:
            raise ValueError("at least one mode is required")
        if self.omega.shape != self.damping.shape:
            raise ValueError("omega and damping must have matching length")
        if np.any(self.omega <= 0.0):
            raise ValueError("modal frequencies must be positive")
        if np.any((self.damping <= 0.0) | (self.damping >= 1.0)):
            raise ValueError("damping ratios must lie in (0, 1)")
        for name, row in self.mode_shapes.items():
            if row.shape != self.omega.shape:
                raise ValueError(f"mode-shape row {name!r} has wrong length")
            if not np.all(np.isfinite(row)):
                raise ValueError(f"mode-shape row {name!r} is not finite")

    @property
    def n_modes(self):
        return self.omega.size

    def row(self, location):
        """Mode-shape row for a named location."""
        try:
            return self.mode_shapes[location]
        except KeyError:
            raise KeyError(
                f"unknown location {location!r}; have {sorted(self.mode_shapes)}"
            ) from None


class Exciter:
    """Electrodynamic exciter (armature + coil) parameters.

    The ``distortion`` term of the exciter equation is a documented hook
    and is identically zero in this implementation.
    """

    def __init__(self, moving_mass, coil_resistance, force_constant,
                 omega, damping):
        self.moving_mass = float(moving_mass)
        self.coil_resistance = float(coil_resistance)
        self.force_constant = float(force_constant)
        self.omega = float(omega)
        self.damping = float(damping)
        for name in ("moving_mass", "coil_resistance", "force_constant",
                     "omega", "damping"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"exciter {name} must be positive")

    @property
    def voltage_gain(self):
        """Force per volt of the coil, G/R in N/V."""
        return self.force_constant / self.coil_resistance


class CubicSpring:
    """Cubic spring attached at a single location.

    ``phi_nl`` is the mode-shape row at the attachment point; the modal
    force is ``phi_nl * k_nl * (phi_nl @ eta)**3``.
    """

    def __init__(self, k_nl, phi_nl):
        self.k_nl = float(k_nl)
        self.phi_nl = np.atleast_1d(np.asarray(phi_nl, dtype=float))
        if self.k_nl < 0.0:
            raise ValueError("cubic stiffness must be nonnegative")


class ForceDrive:
    """Force excitation through a rigid stinger at a drive point."""

    kind = "force"

    def __init__(self, phi_ex):
        self.phi_ex = np.atleast_1d(np.asarray(phi_ex, dtype=float))


class BaseDrive:
    """Base excitation; ``gamma`` holds the modal participation factors
    of the base motion (b' M phi_l, in sqrt(kg))."""

    kind = "base"

    def __init__(self, gamma):
        self.gamma = np.atleast_1d(np.asarray(gamma, dtype=float))


class Plant:
    """Coupled structure/exciter plant with voltage input.

    Parameters
    ----------
    structure : ModalStructure
    spring : CubicSpring
    exciter : Exciter
    coupling : ForceDrive or BaseDrive
    """

    def __init__(self, structure, spring, exciter, coupling):
        self.structure = structure
        self.spring = spring
        self.exciter = exciter
        self.coupling = coupling
        M = structure.n_modes
        if spring.phi_nl.size != M:
            raise ValueError("cubic-spring shape row length must equal mode count")
        if coupling.kind == "force":
            if coupling.phi_ex.size != M:
                raise ValueError("drive-point row length must equal mode count")
            # algebraic-loop denominator 1 + m_ex * sum(phi_ex**2)
            self._den = 1.0 + exciter.moving_mass * float(
                np.dot(coupling.phi_ex, coupling.phi_ex))
        else:
            if coupling.gamma.size != M:
                raise ValueError("participation vector length must equal mode count")
            den = exciter.moving_mass - float(np.dot(coupling.gamma, coupling.gamma))
            if den <= 0.0:
                raise ValueError(
                    "base-drive inertia balance requires moving_mass > sum(gamma**2)")
            self._den = den

    @property
    def n_modes(self):
        return self.structure.n_modes

    @property
    def state_size(self):
        return 2 * self.n_modes + (2 if self.coupling.kind == "base" else 0)

    def initial_state(self):
        return np.zeros(self.state_size)

    # -- elemental forces ------------------------------------------------

    def nonlinear_modal_force(self, eta):
        """Modal force vector of the cubic spring for deflection ``eta``."""
        eta = np.asarray(eta, dtype=float)
        if eta.shape != (self.n_modes,):
            raise ValueError("eta must have one entry per mode")
        q = float(np.dot(self.spring.phi_nl, eta))
        return self.spring.phi_nl * (self.spring.k_nl * q ** 3)

    def _modal_acc_free(self, eta, deta):
        """Modal acceleration without any excitation contribution."""
        s = self.structure
        d = self.nonlinear_modal_force(eta)
        return -2.0 * s.damping * s.omega * deta - s.omega ** 2 * eta - d

    def applied_force(self, u, state):
        """Force applied at the drive point for voltage ``u`` (force drive).

        Resolves the force/attachment-acceleration algebraic loop exactly:
        substituting the returned value back into both the structure and
        the exciter equation leaves zero residual.
        """
        if self.coupling.kind != "force":
            raise ValueError("applied_force requires a force-drive plant")
        M = self.n_modes
        state = np.asarray(state, dtype=float)
        eta, deta = state[:M], state[M:2 * M]
        ex = self.exciter
        phi = self.coupling.phi_ex
        g = float(np.dot(phi, self._modal_acc_free(eta, deta)))
        q_ex = float(np.dot(phi, eta))
        dq_ex = float(np.dot(phi, deta))
        num = ex.voltage_gain * u - ex.moving_mass * (
            g + 2.0 * ex.damping * ex.omega * dq_ex + ex.omega ** 2 * q_ex)
        return num / self._den

    def base_acceleration(self, u, state):
        """Base acceleration for voltage ``u`` (base drive)."""
        if self.coupling.kind != "base":
            raise ValueError("base_acceleration requires a base-drive plant")
        M = self.n_modes
        state = np.asarray(state, dtype=float)
        eta, deta = state[:M], state[M:2 * M]
        q_b, dq_b = state[2 * M], state[2 * M + 1]
        ex = self.exciter
        gam = self.coupling.gamma
        a0 = self._modal_acc_free(eta, deta)
        num = (ex.voltage_gain * u
               - ex.moving_mass * (2.0 * ex.damping * ex.omega * dq_b
                                   + ex.omega ** 2 * q_b)
               - float(np.dot(gam, a0)))
        return num / self._den

    def excitation(self, u, state):
        """Scalar applied-excitation sample: force (N) or base acc (m/s^2)."""
        if self.coupling.kind == "force":
            return self.applied_force(u, state)
        return self.base_acceleration(u, state)

    # -- dynamics --------------------------------------------------------

    def state_derivative(self, u, state):
        """First-order state derivative for voltage input ``u``."""
        state = np.asarray(state, dtype=float)
        if not np.all(np.isfinite(state)):
            raise BlowupError("plant state is not finite")
        M = self.n_modes
        eta, deta = state[:M], state[M:2 * M]
        out = np.empty_like(state)
        out[:M] = deta
        if self.coupling.kind == "force":
            f = self.applied_force(u, state)
            out[M:2 * M] = self._modal_acc_free(eta, deta) + self.coupling.phi_ex * f
        else:
            a_b = self.base_acceleration(u, state)
            out[M:2 * M] = self._modal_acc_free(eta, deta) - self.coupling.gamma * a_b
            out[2 * M] = state[2 * M + 1]
            out[2 * M + 1] = a_b
        return out

    def forced_derivative(self, force, state):
        """State derivative with a force imposed directly at the drive
        point, bypassing the exciter (reference-solution forcing)."""
        if self.coupling.kind != "force":
            raise ValueError("imposed forcing requires a force-drive plant")
        state = np.asarray(state, dtype=float)
        if not np.all(np.isfinite(state)):
            raise BlowupError("plant state is not finite")
        M = self.n_modes
        eta, deta = state[:M], state[M:2 * M]
        out = np.empty_like(state)
        out[:M] = deta
        out[M:2 * M] = self._modal_acc_free(eta, deta) + self.coupling.phi_ex * force
        return out

    def observe(self, state, location, kind="displacement", absolute=False):
        """Physical response at a mode-shape row.

        Parameters
        ----------
        kind : {"displacement", "velocity"}
        absolute : bool
            For base drive, add the base motion to the elastic response.
        """
        row = self.structure.row(location)
        state = np.asarray(state, dtype=float)
        M = self.n_modes
        if kind == "displacement":
            value = float(np.dot(row, state[:M]))
            if absolute and self.coupling.kind == "base":
                value += state[2 * M]
        elif kind == "velocity":
            value = float(np.dot(row, state[M:2 * M]))
            if absolute and self.coupling.kind == "base":
                value += state[2 * M + 1]
        else:
            raise ValueError("kind must be 'displacement' or 'velocity'")
        return value

    # -- engine hand-off ---------------------------------------------------

    def pack(self, observe_at=None):
        """Flat parameter dict consumed by the simulation engine."""
        s, ex = self.structure, self.exciter
        obs = (s.row(observe_at) if observe_at is not None
               else np.zeros(self.n_modes))
        drive = (self.coupling.phi_ex if self.coupling.kind == "force"
                 else self.coupling.gamma)
        return {
            "mode": 0 if self.coupling.kind == "force" else 1,
            "n_modes": self.n_modes,
            "w2": (s.omega ** 2).copy(),
            "c2dw": (2.0 * s.damping * s.omega).copy(),
            "drive": drive.astype(float).copy(),
            "phi_nl": self.spring.phi_nl.copy(),
            "k_nl": self.spring.k_nl,
            "m_ex": ex.moving_mass,
            "e2dw": 2.0 * ex.damping * ex.omega,
            "ew2": ex.omega ** 2,
            "g_over_r": ex.voltage_gain,
            "inv_den": 1.0 / self._den,
            "obs": obs.astype(float).copy(),
        }
