"""Ground-truth periodic solutions under ideal mono-harmonic forcing.

Shooting with constant-average-acceleration Newmark integration, Floquet
stability from the monodromy matrix (propagated exactly alongside the
orbit through the linearized scheme), sequential natural-parameter
continuation with step halving, and isolated-branch capture seeded from
virtual-experiment states.
"""

from dataclasses import dataclass, field

import numpy as np

from ._engine import core as _core
from .model import BlowupError

__all__ = [
    "ShootingConfig",
    "ShootingProblem",
    "BranchPoint",
    "Branch",
    "ShootingError",
    "newmark_integrate",
    "shoot",
    "continue_branch",
    "capture_isola",
    "seed_beyond_fold",
]


class ShootingError(RuntimeError):
    """Newton iteration on the periodicity residual failed."""


@dataclass
class ShootingConfig:
    steps_per_period: int = 1000
    tolerance: float = 1e-8      # relative periodicity residual
    max_iterations: int = 25
    stability_band: float = 1e-6
    spectrum_order: int = 7
    newton_tol: float = 1e-11    # per-step Newmark Newton tolerance
    max_newton: int = 20
    newton_step_cap: float = 50.0   # update-norm cap, in residual units

    def __post_init__(self):
        if self.steps_per_period < 100:
            raise ValueError("at least 100 steps per period are required")


@dataclass
class ShootingProblem:
    """Periodic-orbit problem: ``force_amp * cos(omega t + phase0)``
    imposed at the drive point, exciter bypassed."""

    plant: object
    force_amp: float
    omega: float
    observe_at: str
    phase0: float = 0.0
    guess: np.ndarray | None = None

    def __post_init__(self):
        if self.force_amp <= 0.0:
            raise ValueError("forcing amplitude must be positive")
        if self.omega <= 0.0:
            raise ValueError("period must be positive")
        if self.plant.coupling.kind != "force":
            raise ValueError("shooting requires a force-drive plant")


@dataclass
class BranchPoint:
    """Converged periodic orbit with stability information."""

    omega: float
    x0: np.ndarray
    response: np.ndarray          # complex spectrum at the observation row
    force_amp: float
    phase0: float
    floquet: np.ndarray
    stable: bool
    marginal: bool
    residual: float
    iterations: int

    @property
    def h1(self):
        return abs(self.response[1])

    @property
    def h3(self):
        return abs(self.response[3]) if self.response.size > 3 else 0.0


@dataclass
class Branch:
    """Ordered branch segment plus termination diagnostics."""

    points: list = field(default_factory=list)
    termination: str = "grid_end"       # or "turning_point"
    omega_last: float = float("nan")
    omega_failed: float = float("nan")

    def omegas(self):
        return np.array([p.omega for p in self.points])

    def amplitudes(self, h=1):
        return np.array([abs(p.response[h]) for p in self.points])


def _plant_arrays(plant):
    s = plant.structure
    return ((s.omega ** 2).astype(float), (2.0 * s.damping * s.omega),
            plant.spring.phi_nl.astype(float), plant.spring.k_nl,
            plant.coupling.phi_ex.astype(float))


def newmark_integrate(plant, force_amp, omega, x0, periods=1,
                      steps_per_period=1000, phase0=0.0,
                      want_monodromy=False, want_traj=False,
                      newton_tol=1e-11, max_newton=20):
    """Newmark (gamma=1/2, beta=1/4) integration of the forced plant over
    whole periods; per-step Newton resolves the cubic term.

    Returns the engine result dict: end state, optional trajectory at the
    step rate and optional monodromy matrix.
    """
    w2, c2dw, phi_nl, k_nl, phi_f = _plant_arrays(plant)
    res = _core.newmark_orbit(w2, c2dw, phi_nl, k_nl, phi_f, float(omega),
                              float(force_amp), float(phase0),
                              np.asarray(x0, dtype=float),
                              int(steps_per_period), int(periods),
                              bool(want_monodromy), bool(want_traj),
                              float(newton_tol), int(max_newton))
    if res["status"] != 0:
        raise BlowupError(
            f"Newmark per-step Newton failed at step {res['i_fail']}")
    return res


def _orbit_spectrum(plant, traj, observe_row, phase0, order):
    """Exact Fourier coefficients of the observation over one period.

    Also guards against the spurious sample-rate orbits of the discrete
    map: a genuine orbit concentrates its power in the low harmonics.
    """
    M = plant.n_modes
    q = traj[:-1, :M] @ observe_row          # drop the duplicated endpoint
    n = q.size
    spec = np.fft.rfft(q)
    out = np.zeros(order + 1, dtype=complex)
    out[0] = spec[0].real / n
    h = np.arange(1, min(order, n // 2 - 1) + 1)
    out[h] = (2.0 / n) * spec[h] * np.exp(-1j * h * phase0)
    power = float(np.mean(q ** 2))
    captured = abs(out[0]) ** 2 + 0.5 * float(np.sum(np.abs(out[1:]) ** 2))
    if power > 1e-20 and captured < 0.5 * power:
        raise ShootingError(
            "orbit power is not captured by the retained harmonics "
            "(spurious discrete-map solution)")
    return out


def shoot(problem, config=None):
    """Newton iteration on the periodicity residual ``x(T) - x(0)``.

    The Jacobian is the monodromy matrix minus identity, with the
    monodromy obtained from the linearized Newmark scheme along the
    orbit, so it is consistent with the numerical time-T map.
    """
    config = config or ShootingConfig()
    plant = problem.plant
    x = (np.array(problem.guess, dtype=float) if problem.guess is not None
         else plant.initial_state())
    n_dim = x.size
    scale = max(1e-9, float(np.linalg.norm(x)))
    residual = np.inf
    reach = None   # divergence guard, set from the first residual
    for it in range(1, config.max_iterations + 1):
        res = newmark_integrate(
            plant, problem.force_amp, problem.omega, x,
            steps_per_period=config.steps_per_period, phase0=problem.phase0,
            want_monodromy=True, newton_tol=config.newton_tol,
            max_newton=config.max_newton)
        r = res["x_end"] - x
        mono = res["monodromy"]
        r_norm = float(np.linalg.norm(r))
        if reach is None:
            reach = 1e5 * max(1e-3, scale + r_norm)
        residual = r_norm / scale
        if residual < config.tolerance:
            break
        try:
            dx = np.linalg.solve(mono - np.eye(n_dim), -r)
        except np.linalg.LinAlgError as exc:
            raise ShootingError(f"singular shooting Jacobian: {exc}") from exc
        if not np.all(np.isfinite(dx)):
            raise ShootingError("shooting update is not finite")
        # cap the update so Newton cannot tunnel into the spurious
        # high-frequency orbits of the discrete map
        cap = config.newton_step_cap * max(scale, r_norm)
        dx_norm = float(np.linalg.norm(dx))
        if dx_norm > cap:
            dx *= cap / dx_norm
        x = x + dx
        scale = max(1e-9, float(np.linalg.norm(x)))
        if scale > reach:
            raise ShootingError("shooting iterate diverged")
    else:
        raise ShootingError(
            f"no convergence in {config.max_iterations} iterations "
            f"(residual {residual:.2e})")

    res = newmark_integrate(
        plant, problem.force_amp, problem.omega, x,
        steps_per_period=config.steps_per_period, phase0=problem.phase0,
        want_monodromy=True, want_traj=True, newton_tol=config.newton_tol,
        max_newton=config.max_newton)
    floquet = np.linalg.eigvals(res["monodromy"])
    radii = np.abs(floquet)
    band = config.stability_band
    stable = bool(np.all(radii < 1.0 - band))
    marginal = bool(np.any((radii >= 1.0 - band) & (radii <= 1.0 + band)))
    spectrum = _orbit_spectrum(plant, res["traj"],
                               plant.structure.row(problem.observe_at),
                               problem.phase0, config.spectrum_order)
    return BranchPoint(
        omega=problem.omega, x0=x, response=spectrum,
        force_amp=problem.force_amp, phase0=problem.phase0,
        floquet=floquet, stable=stable, marginal=marginal,
        residual=residual, iterations=it)


def _advance(plant, observe_at, current, omega_target, config, max_halvings,
             branch):
    """March from ``current`` toward ``omega_target`` with step halving."""
    halvings = 0
    while not np.isclose(current.omega, omega_target):
        omega_try = omega_target
        step = omega_try - current.omega
        while True:
            problem = ShootingProblem(
                plant=plant, force_amp=current.force_amp, omega=omega_try,
                observe_at=observe_at, phase0=current.phase0,
                guess=current.x0)
            try:
                point = shoot(problem, config)
            except (ShootingError, BlowupError):
                halvings += 1
                if halvings > max_halvings:
                    return omega_try, current, False
                step *= 0.5
                omega_try = current.omega + step
                continue
            branch.points.append(point)
            current = point
            break
    return current.omega, current, True


def continue_branch(plant, observe_at, start, omega_grid, config=None,
                    max_halvings=8):
    """Sequential continuation from a converged point over a frequency grid.

    The previous solution seeds each new solve; on failure the frequency
    step is halved up to ``max_halvings`` times.  Exhausted halvings mean
    a turning point: the branch is returned partial with the fold
    bracketed by ``omega_last`` and ``omega_failed``.
    """
    config = config or ShootingConfig()
    if not isinstance(start, BranchPoint):
        raise TypeError("continuation starts from a converged BranchPoint")
    branch = Branch(points=[start], omega_last=start.omega)
    current = start
    for omega_target in np.asarray(omega_grid, dtype=float):
        if np.isclose(omega_target, current.omega):
            continue
        omega_reached, current, ok = _advance(
            plant, observe_at, current, float(omega_target), config,
            max_halvings, branch)
        if not ok:
            branch.termination = "turning_point"
            branch.omega_last = current.omega
            branch.omega_failed = omega_reached
            return branch
    branch.termination = "grid_end"
    branch.omega_last = current.omega
    return branch


def make_branch_start(plant, observe_at, force_amp, omega, config=None,
                      guess=None, phase0=0.0):
    """Converge the first point of a branch (zero state by default)."""
    problem = ShootingProblem(plant=plant, force_amp=force_amp, omega=omega,
                              observe_at=observe_at, phase0=phase0,
                              guess=guess)
    return shoot(problem, config)


def trace_branch(plant, observe_at, force_amp, omega_grid, config=None,
                 guess=None, phase0=0.0, max_halvings=8):
    """Convenience wrapper: converge at ``omega_grid[0]`` then continue."""
    omega_grid = np.asarray(omega_grid, dtype=float)
    start = make_branch_start(plant, observe_at, force_amp, omega_grid[0],
                              config, guess=guess, phase0=phase0)
    return continue_branch(plant, observe_at, start, omega_grid[1:], config,
                           max_halvings)


def capture_isola(plant, observe_at, force_amp, seed_state, seed_omega,
                  seed_phase, omega_min, omega_max, n_points=40,
                  config=None, low_branch_classifier_tol=0.02,
                  blend_factors=(0.5, 0.35, 0.65)):
    """Assemble an isolated branch from a virtual-experiment hand-off state.

    Shoots from the handed-off state, continues in both directions until
    the turning points, then tries to close the isola by converging the
    coexisting lower (unstable) orbits from blended initial guesses.

    Returns a dict with ``upper`` and ``lower`` Branch objects (lower may
    be empty), a ``closed`` flag, and the seed point.  Raises
    ShootingError when the seed does not converge; a seed that lands on
    the ordinary branch is reported via ``on_isola=False``.
    """
    config = config or ShootingConfig()
    seed_point = make_branch_start(plant, observe_at, force_amp, seed_omega,
                                   config, guess=seed_state, phase0=seed_phase)
    # classify against the ordinary (low) branch at the same frequency
    low_point = make_branch_start(plant, observe_at, force_amp, seed_omega,
                                  config, phase0=seed_phase)
    rel = abs(seed_point.h1 - low_point.h1) / max(low_point.h1, 1e-30)
    if rel < low_branch_classifier_tol:
        return {"on_isola": False, "seed": seed_point, "upper": Branch(),
                "lower": Branch(), "closed": False}

    grid_up = np.linspace(seed_omega, omega_max, n_points)
    grid_dn = np.linspace(seed_omega, omega_min, n_points)
    upper_fwd = continue_branch(plant, observe_at, seed_point, grid_up[1:],
                                config)
    upper_bwd = continue_branch(plant, observe_at, seed_point, grid_dn[1:],
                                config)
    upper = Branch(points=list(reversed(upper_bwd.points))
                   + upper_fwd.points[1:])
    upper.termination = "closed_folds"
    om_lo = upper_bwd.points[-1].omega
    om_hi = upper_fwd.points[-1].omega
    span = om_hi - om_lo

    lower = Branch()
    closed = False
    cand = seed_beyond_fold(plant, observe_at, upper_bwd, config)
    if cand is None:
        # fall back to blending upper and ordinary-branch states mid-isola
        om_mid = 0.5 * (om_lo + om_hi)
        up_mid = min(upper.points, key=lambda p: abs(p.omega - om_mid))
        low_mid = make_branch_start(plant, observe_at, force_amp,
                                    up_mid.omega, config, phase0=seed_phase)
        for lam in blend_factors:
            guess = lam * up_mid.x0 + (1.0 - lam) * low_mid.x0
            try:
                c = make_branch_start(plant, observe_at, force_amp,
                                      up_mid.omega, config, guess=guess,
                                      phase0=seed_phase)
            except (ShootingError, BlowupError):
                continue
            d_up = abs(c.h1 - up_mid.h1) / max(up_mid.h1, 1e-30)
            d_lo = abs(c.h1 - low_mid.h1) / max(low_mid.h1, 1e-30)
            if (d_up > low_branch_classifier_tol
                    and d_lo > low_branch_classifier_tol):
                cand = c
                break
    if cand is not None:
        g_up = np.linspace(cand.omega, om_hi, max(2, n_points))
        g_dn = np.linspace(cand.omega, om_lo, max(2, n_points // 4))
        lo_fwd = continue_branch(plant, observe_at, cand, g_up[1:], config)
        lo_bwd = continue_branch(plant, observe_at, cand, g_dn[1:], config)
        lower = Branch(points=list(reversed(lo_bwd.points))
                       + lo_fwd.points[1:])
        # closed when the lower part reaches the far fold
        closed = abs(lo_fwd.points[-1].omega - om_hi) <= 0.02 * span
    return {"on_isola": True, "seed": seed_point, "upper": upper,
            "lower": lower, "closed": closed,
            "omega_range": (om_lo, om_hi)}


def seed_beyond_fold(plant, observe_at, branch_to_fold, config=None):
    """Converge one point on the far sheet of a fold.

    Extrapolates the last continuation secant through the turning point
    and solves slightly back on the traversed side, where both sheets
    coexist; returns an (unstable) far-sheet point or None.
    """
    config = config or ShootingConfig()
    if (branch_to_fold.termination != "turning_point"
            or len(branch_to_fold.points) < 2):
        return None
    p0 = branch_to_fold.points[-1]
    p1 = branch_to_fold.points[-2]
    guess = p0.x0 + (p0.x0 - p1.x0)
    side = 1.0 if p1.omega > p0.omega else -1.0
    for back in (1e-3, 3e-3):
        om_try = p0.omega * (1.0 + side * back)
        try:
            cand = make_branch_start(plant, observe_at, p0.force_amp, om_try,
                                     config, guess=guess, phase0=p0.phase0)
        except (ShootingError, BlowupError):
            continue
        if not cand.stable:
            return cand
    return None
