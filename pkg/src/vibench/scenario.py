"""Scenario and schedule configuration: declarative YAML with explicit
units in key names, validated against the module preconditions at load.

A scenario bundles the plant, estimator, controller, noise and protocol
settings of one virtual test.  ``load_scenario`` accepts a file path or
the name of a shipped scenario (e.g. ``shaw-beam``); ``save_scenario``
round-trips losslessly.
"""

import hashlib
import importlib.resources
from pathlib import Path

import numpy as np
import yaml

from . import model
from .sim import IntegratorConfig, ClosedLoopSession, SteppedSineSchedule, JumpSpec

__all__ = [
    "ScenarioError",
    "Scenario",
    "load_scenario",
    "save_scenario",
    "load_schedule",
    "save_schedule",
    "build_plant",
    "build_session",
    "config_hash",
    "builtin_path",
]


class ScenarioError(ValueError):
    """Invalid scenario or schedule configuration."""


def _require(mapping, key, context):
    try:
        return mapping[key]
    except (KeyError, TypeError):
        raise ScenarioError(f"missing key {key!r} in {context}") from None


class Scenario:
    """Validated scenario; thin typed view over the raw config mapping."""

    def __init__(self, raw):
        self.raw = raw
        try:
            self.name = raw.get("name", "unnamed")
            self.seed = int(raw.get("seed", 0))
            self.plant = build_plant(_require(raw, "plant", "scenario"))
            pl = raw["plant"]
            self.observe_at = _require(pl, "observation_location", "plant")
            est = _require(raw, "estimator", "scenario")
            self.estimator_order = int(_require(est, "truncation_order",
                                                "estimator"))
            cutoff = est.get("cutoff_rad_s")
            self.estimator_cutoff = (float(cutoff) if cutoff is not None
                                     else self.plant.structure.omega[0] / 10.0)
            ctl = _require(raw, "control", "scenario")
            self.target_level = float(_require(ctl, "target_level", "control"))
            self.fundamental_gain = float(
                _require(ctl, "fundamental_gain_V_per_unit_s", "control"))
            self.harmonics = tuple(int(h) for h in ctl.get("harmonics", ()))
            self.k_p = float(ctl.get("proportional_gain_V_per_unit", 0.0))
            self.k_i = float(ctl.get("integral_gain_V_per_unit_s", 0.0))
            self.voltage_limit = float(ctl.get("voltage_limit_V", 10.0))
            self.fundamental_enabled = bool(ctl.get("fundamental_enabled", True))
            self.harmonization_enabled = bool(
                ctl.get("harmonization_enabled", True))
            noise = raw.get("noise", {}) or {}
            self.noise_std = float(noise.get("excitation_std", 0.0))
            dist = (raw.get("disturbance", {}) or {}).get(
                "voltage_harmonics", {}) or {}
            self.disturbance = {int(h): (float(c[0]), float(c[1]))
                                for h, c in dist.items()}
            simc = raw.get("sim", {}) or {}
            self.sample_rate = float(simc.get("sample_rate_Hz", 10000.0))
            self.integrator = IntegratorConfig(
                max_step=float(simc.get("max_step_s", 1e-3)),
                rtol=float(simc.get("rel_tol", 1e-8)),
                atol=float(simc.get("abs_tol", 1e-10)))
            proto = raw.get("protocol", {}) or {}
            self.ramp_periods = float(proto.get("ramp_periods", 10.0))
            self.hold_periods = float(proto.get("hold_periods", 600.0))
            self.window_periods = float(proto.get("window_periods", 300.0))
            self.settle_tol_ratio = float(proto.get("settle_tol_ratio", 0.002))
        except ScenarioError:
            raise
        except (ValueError, TypeError, KeyError) as exc:
            raise ScenarioError(f"invalid scenario: {exc}") from exc
        if self.target_level <= 0:
            raise ScenarioError("target level must be positive")
        if any(h < 2 for h in self.harmonics):
            raise ScenarioError("harmonization acts on harmonics >= 2")
        if self.harmonics and self.estimator_order < max(self.harmonics):
            raise ScenarioError(
                "estimator order must cover the controlled harmonics")
        if self.estimator_cutoff <= 0:
            raise ScenarioError("estimator cutoff must be positive")

    def default_schedule(self, ratios, direction="forward", jump=None):
        return SteppedSineSchedule(
            ratios=np.asarray(ratios, dtype=float), direction=direction,
            ramp_periods=self.ramp_periods, hold_periods=self.hold_periods,
            window_periods=self.window_periods, jump=jump)


def build_plant(plant_cfg):
    """Construct the model objects from the ``plant`` config section."""
    modes = _require(plant_cfg, "modes", "plant")
    structure = model.ModalStructure(
        omega=_require(modes, "omega_rad_s", "plant.modes"),
        damping=_require(modes, "damping_ratio", "plant.modes"),
        mode_shapes=_require(plant_cfg, "mode_shapes_per_sqrt_kg", "plant"))
    spring_cfg = _require(plant_cfg, "cubic_spring", "plant")
    spring = model.CubicSpring(
        k_nl=_require(spring_cfg, "stiffness_N_per_m3", "cubic_spring"),
        phi_nl=structure.row(_require(spring_cfg, "location", "cubic_spring")))
    ex = _require(plant_cfg, "exciter", "plant")
    exciter = model.Exciter(
        moving_mass=_require(ex, "moving_mass_kg", "exciter"),
        coil_resistance=_require(ex, "coil_resistance_ohm", "exciter"),
        force_constant=_require(ex, "force_constant_N_per_A", "exciter"),
        omega=_require(ex, "natural_frequency_rad_s", "exciter"),
        damping=_require(ex, "damping_ratio", "exciter"))
    exc = _require(plant_cfg, "excitation", "plant")
    kind = _require(exc, "kind", "excitation")
    if kind == "force":
        coupling = model.ForceDrive(
            structure.row(_require(exc, "drive_location", "excitation")))
    elif kind == "base":
        coupling = model.BaseDrive(
            _require(exc, "participation_sqrt_kg", "excitation"))
    else:
        raise ScenarioError("excitation kind must be 'force' or 'base'")
    try:
        return model.Plant(structure, spring, exciter, coupling)
    except ValueError as exc_:
        raise ScenarioError(f"invalid plant: {exc_}") from exc_


def build_session(scenario, **overrides):
    """Fresh :class:`ClosedLoopSession` for a scenario.

    Keyword overrides replace individual controller/estimator settings
    (used by the tuning sweeps).
    """
    kw = {
        "filter_order": scenario.estimator_order,
        "filter_cutoff": scenario.estimator_cutoff,
        "target_level": scenario.target_level,
        "fundamental_gain": scenario.fundamental_gain,
        "harmonics": scenario.harmonics,
        "k_p": scenario.k_p,
        "k_i": scenario.k_i,
        "voltage_limit": scenario.voltage_limit,
        "sample_rate": scenario.sample_rate,
        "integrator": scenario.integrator,
        "noise_std": scenario.noise_std,
        "disturbance": scenario.disturbance,
        "fundamental_enabled": scenario.fundamental_enabled,
        "harmonization_enabled": scenario.harmonization_enabled,
    }
    kw.update(overrides)
    rng = kw.pop("rng", None)
    if rng is None:
        rng = np.random.default_rng(scenario.seed)
    return ClosedLoopSession(scenario.plant, scenario.observe_at, rng=rng, **kw)


def builtin_path(name):
    """Path of a shipped scenario/schedule by short name."""
    fname = name.replace("-", "_")
    if not fname.endswith(".yaml"):
        fname += ".yaml"
    ref = importlib.resources.files("vibench") / "data" / fname
    if not ref.is_file():
        raise ScenarioError(f"no shipped config named {name!r}")
    return ref


def _load_yaml(source):
    path = Path(source) if not hasattr(source, "read_text") else source
    if hasattr(path, "is_file") and path.is_file():
        text = path.read_text()
    else:
        text = builtin_path(str(source)).read_text()
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ScenarioError("config must be a mapping")
    return data


def load_scenario(source):
    """Load a scenario from a YAML file path or shipped name."""
    if isinstance(source, dict):
        return Scenario(source)
    return Scenario(_load_yaml(source))


def save_scenario(scenario, path):
    """Write a scenario back to YAML (canonical key order)."""
    Path(path).write_text(yaml.safe_dump(scenario.raw, sort_keys=True))


def _ratio_grid(cfg, context):
    if "list_ratio" in cfg:
        return np.asarray(cfg["list_ratio"], dtype=float)
    return np.linspace(float(_require(cfg, "start_ratio", context)),
                       float(_require(cfg, "stop_ratio", context)),
                       int(_require(cfg, "count", context)))


def load_schedule(source, scenario=None):
    """Load a stepped-sine schedule from YAML (path or shipped name)."""
    raw = source if isinstance(source, dict) else _load_yaml(source)
    try:
        grid = _ratio_grid(_require(raw, "grid", "schedule"), "schedule.grid")
        jump = None
        if raw.get("jump"):
            j = raw["jump"]
            post = _ratio_grid(j["post"], "jump.post") if j.get("post") else ()
            jump = JumpSpec(
                after_ratio=float(_require(j, "after_ratio", "jump")),
                delta_ratio=float(_require(j, "delta_ratio", "jump")),
                delta_voltage=float(_require(j, "delta_voltage_V", "jump")),
                post_ratios=tuple(float(r) for r in np.atleast_1d(post)))
        defaults = {}
        if scenario is not None:
            defaults = {"ramp_periods": scenario.ramp_periods,
                        "hold_periods": scenario.hold_periods,
                        "window_periods": scenario.window_periods}
        return SteppedSineSchedule(
            ratios=grid,
            direction=raw.get("direction", "forward"),
            ramp_periods=float(raw.get("ramp_periods",
                                       defaults.get("ramp_periods", 10.0))),
            hold_periods=float(raw.get("hold_periods",
                                       defaults.get("hold_periods", 600.0))),
            window_periods=float(raw.get("window_periods",
                                         defaults.get("window_periods", 300.0))),
            jump=jump)
    except ScenarioError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ScenarioError(f"invalid schedule: {exc}") from exc


def save_schedule(schedule, path):
    raw = {
        "grid": {"list_ratio": [float(r) for r in schedule.ratios]},
        "direction": schedule.direction,
        "ramp_periods": schedule.ramp_periods,
        "hold_periods": schedule.hold_periods,
        "window_periods": schedule.window_periods,
    }
    if schedule.jump is not None:
        raw["jump"] = {
            "after_ratio": schedule.jump.after_ratio,
            "delta_ratio": schedule.jump.delta_ratio,
            "delta_voltage_V": schedule.jump.delta_voltage,
            "post": {"list_ratio": [float(r)
                                    for r in schedule.jump.post_ratios]},
        }
    Path(path).write_text(yaml.safe_dump(raw, sort_keys=True))


def config_hash(raw):
    """Stable hash of a config mapping (canonical YAML, sha256)."""
    return hashlib.sha256(
        yaml.safe_dump(raw, sort_keys=True).encode()).hexdigest()
