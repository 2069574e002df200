"""
Scenario files

A scenario is a YAML file, optionally pulling shared settings from a base file
through `include:` (deep merge, the including file wins). It is validated
into frozen dataclasses; every problem is reported as a ConfigError naming the
offending field.
"""

import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from impact_catching import config as defaults
from impact_catching.controller import STRATEGIES, ControlGains, StrategyTag
from impact_catching.errors import ConfigError
from impact_catching.impact_model import calibrate_damping
from impact_catching.prc_planner import HEIGHT_SELECTORS

logger = logging.getLogger(__name__)

REQUIRED = object()


def _vector(length: int | None = None, default=REQUIRED):
    """Field holding a float vector, optionally of fixed length"""
    if default is REQUIRED:
        return field(default=None, metadata={"vector": length, "required": True})
    return field(default=default, metadata={"vector": length})


@dataclass(frozen=True)
class ArmSection:
    model: str = str(defaults.DEFAULT_ARM_MODEL)
    start_position: tuple = _vector(3)
    seed_configuration: tuple = _vector(None, defaults.READY_POSE)


@dataclass(frozen=True)
class ObjectSection:
    mass: float = defaults.OBJECT_MASS
    release_position: tuple = _vector(3)
    release_velocity: tuple = _vector(3, (0.0, 0.0, 0.0))


@dataclass(frozen=True)
class ContactSection:
    restitution: float = defaults.DEFAULT_RESTITUTION
    stiffness: float = defaults.DEFAULT_CONTACT_STIFFNESS
    damping: float | None = None  # calibrated from restitution when absent
    basket_radius: float = defaults.BASKET_RADIUS
    well_curvature: float = defaults.BASKET_CURVATURE
    tangential_damping: float = defaults.TANGENTIAL_DAMPING


@dataclass(frozen=True)
class EstimatorSection:
    noise_std: float = defaults.KF_MEASUREMENT_STD
    rate: float = defaults.MEASUREMENT_RATE
    process_noise: float = defaults.KF_PROCESS_NOISE
    two_axis: bool = False
    measurements: str | None = None  # CSV log to replay instead of the synthetic camera


@dataclass(frozen=True)
class PlannerSection:
    dt: float = defaults.PLANNER_DT
    v_lin_max: float = defaults.V_LIN_MAX
    v_ang_max: float = defaults.V_ANG_MAX
    a_lin_max: float = defaults.A_LIN_MAX
    a_ang_max: float = defaults.A_ANG_MAX
    workspace_half_width: float = defaults.WORKSPACE_HALF_WIDTH
    height_selector: str = "fixed"  # "legacy" picks the catch height with the soft-priority planner


@dataclass(frozen=True)
class ControllerSection:
    K_H: float = defaults.GAIN_HIGH
    K_L: float = defaults.GAIN_LOW
    K_v: float = defaults.GAIN_VELOCITY
    K_qp: tuple = _vector(None, defaults.JOINT_STIFFNESS)
    K_qd: tuple = _vector(None, defaults.JOINT_DAMPING)
    clamp_torques: bool = True
    torque_lock_duration: float = defaults.TORQUE_LOCK_DURATION
    dim: bool | None = None  # None follows the strategy tag


@dataclass(frozen=True)
class POCSection:
    d_lim: float = defaults.POC_DISTANCE_1D
    dt_poc: float = defaults.POC_DURATION_1D
    eps: float = defaults.STIFFNESS_FILTER_EPS
    K_d_max: float = defaults.K_D_MAX
    K_p_max: float = defaults.K_P_MAX
    a_max: float = defaults.A_LIN_MAX
    profile: str | None = None  # None uses the bundled synthetic profile


@dataclass(frozen=True)
class SimSection:
    dt_phys: float = defaults.SIM_DT
    dt_ctrl: float = defaults.CONTROL_DT
    settle_window: float = defaults.SETTLE_WINDOW
    steady_band: float = defaults.STEADY_FORCE_BAND
    steady_duration: float = defaults.STEADY_DURATION
    t_max: float = defaults.SIM_DURATION_MAX
    deterministic: bool = True


SECTIONS = {
    "arm": ArmSection,
    "object": ObjectSection,
    "contact": ContactSection,
    "estimator": EstimatorSection,
    "planner": PlannerSection,
    "controller": ControllerSection,
    "poc": POCSection,
    "sim": SimSection,
}


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    strategy: str
    catch_plane_z: float
    force_threshold: float
    seed: int
    arm: ArmSection
    object: ObjectSection
    contact: ContactSection
    estimator: EstimatorSection
    planner: PlannerSection
    controller: ControllerSection
    poc: POCSection
    sim: SimSection
    source: str | None = None

    @property
    def tag(self) -> StrategyTag:
        return StrategyTag.parse(self.strategy)

    @property
    def dim_enabled(self) -> bool:
        return self.tag.dim if self.controller.dim is None else bool(self.controller.dim)

    @property
    def contact_damping(self) -> float:
        if self.contact.damping is not None:
            return self.contact.damping
        return calibrate_damping(self.contact.restitution, self.contact.stiffness, self.object.mass)

    def gains(self, n_dof: int) -> tuple[ControlGains, ControlGains]:
        """High and low controller gain sets"""
        c = self.controller
        for name in ("K_qp", "K_qd"):
            if len(getattr(c, name)) != n_dof:
                raise ConfigError(f"controller.{name}", f"expected {n_dof} entries, got {len(getattr(c, name))}")
        high = ControlGains(K_p=c.K_H, K_v=c.K_v, K_qp=np.array(c.K_qp), K_qd=np.array(c.K_qd))
        return high, replace(high, K_p=np.full(6, c.K_L))

    def to_dict(self) -> dict:
        """Plain data view, as written into run manifests"""
        raw = {"name": self.name, "strategy": self.strategy, "catch_plane_z": self.catch_plane_z,
               "force_threshold": self.force_threshold, "seed": self.seed}
        for key in SECTIONS:
            section = getattr(self, key)
            raw[key] = {f.name: list(v) if isinstance(v, tuple) else v
                        for f in fields(section) for v in [getattr(section, f.name)]}
        return raw


# ============================================================
# Loading
# ============================================================
def deep_merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _read_with_includes(path: Path, seen: tuple[Path, ...] = ()) -> dict:
    path = path.resolve()
    if path in seen:
        raise ConfigError("include", f"include cycle through {path}")
    if not path.exists():
        raise ConfigError("include" if seen else "config", f"scenario file not found: {path}")
    with open(path, encoding="utf-8") as f:
        try:
            raw = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError("config", f"{path} is not valid YAML: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config", f"{path} must contain a mapping")
    include = raw.pop("include", None)
    if include is None:
        return raw
    merged: dict = {}
    for name in [include] if isinstance(include, str) else include:
        merged = deep_merge(merged, _read_with_includes(path.parent / name, seen + (path,)))
    return deep_merge(merged, raw)


def _convert(value, f, where: str):
    if "vector" in f.metadata:
        try:
            vector = tuple(float(v) for v in value)
        except (TypeError, ValueError) as e:
            raise ConfigError(where, f"expected a list of numbers, got {value!r}") from e
        length = f.metadata["vector"]
        if length is not None and len(vector) != length:
            raise ConfigError(where, f"expected {length} entries, got {len(vector)}")
        return vector
    if value is None and f.type in (float | None, bool | None, str | None):
        return None
    if f.type in (bool, bool | None):
        if not isinstance(value, bool):
            raise ConfigError(where, f"expected true/false, got {value!r}")
        return value
    if f.type in (float, float | None):
        if isinstance(value, bool):
            raise ConfigError(where, f"expected a number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError) as e:
            raise ConfigError(where, f"expected a number, got {value!r}") from e
    return str(value)


def _section(cls, raw, prefix: str):
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError(prefix, "expected a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"{prefix}.{unknown[0]}", "unknown field")
    values = {}
    for name, f in known.items():
        where = f"{prefix}.{name}"
        if name in raw:
            values[name] = _convert(raw[name], f, where)
        elif f.metadata.get("required"):
            raise ConfigError(where, "required field missing")
    return cls(**values)


def _positive(value: float, where: str):
    if not value > 0:
        raise ConfigError(where, f"must be positive, got {value}")


def _validate(cfg: ScenarioConfig) -> None:
    if cfg.strategy not in STRATEGIES:
        raise ConfigError("strategy", f"unknown strategy {cfg.strategy!r}, expected one of {', '.join(STRATEGIES)}")
    _positive(cfg.force_threshold, "force_threshold")
    _positive(cfg.object.mass, "object.mass")
    if not 0.0 < cfg.contact.restitution <= 1.0:
        raise ConfigError("contact.restitution", f"must lie in (0, 1], got {cfg.contact.restitution}")
    for name in ("stiffness", "basket_radius"):
        _positive(getattr(cfg.contact, name), f"contact.{name}")
    for name in ("dt", "v_lin_max", "v_ang_max", "a_lin_max", "a_ang_max", "workspace_half_width"):
        _positive(getattr(cfg.planner, name), f"planner.{name}")
    for name in ("K_H", "K_L", "K_v", "torque_lock_duration"):
        _positive(getattr(cfg.controller, name), f"controller.{name}")
    for name in ("d_lim", "dt_poc", "K_d_max", "K_p_max", "a_max"):
        _positive(getattr(cfg.poc, name), f"poc.{name}")
    if not 0.0 < cfg.poc.eps <= 1.0:
        raise ConfigError("poc.eps", f"must lie in (0, 1], got {cfg.poc.eps}")
    for name in ("dt_phys", "dt_ctrl", "t_max", "steady_duration", "steady_band"):
        _positive(getattr(cfg.sim, name), f"sim.{name}")
    ratio = cfg.sim.dt_ctrl / cfg.sim.dt_phys
    if abs(ratio - round(ratio)) > 1e-9:
        raise ConfigError("sim.dt_ctrl", "control period must be a multiple of the physics step")
    if cfg.planner.dt < cfg.sim.dt_ctrl:
        raise ConfigError("planner.dt", "planner period must not be shorter than the control period")
    selector = cfg.planner.height_selector
    if selector not in HEIGHT_SELECTORS:
        raise ConfigError("planner.height_selector",
                          f"unknown selector {selector!r}, expected one of {', '.join(HEIGHT_SELECTORS)}")
    _positive(cfg.estimator.rate, "estimator.rate")
    if cfg.object.release_position[2] <= cfg.catch_plane_z:
        raise ConfigError("object.release_position", "the object must start above the catch plane")


def parse_scenario(raw: dict, name: str = "scenario", source: str | None = None) -> ScenarioConfig:
    raw = dict(raw)
    unknown = sorted(set(raw) - set(SECTIONS) - {"name", "strategy", "catch_plane_z", "force_threshold", "seed"})
    if unknown:
        raise ConfigError(unknown[0], "unknown field")
    for key in ("strategy", "catch_plane_z"):
        if key not in raw:
            raise ConfigError(key, "required field missing")
    try:
        catch_plane_z = float(raw["catch_plane_z"])
        force_threshold = float(raw.get("force_threshold", defaults.FORCE_THRESHOLD))
        seed = int(raw.get("seed", 0))
    except (TypeError, ValueError) as e:
        raise ConfigError("catch_plane_z", f"expected numbers for the top-level values: {e}") from e
    cfg = ScenarioConfig(
        name=str(raw.get("name", name)),
        strategy=str(raw["strategy"]),
        catch_plane_z=catch_plane_z,
        force_threshold=force_threshold,
        seed=seed,
        source=source,
        **{key: _section(cls, raw.get(key), key) for key, cls in SECTIONS.items()},
    )
    _validate(cfg)
    return cfg


def load_scenario(path: str | Path, overrides: dict | None = None) -> ScenarioConfig:
    """Read, merge and validate a scenario file; overrides are deep-merged last"""
    path = Path(path)
    raw = _read_with_includes(path)
    if overrides:
        raw = deep_merge(raw, overrides)
    cfg = parse_scenario(raw, name=path.stem, source=str(path))
    # model and profile paths are relative to the scenario file
    arm_model = Path(cfg.arm.model)
    if not arm_model.is_absolute() and (path.parent / arm_model).exists():
        cfg = replace(cfg, arm=replace(cfg.arm, model=str(path.parent / arm_model)))
    if not Path(cfg.arm.model).exists():
        raise ConfigError("arm.model", f"arm model file not found: {cfg.arm.model}")
    if cfg.poc.profile is not None and not Path(cfg.poc.profile).is_absolute():
        cfg = replace(cfg, poc=replace(cfg.poc, profile=str(path.parent / cfg.poc.profile)))
    if cfg.estimator.measurements is not None:
        log = Path(cfg.estimator.measurements)
        if not log.is_absolute():
            log = path.parent / log
        if not log.exists():
            raise ConfigError("estimator.measurements", f"measurement log not found: {log}")
        cfg = replace(cfg, estimator=replace(cfg.estimator, measurements=str(log)))
    logger.info(f"Loaded scenario '{cfg.name}' ({cfg.strategy}) from {path}")
    return cfg
