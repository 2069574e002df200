"""
Hierarchical QP controller

Each control tick builds a strict stack of tasks over the joint velocities:
1. CLIK: track the Cartesian pose and twist references
2. DIM (optional): raise the Dynamic Impact Measure along the impact direction
3. implicit regularizer (minimum joint velocity)
subject to joint position, velocity and acceleration limits. The optimal
joint velocities are integrated into a joint reference that a joint
impedance law with gravity and Coriolis compensation turns into torques.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from impact_catching.config import TORQUE_LOCK_DURATION
from impact_catching.errors import ConfigError
from impact_catching.kinematics_dynamics import (
    ArmModel,
    CartesianState,
    DynamicsEval,
    JointState,
    dim_gradient,
    dim_index,
    dynamics,
    forward_kinematics,
    jacobian,
    pose_error,
)
from impact_catching.qp_core import QPProblem, TaskLevel, TaskStack, solve_hierarchy

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ControlGains:
    """Diagonals of the CLIK gains (6) and of the joint impedance gains (n)"""

    K_p: np.ndarray
    K_v: np.ndarray
    K_qp: np.ndarray
    K_qd: np.ndarray

    def __post_init__(self):
        for name in ("K_p", "K_v", "K_qp", "K_qd"):
            value = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if name in ("K_p", "K_v") and len(value) == 1:
                value = np.full(6, value[0])
            if np.any(value <= 0) or not np.all(np.isfinite(value)):
                raise ConfigError(name, f"gains must be positive, got {value.tolist()}")
            object.__setattr__(self, name, value)
        if len(self.K_p) != 6 or len(self.K_v) != 6:
            raise ConfigError("K_p", "Cartesian gains need 6 diagonal entries")
        if len(self.K_qp) != len(self.K_qd):
            raise ConfigError("K_qp", "joint stiffness and damping must have the same length")

    def with_position_gain(self, K_pos) -> "ControlGains":
        """Same gains with the translational K_p rows replaced"""
        K_p = self.K_p.copy()
        K_p[:3] = np.asarray(K_pos, dtype=float)
        return replace(self, K_p=K_p)


@dataclass(frozen=True)
class JointBounds:
    lower: np.ndarray
    upper: np.ndarray
    position: tuple[np.ndarray, np.ndarray]
    velocity: tuple[np.ndarray, np.ndarray]
    acceleration: tuple[np.ndarray, np.ndarray]
    relaxed: bool = False


@dataclass(frozen=True)
class ControlTick:
    dq_star: np.ndarray
    q_star: np.ndarray
    tau: np.ndarray
    dim_value: float
    status: str = "solved"
    saturated: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


# ============================================================
# Objectives and constraints
# ============================================================
def clik_target(x_d: CartesianState, x_a: CartesianState, gains: ControlGains) -> np.ndarray:
    """Commanded task twist K_v (v_d - v_a) + K_p err(x_d, x_a)"""
    err = pose_error(x_d.position, x_d.orientation, x_a.position, x_a.orientation)
    return gains.K_v * (np.asarray(x_d.twist) - np.asarray(x_a.twist)) + gains.K_p * err


def clik_objective(model: ArmModel, q, x_d: CartesianState, x_a: CartesianState, gains: ControlGains,
                   J: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """1/2 ||J dq - target||^2 as (H, g)"""
    J = jacobian(model, q) if J is None else J
    target = clik_target(x_d, x_a, gains)
    return J.T @ J, -J.T @ target


def dim_objective(model: ArmModel, q, u, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Hessian-free quadratic model for raising w along u over one control period"""
    if dt <= 0:
        raise ValueError(f"control period must be positive, got {dt}")
    w = dim_index(model, q, u)
    grad = dim_gradient(model, q, u)
    return dt**2 * np.outer(grad, grad), -w * dt * grad


def joint_constraints(model: ArmModel, q_prev, dq_prev, dt: float) -> JointBounds:
    """
    Box on the joint velocities for one control period

    Position limits are reached by Euler integration from q_prev, acceleration
    is measured against dq_prev. When the acceleration box cannot meet the
    others (after an impact or at a limit) it is dropped for this tick.
    """
    if dt <= 0:
        raise ValueError(f"control period must be positive, got {dt}")
    q_prev = np.asarray(q_prev, dtype=float)
    dq_prev = np.asarray(dq_prev, dtype=float)
    pos = ((model.q_min - q_prev) / dt, (model.q_max - q_prev) / dt)
    vel = (-model.dq_max, model.dq_max.copy())
    acc = (dq_prev - model.ddq_max * dt, dq_prev + model.ddq_max * dt)

    lower = np.clip(np.maximum(pos[0], vel[0]), vel[0], vel[1])
    upper = np.clip(np.minimum(pos[1], vel[1]), vel[0], vel[1])
    with_acc = np.maximum(lower, acc[0]), np.minimum(upper, acc[1])
    relaxed = bool(np.any(with_acc[0] > with_acc[1]))
    if not relaxed:
        lower, upper = with_acc
    else:
        logger.debug("acceleration box dropped for this tick")
    return JointBounds(lower, upper, pos, vel, acc, relaxed)


# ============================================================
# Control tick
# ============================================================
def impedance_torque(gains: ControlGains, q_star, dq_star, q, dq, bias) -> np.ndarray:
    """Joint impedance law around the integrated reference, bias = C_vec + g_vec"""
    return gains.K_qd * (np.asarray(dq_star) - dq) + gains.K_qp * (np.asarray(q_star) - q) + bias


def _safe_stop(model: ArmModel, q: np.ndarray, dyn: DynamicsEval, status: str, clamp: bool) -> ControlTick:
    logger.warning(f"⚠️ controller QP failed ({status}), commanding gravity compensation")
    tau = dyn.g_vec.copy()
    saturated = np.abs(tau) > model.tau_lim
    if clamp:
        tau = np.clip(tau, -model.tau_lim, model.tau_lim)
    return ControlTick(np.zeros(model.n_dof), q.copy(), tau, float("nan"), status, saturated,
                       {"event": f"safe_stop:{status}"})


def control_tick(
    model: ArmModel,
    state: JointState,
    refs: CartesianState,
    gains: ControlGains,
    dim_enabled: bool,
    u,
    dt: float,
    dq_prev=None,
    clamp: bool = True,
    dyn: DynamicsEval | None = None,
    warm_start=None,
) -> ControlTick:
    """
    One HQP control step

    The joint reference is integrated from the measured configuration and
    dq_prev (the previous command, default the measured velocity) anchors the
    acceleration box.
    """
    q = np.asarray(state.q, dtype=float)
    dq = np.asarray(state.dq, dtype=float)
    dyn = dynamics(model, state) if dyn is None else dyn
    actual = forward_kinematics(model, q, dq)
    target = clik_target(refs, actual, gains)

    levels = [TaskLevel.least_squares(dyn.J, target, "clik")]
    dim_value = float("nan")
    if dim_enabled:
        H_w, g_w = dim_objective(model, q, u, dt)
        dim_value = dim_index(model, q, u)
        levels.append(TaskLevel(H_w, g_w, name="dim"))

    bounds = joint_constraints(model, q, dq if dq_prev is None else dq_prev, dt)
    constraints = QPProblem(
        H=np.zeros((model.n_dof, model.n_dof)), g=np.zeros(model.n_dof),
        var_lb=bounds.lower, var_ub=bounds.upper,
    )
    result = solve_hierarchy(TaskStack(levels, constraints), warm_start=warm_start)
    if not result.solved:
        return _safe_stop(model, q, dyn, result.status, clamp)

    dq_star = result.x
    q_star = q + dq_star * dt
    tau = impedance_torque(gains, q_star, dq_star, q, dq, dyn.C_vec + dyn.g_vec)
    saturated = np.abs(tau) > model.tau_lim
    if clamp:
        tau = np.clip(tau, -model.tau_lim, model.tau_lim)

    diagnostics = {
        "objectives": result.objectives,
        "clik_residual": float(np.linalg.norm(dyn.J @ dq_star - target)),
        "bound_margin": float(np.min(np.minimum(bounds.upper - dq_star, dq_star - bounds.lower))),
        "acceleration_relaxed": bounds.relaxed,
        "iterations": result.iterations,
        "solutions": result.solutions,
    }
    return ControlTick(dq_star, q_star, tau, dim_value, "solved", saturated, diagnostics)


# ============================================================
# Gain schedules and torque monitoring
# ============================================================
STRATEGIES = ("FP-KL", "FP-KH", "VM-KL", "VM-KH", "VM-SIC", "VM-VIC", "VM-VIC-DIM")


@dataclass(frozen=True)
class StrategyTag:
    planner: str  # "FP" | "VM"
    poc: str  # "KL" | "KH" | "SIC" | "VIC"
    dim: bool

    @classmethod
    def parse(cls, tag: str) -> "StrategyTag":
        if tag not in STRATEGIES:
            raise ConfigError("strategy", f"unknown strategy {tag!r}, expected one of {', '.join(STRATEGIES)}")
        parts = tag.split("-")
        return cls(parts[0], parts[1], len(parts) == 3)

    @property
    def variable_stiffness(self) -> bool:
        return self.poc == "VIC"


class GainSchedule:
    """
    Controller gains per phase

    KL/KH keep one gain set for the whole run, SIC switches from high to low
    at the POC trigger and VIC starts from the high gains and follows the
    learned stiffness after the trigger.
    """

    def __init__(self, tag: StrategyTag, high: ControlGains, low: ControlGains):
        self.tag = tag
        self.high = high
        self.low = low

    def prc(self) -> ControlGains:
        return self.low if self.tag.poc == "KL" else self.high

    def poc(self, K_pos=None) -> ControlGains:
        if self.tag.poc == "KL" or self.tag.poc == "SIC":
            return self.low
        if self.tag.poc == "VIC" and K_pos is not None:
            return self.high.with_position_gain(K_pos)
        return self.high


class TorqueMonitor:
    """Raises the safety lock when any joint stays clamped longer than the threshold"""

    def __init__(self, threshold: float = TORQUE_LOCK_DURATION):
        self.threshold = threshold
        self.saturated_for = 0.0
        self.clamp_events = 0
        self.locked = False

    def update(self, saturated, dt: float) -> bool:
        if np.any(saturated):
            if self.saturated_for == 0.0:
                self.clamp_events += 1
            self.saturated_for += dt
        else:
            self.saturated_for = 0.0
        if self.saturated_for > self.threshold + 1e-12 and not self.locked:
            self.locked = True
            logger.warning(f"❌ torque clamp saturated for {self.saturated_for * 1e3:.1f} ms, safety lock")
        return self.locked
