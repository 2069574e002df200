"""
Pre-catch (PRC) planning

plan_vm: velocity-matching planner. The end effector must be at the predicted
catch point exactly at t_c, and its velocity there should match the object's.
Poses are 6-vectors [position, rotation vector]. Limits are per-axis boxes and
the dynamics are Euler integration, so the problem splits into six independent
single-axis QPs. Each one is solved as a two-level hierarchy: velocity matching
first, then the minimum-norm velocity profile among the optimal ones.

plan_soft_legacy: earlier soft-priority formulation (weighted velocity and
position tracking plus a height reward), only used to pick a catch height.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh

from impact_catching.config import (
    A_ANG_MAX,
    A_LIN_MAX,
    GRAVITY,
    LEGACY_WEIGHTS,
    PLANNER_DT,
    PLANNER_MAX_SAMPLES,
    V_ANG_MAX,
    V_LIN_MAX,
)
from impact_catching.errors import DimensionError, IndefiniteHessianError
from impact_catching.qp_core import QPProblem, TaskLevel, TaskStack, qp_solve, solve_hierarchy
from impact_catching.state_estimator import BallisticTrajectory, CatchPrediction

logger = logging.getLogger(__name__)

STATUS_SOLVED = "solved"
STATUS_INFEASIBLE = "infeasible"
STATUS_DEGENERATE = "degenerate_horizon"

HEIGHT_SELECTORS = ("fixed", "legacy")


@dataclass(frozen=True, eq=False)
class PlannerLimits:
    x_min: np.ndarray
    x_max: np.ndarray
    v_lin_max: float = V_LIN_MAX
    v_ang_max: float = V_ANG_MAX
    a_lin_max: float = A_LIN_MAX
    a_ang_max: float = A_ANG_MAX

    def __post_init__(self):
        if np.shape(self.x_min) != (6,) or np.shape(self.x_max) != (6,):
            raise DimensionError("x_min and x_max must be 6-vectors")
        if np.any(np.asarray(self.x_min) >= np.asarray(self.x_max)):
            raise ValueError("x_min must be below x_max")
        if min(self.v_lin_max, self.v_ang_max, self.a_lin_max, self.a_ang_max) <= 0:
            raise ValueError("velocity and acceleration limits must be positive")

    @classmethod
    def around(cls, center, half_width=1.0, **kwargs) -> "PlannerLimits":
        """Workspace box centred on a pose, orientation rows bounded by +-pi"""
        center = np.asarray(center, dtype=float)
        half = np.array([half_width] * 3 + [np.pi] * 3)
        return cls(center - half, center + half, **kwargs)

    @property
    def v_max(self) -> np.ndarray:
        return np.array([self.v_lin_max] * 3 + [self.v_ang_max] * 3)

    @property
    def a_max(self) -> np.ndarray:
        return np.array([self.a_lin_max] * 3 + [self.a_ang_max] * 3)


@dataclass(frozen=True, eq=False)
class PlanResult:
    v_traj: np.ndarray  # (T_p, 6)
    x_traj: np.ndarray  # (T_p + 1, 6), x_traj[0] is the start pose
    T_p: int
    dt_p: float
    status: str
    t_start: float = 0.0
    v_start: np.ndarray = field(default_factory=lambda: np.zeros(6))
    constraint_class: str | None = None
    objective: float = float("nan")
    solve_time: float = 0.0

    @property
    def solved(self) -> bool:
        return self.status == STATUS_SOLVED

    @property
    def stacked(self) -> np.ndarray:
        """Velocity samples stacked sample by sample into one 6*T_p vector"""
        return self.v_traj.reshape(-1)

    @property
    def t_end(self) -> float:
        return self.t_start + self.T_p * self.dt_p


def _failed(status: str, x_now, v_now, dt_p: float, now: float, constraint_class: str | None) -> PlanResult:
    return PlanResult(
        np.zeros((0, 6)), np.asarray(x_now, dtype=float)[None, :], 0, dt_p, status, now,
        np.asarray(v_now, dtype=float), constraint_class,
    )


def horizon(t_c: float, now: float, dt_p: float, max_samples: int = PLANNER_MAX_SAMPLES) -> tuple[int, float]:
    """Sample count and effective step so that the last sample lands on t_c"""
    T_p = int(round((t_c - now) / dt_p))
    if T_p < 1:
        return T_p, dt_p
    T_p = min(T_p, max_samples)
    return T_p, (t_c - now) / T_p


def _axis_matrices(T: int, dt: float) -> tuple[np.ndarray, np.ndarray]:
    cumulative = dt * np.tril(np.ones((T, T)))
    difference = np.eye(T) - np.eye(T, k=-1)
    return cumulative, difference


def _reach_envelope(T: int, dt: float, v0: float, v_max: float, a_max: float) -> tuple[float, float] | None:
    """Extreme displacements reachable in T steps, None when the first step already violates the box"""
    if v0 - a_max * dt > v_max or v0 + a_max * dt < -v_max:
        return None
    steps = np.arange(1, T + 1)
    upper = np.minimum(v_max, v0 + steps * a_max * dt)
    lower = np.maximum(-v_max, v0 - steps * a_max * dt)
    return dt * float(np.sum(lower)), dt * float(np.sum(upper))


def feasibility_class(x0, v0, target, T: int, dt: float, limits: PlannerLimits) -> str | None:
    """Name of the first constraint class that rules the plan out, None when it looks feasible"""
    x0, v0, target = (np.asarray(a, dtype=float) for a in (x0, v0, target))
    for i in range(6):
        if not limits.x_min[i] <= target[i] <= limits.x_max[i]:
            return "position"
        distance = target[i] - x0[i]
        if abs(distance) > T * dt * limits.v_max[i] + 1e-12:
            return "velocity"
        envelope = _reach_envelope(T, dt, v0[i], limits.v_max[i], limits.a_max[i])
        if envelope is None:
            return "velocity"
        if not envelope[0] - 1e-12 <= distance <= envelope[1] + 1e-12:
            return "acceleration"
    return None


def _solve_axis(x0: float, v0: float, target: float, v_target: float, T: int, dt: float,
                x_min: float, x_max: float, v_max: float, a_max: float) -> tuple[np.ndarray | None, str]:
    cumulative, difference = _axis_matrices(T, dt)
    offset = np.zeros(T)
    offset[0] = v0
    constraints = QPProblem(
        H=np.zeros((T, T)), g=np.zeros(T),
        A_eq=np.full((1, T), dt), b_eq=np.array([target - x0]),
        A_in=np.vstack([cumulative, difference]),
        lb=np.concatenate([np.full(T, x_min - x0), offset - a_max * dt]),
        ub=np.concatenate([np.full(T, x_max - x0), offset + a_max * dt]),
        var_lb=np.full(T, -v_max), var_ub=np.full(T, v_max),
    )
    terminal = np.zeros((1, T))
    terminal[0, -1] = 1.0
    levels = [TaskLevel.least_squares(terminal, [v_target], "velocity matching")]
    result = solve_hierarchy(TaskStack(levels, constraints))
    return (result.x if result.solved else None), result.status


def plan_vm(
    x_now,
    v_now,
    prediction: CatchPrediction,
    limits: PlannerLimits,
    dt_p: float = PLANNER_DT,
    now: float = 0.0,
    orientation_ref=None,
    match_velocity: bool = True,
) -> PlanResult:
    """
    Velocity-matching plan to the predicted catch point

    Orientation rows end at orientation_ref (rotation vector, default the
    current orientation) with zero angular velocity. With match_velocity off
    the terminal velocity target is zero, which is the fixed-position approach.
    """
    started = time.perf_counter()
    x_now = np.asarray(x_now, dtype=float)
    v_now = np.asarray(v_now, dtype=float)
    if x_now.shape != (6,) or v_now.shape != (6,):
        raise DimensionError("x_now and v_now must be 6-vectors")
    if not prediction.valid:
        return _failed(STATUS_INFEASIBLE, x_now, v_now, dt_p, now, "prediction")
    T_p, dt = horizon(prediction.t_c, now, dt_p)
    if T_p < 1:
        return _failed(STATUS_DEGENERATE, x_now, v_now, dt_p, now, "horizon")

    target = np.concatenate([prediction.x_at_tc, x_now[3:] if orientation_ref is None else orientation_ref])
    v_target = np.concatenate([prediction.v_at_tc if match_velocity else np.zeros(3), np.zeros(3)])
    violated = feasibility_class(x_now, v_now, target, T_p, dt, limits)
    if violated is not None:
        logger.debug(f"plan rejected before solving: {violated} limits cannot reach the catch point")
        return _failed(STATUS_INFEASIBLE, x_now, v_now, dt, now, violated)

    v_traj = np.zeros((T_p, 6))
    for i in range(6):
        solution, status = _solve_axis(
            x_now[i], v_now[i], target[i], v_target[i], T_p, dt,
            limits.x_min[i], limits.x_max[i], limits.v_max[i], limits.a_max[i],
        )
        if solution is None:
            return _failed(STATUS_INFEASIBLE, x_now, v_now, dt, now, "combined")
        v_traj[:, i] = solution

    x_traj = np.vstack([x_now, x_now + dt * np.cumsum(v_traj, axis=0)])
    objective = 0.5 * float(np.sum((v_traj[-1] - v_target) ** 2))
    return PlanResult(
        v_traj, x_traj, T_p, dt, STATUS_SOLVED, now, v_now, None, objective, time.perf_counter() - started,
    )


def plan_fixed_position(x_now, v_now, prediction: CatchPrediction, limits: PlannerLimits,
                        dt_p: float = PLANNER_DT, now: float = 0.0, orientation_ref=None) -> PlanResult:
    """Reach the catch point before t_c and wait there at rest"""
    return plan_vm(x_now, v_now, prediction, limits, dt_p, now, orientation_ref, match_velocity=False)


# ============================================================
# Soft-priority (legacy) formulation
# ============================================================
def legacy_gamma_bound(alpha: float, beta: float, dt: float, T: int) -> float:
    """Largest height weight gamma keeping the single-axis Hessian positive definite"""
    cumulative, _ = _axis_matrices(T, dt)
    tracking = alpha * np.eye(T) + beta * cumulative.T @ cumulative
    reward = cumulative.T @ cumulative
    return float(1.0 / np.max(eigh(reward, tracking, eigvals_only=True)))


def plan_soft_legacy(
    x_now,
    object_positions,
    object_velocities,
    weights=LEGACY_WEIGHTS,
    selector=(0, 0, 1, 0, 0, 0),
    limits: PlannerLimits | None = None,
    dt: float = PLANNER_DT,
    now: float = 0.0,
) -> PlanResult:
    """
    min alpha*||v_R - v_O||^2 + beta*||x_R - x_O||^2 - gamma*||G x_R||^2

    over the whole object trajectory (one row per sample), x_R integrated
    from x_now by Euler steps.
    """
    alpha, beta, gamma = weights
    x_now = np.asarray(x_now, dtype=float)
    x_o = np.asarray(object_positions, dtype=float)
    v_o = np.asarray(object_velocities, dtype=float)
    if x_o.ndim != 2 or x_o.shape[1] != 6 or v_o.shape != x_o.shape:
        raise DimensionError("object trajectory must be (T, 6) positions and velocities")
    if beta <= alpha:
        logger.warning(f"legacy weights should favour position tracking (beta={beta} <= alpha={alpha})")
    T = len(x_o)
    cumulative, difference = _axis_matrices(T, dt)
    selector = np.asarray(selector, dtype=float)

    v_traj = np.zeros((T, 6))
    objective = 0.0
    for i in range(6):
        w_height = gamma * selector[i]
        H = 2.0 * (alpha * np.eye(T) + (beta - w_height) * cumulative.T @ cumulative)
        min_eig = float(np.min(np.linalg.eigvalsh(H)))
        if min_eig <= 0:
            raise IndefiniteHessianError(f"legacy planner Hessian on axis {i} is not positive definite", min_eig)
        rel = x_o[:, i] - x_now[i]
        g = -2.0 * (alpha * v_o[:, i] + beta * cumulative.T @ rel + w_height * cumulative.T @ np.full(T, x_now[i]))
        kwargs = {}
        if limits is not None:
            offset = np.zeros(T)
            kwargs = dict(
                A_in=np.vstack([cumulative, difference]),
                lb=np.concatenate([np.full(T, limits.x_min[i] - x_now[i]), offset - limits.a_max[i] * dt]),
                ub=np.concatenate([np.full(T, limits.x_max[i] - x_now[i]), offset + limits.a_max[i] * dt]),
                var_lb=np.full(T, -limits.v_max[i]), var_ub=np.full(T, limits.v_max[i]),
            )
        solution = qp_solve(QPProblem(H=H, g=g, **kwargs))
        if not solution.solved:
            return _failed(solution.status, x_now, np.zeros(6), dt, now, "combined")
        v_traj[:, i] = solution.x
        objective += solution.objective

    x_traj = np.vstack([x_now, x_now + dt * np.cumsum(v_traj, axis=0)])
    return PlanResult(v_traj, x_traj, T, dt, STATUS_SOLVED, now, np.zeros(6), None, objective)


def catch_height_from_legacy(plan: PlanResult, object_positions) -> float:
    """Height of the legacy plan where it comes closest to the object"""
    gaps = np.linalg.norm(plan.x_traj[1:, :3] - np.asarray(object_positions)[:, :3], axis=1)
    return float(plan.x_traj[1 + int(np.argmin(gaps)), 2])


def legacy_catch_height(
    x_now,
    prediction: CatchPrediction,
    limits: PlannerLimits,
    dt: float = PLANNER_DT,
    now: float = 0.0,
    gravity: float = GRAVITY,
    weights=LEGACY_WEIGHTS,
) -> float | None:
    """Catch height picked by the soft-priority planner over the predicted flight, None if it fails"""
    if not prediction.valid:
        return None
    x_now = np.asarray(x_now, dtype=float)
    T = int(np.clip(np.ceil((prediction.t_c - now) / dt - 1e-9), 2, PLANNER_MAX_SAMPLES))
    times = now + dt * np.arange(1, T + 1)
    flight = BallisticTrajectory(prediction.x_at_tc, prediction.v_at_tc, prediction.t_c, gravity)
    x_o = np.tile(x_now, (T, 1))
    x_o[:, :3] = flight.position(times)
    v_o = np.zeros((T, 6))
    v_o[:, :3] = flight.velocity(times)
    try:
        plan = plan_soft_legacy(x_now, x_o, v_o, weights, limits=limits, dt=dt, now=now)
    except IndefiniteHessianError as e:
        logger.warning(f"⚠️ legacy height selection skipped: {e}")
        return None
    if not plan.solved:
        logger.warning(f"⚠️ legacy height selection {plan.status}, keeping the catch plane")
        return None
    return catch_height_from_legacy(plan, x_o)


# ============================================================
# Controller-rate references
# ============================================================
@dataclass(frozen=True, eq=False)
class DenseReference:
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray

    def sample(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Reference at time t, held at the ends"""
        if t <= self.times[0]:
            return self.positions[0].copy(), self.velocities[0].copy()
        if t >= self.times[-1]:
            return self.positions[-1].copy(), self.velocities[-1].copy()
        k = int(np.searchsorted(self.times, t, side="right") - 1)
        w = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
        return (
            (1 - w) * self.positions[k] + w * self.positions[k + 1],
            (1 - w) * self.velocities[k] + w * self.velocities[k + 1],
        )


def resample_plan(plan: PlanResult, dt_ctrl: float) -> DenseReference:
    """
    Dense reference for the controller

    Positions follow the Euler integration of the plan (exact at the knots),
    velocities are interpolated linearly from v_start through the samples.
    """
    if dt_ctrl > plan.dt_p + 1e-15:
        raise ValueError(f"controller step {dt_ctrl} is longer than the plan step {plan.dt_p}")
    if plan.T_p == 0:
        return DenseReference(np.array([plan.t_start]), plan.x_traj[:1].copy(), plan.v_start[None, :].copy())

    duration = plan.T_p * plan.dt_p
    # controller ticks plus the plan knots, so the position kinks stay exact
    count = int(np.floor(duration / dt_ctrl + 1e-9))
    knot_times = np.arange(plan.T_p + 1) * plan.dt_p
    offsets = np.sort(np.concatenate([np.arange(count + 1) * dt_ctrl, knot_times]))
    offsets = offsets[np.concatenate([[True], np.diff(offsets) > 1e-12])]
    offsets = offsets[offsets < duration - 1e-12]
    offsets = np.append(offsets, duration)

    knot = np.minimum((offsets / plan.dt_p + 1e-9).astype(int), plan.T_p)
    inside = np.minimum(knot, plan.T_p - 1)
    local = offsets - inside * plan.dt_p
    positions = plan.x_traj[inside] + local[:, None] * plan.v_traj[inside]
    positions[knot == plan.T_p] = plan.x_traj[-1]

    knot_velocities = np.vstack([plan.v_start, plan.v_traj])
    velocities = np.column_stack([np.interp(offsets, knot_times, knot_velocities[:, i]) for i in range(6)])
    return DenseReference(plan.t_start + offsets, positions, velocities)


class PlannerTask:
    """Periodic planner keeping the last feasible plan as fallback"""

    def __init__(self, limits: PlannerLimits, dt_p: float = PLANNER_DT, match_velocity: bool = True,
                 orientation_ref=None):
        self.limits = limits
        self.dt_p = dt_p
        self.match_velocity = match_velocity
        self.orientation_ref = orientation_ref
        self.plan: PlanResult | None = None
        self.reference: DenseReference | None = None
        self.events: list[tuple[float, str]] = []
        self.solve_times: list[float] = []

    def update(self, x_now, v_now, prediction: CatchPrediction, now: float, dt_ctrl: float) -> DenseReference | None:
        plan = plan_vm(x_now, v_now, prediction, self.limits, self.dt_p, now, self.orientation_ref,
                       self.match_velocity)
        self.solve_times.append(plan.solve_time)
        if plan.solved:
            self.plan = plan
            self.reference = resample_plan(plan, dt_ctrl)
        elif plan.status != STATUS_DEGENERATE:
            self.events.append((now, f"planner_{plan.status}:{plan.constraint_class}"))
            logger.info(f"⚠️ planner {plan.status} at t={now:.3f}s ({plan.constraint_class}), holding last plan")
        return self.reference
