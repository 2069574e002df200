"""
Fixed-step world simulation of a catch

One logical thread interleaves four nested rates: physics (10 kHz), the HQP
controller (1 kHz), the planner (100 Hz) and the synthetic camera (500 Hz).
The tool is a basket: a disc with a shallow parabolic well around the tool
point, so the ball self-centres. The run moves through the phases
PRC -> POC -> DONE; the POC phase starts when the contact force crosses the
threshold (or, for variable stiffness, at the predicted catch time).
"""

import json
import logging
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.spatial.transform import Rotation

from impact_catching.config import BLOWUP_JOINT_SPEED, PINV_DAMPING, SIM_DT
from impact_catching.controller import GainSchedule, TorqueMonitor, control_tick, impedance_torque
from impact_catching.errors import ConfigError, DimensionError, SimulationError, SingularConfigurationError
from impact_catching.impact_model import ImpactParams, calibrate_damping, compliant_contact_force, impact_impulse
from impact_catching.kinematics_dynamics import (
    ArmModel,
    CartesianState,
    JointState,
    bias_forces,
    dim_index,
    dynamics,
    forward_kinematics,
    inverse_kinematics,
    load_arm_model,
)
from impact_catching.poc_stiffness import (
    POCPlan,
    bundled_profile,
    cubic_coefficients,
    final_point,
    load_profile,
    plan_poc,
    poc_step,
)
from impact_catching.prc_planner import PlannerLimits, PlannerTask, legacy_catch_height
from impact_catching.scenario import ScenarioConfig
from impact_catching.state_estimator import (
    MEASUREMENT_COLUMNS,
    BallisticTrajectory,
    CatchPrediction,
    KalmanTracker,
    kalman_config_1d,
    kalman_config_2d,
    measurement_vector,
    read_measurements,
    synth_measurements,
)

logger = logging.getLogger(__name__)

PHASE_PRC = "PRC"
PHASE_POC = "POC"
PHASE_DONE = "DONE"

OUTCOME_CAUGHT = "caught"
OUTCOME_LOCKED = "locked"
OUTCOME_MISSED = "missed"
OUTCOME_ABORTED = "aborted"

DEFAULT_DIRECTION = np.array([0.0, 0.0, -1.0])
MISS_DEPTH = 0.5  # m below the catch plane


@dataclass(frozen=True)
class ObjectState:
    position: np.ndarray
    velocity: np.ndarray
    in_contact: bool = False


@dataclass(frozen=True)
class WorldState:
    t: float
    arm: JointState
    object: ObjectState
    phase: str = PHASE_PRC
    sensor_force: np.ndarray = field(default_factory=lambda: np.zeros(6))  # tool frame, object on tool
    contact_force: np.ndarray = field(default_factory=lambda: np.zeros(3))  # world frame, tool on object


@dataclass(frozen=True)
class BasketContact:
    k_c: float
    d_c: float
    radius: float
    curvature: float
    tangential_damping: float = 0.0

    def force(self, tool_position, tool_velocity, position, velocity) -> np.ndarray:
        """Force of the basket on the object (world frame)"""
        rel = np.asarray(position) - np.asarray(tool_position)
        radial = rel[:2]
        if np.linalg.norm(radial) > self.radius:
            return np.zeros(3)
        gap = rel[2] - self.curvature * float(radial @ radial)
        if gap >= 0.0:
            return np.zeros(3)
        normal = np.array([-2.0 * self.curvature * radial[0], -2.0 * self.curvature * radial[1], 1.0])
        normal /= np.linalg.norm(normal)
        rel_vel = np.asarray(velocity) - np.asarray(tool_velocity)
        magnitude = compliant_contact_force(-gap * normal[2], -float(rel_vel @ normal), self.k_c, self.d_c)
        if magnitude == 0.0:
            return np.zeros(3)
        tangential = rel_vel - (rel_vel @ normal) * normal
        return magnitude * normal - self.tangential_damping * tangential


# ============================================================
# Physics step
# ============================================================
def step(world: WorldState, tau, dt_phys: float, model: ArmModel, contact: BasketContact, mass: float,
         terms=None) -> WorldState:
    """
    Semi-implicit Euler on the arm and the object

    The contact force acts equal and opposite on the object and on the tool
    point. terms are (M, C_vec + g_vec, J) at the current state when the caller
    already has them. Raises SimulationError when the joint speeds blow up.
    """
    q, dq = world.arm.q, world.arm.dq
    M, bias, J = bias_forces(model, q, dq) if terms is None else terms
    tool = forward_kinematics(model, q, dq)
    obj = world.object
    f_obj = contact.force(tool.position, tool.twist[:3], obj.position, obj.velocity)

    ddq = np.linalg.solve(M, np.asarray(tau) - J[:3].T @ f_obj - bias)
    dq_next = dq + dt_phys * ddq
    q_next = q + dt_phys * dq_next
    if not np.all(np.isfinite(dq_next)) or np.linalg.norm(dq_next) > BLOWUP_JOINT_SPEED:
        raise SimulationError(f"joint speeds diverged at t={world.t:.4f}s (|dq|={np.linalg.norm(dq_next):.3e})")

    v_next = obj.velocity + dt_phys * (model.gravity + f_obj / mass)
    p_next = obj.position + dt_phys * v_next
    sensor = np.concatenate([tool.rotation.T @ -f_obj, np.zeros(3)])
    return replace(
        world,
        t=world.t + dt_phys,
        arm=JointState(q_next, dq_next, ddq),
        object=ObjectState(p_next, v_next, bool(np.any(f_obj))),
        sensor_force=sensor,
        contact_force=f_obj,
    )


def bounce_test(k_c: float, e: float, m: float, v_in: float = 1.0, dt: float = SIM_DT) -> float:
    """Rebound speed ratio of a free mass on a fixed, calibrated contact"""
    d_c = calibrate_damping(e, k_c, m)
    z, v = 0.0, -abs(v_in)
    for _ in range(int(1.0 / dt)):
        v += dt * compliant_contact_force(-z, -v, k_c, d_c) / m
        z += dt * v
        if z > 0.0 and v > 0.0:
            return v / abs(v_in)
    raise SimulationError("object never left the contact")


# ============================================================
# Trace
# ============================================================
@dataclass
class SimTrace:
    frame: pd.DataFrame
    events: list[tuple[float, str]]
    summary: dict
    measurements: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=MEASUREMENT_COLUMNS))

    @property
    def outcome(self) -> str:
        return self.summary["outcome"]

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.frame.to_csv(path, index=False, float_format="%.9f")
        return path

    def write_summary(self, path: str | Path, metrics: dict | None = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = dict(self.summary)
        payload["events"] = [[round(t, 9), name] for t, name in self.events]
        if metrics is not None:
            payload["metrics"] = metrics
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
        return path


def trace_columns(n_dof: int) -> list[str]:
    joints = [f"{kind}{i + 1}" for kind in ("q", "dq", "tau") for i in range(n_dof)]
    return (
        ["time_s", "phase"] + joints
        + ["x", "y", "z", "vx", "vy", "vz", "x_d", "y_d", "z_d", "vx_d", "vy_d", "vz_d"]
        + ["obj_x", "obj_y", "obj_z", "obj_vx", "obj_vy", "obj_vz"]
        + ["Fx", "Fy", "Fz", "Kp_x", "Kp_y", "Kp_z", "dim", "clik_residual", "events"]
    )


# ============================================================
# Scenario run
# ============================================================
def _unit_or_default(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    return v / norm if np.isfinite(norm) and norm > 1e-9 else DEFAULT_DIRECTION.copy()


def build_poc_plan(x_d_c, v_d_c, v_object, cfg: ScenarioConfig) -> POCPlan:
    """
    POC reference from the catch instant

    A velocity-matched catch keeps moving along its catch velocity. A catch
    at rest (fixed position) still yields along the object's velocity.
    """
    x_d_c = np.asarray(x_d_c, dtype=float)
    v_d_c = np.asarray(v_d_c, dtype=float)[:3]
    if np.linalg.norm(v_d_c) > 1e-6:
        bound = float(np.max(np.abs(v_d_c)) / cfg.poc.a_max)
        if cfg.poc.dt_poc < bound:
            logger.warning(f"⚠️ dt_poc={cfg.poc.dt_poc:.3f}s raised to the kinematic bound {bound:.3f}s")
        return plan_poc(x_d_c, v_d_c, cfg.poc.d_lim, max(cfg.poc.dt_poc, bound), cfg.poc.a_max)
    x_d_f = final_point(x_d_c, _unit_or_default(v_object), cfg.poc.d_lim)
    coefficients = cubic_coefficients(x_d_c[:3], np.zeros(3), x_d_f, np.zeros(3), cfg.poc.dt_poc)
    return POCPlan(x_d_c, np.zeros(3), x_d_f, cfg.poc.d_lim, cfg.poc.dt_poc, coefficients)


def _cartesian(pose6, twist6) -> CartesianState:
    pose6 = np.asarray(pose6, dtype=float)
    return CartesianState(pose6[:3], Rotation.from_rotvec(pose6[3:]).as_quat(), np.asarray(twist6, dtype=float))


def _pose6(state: CartesianState) -> np.ndarray:
    return np.concatenate([state.position, Rotation.from_quat(state.orientation).as_rotvec()])


def _period(value: float, base: float, name: str) -> int:
    ratio = value / base
    if abs(ratio - round(ratio)) > 1e-6 or round(ratio) < 1:
        raise SimulationError(f"{name} period {value} is not a multiple of {base}")
    return int(round(ratio))


class _Run:
    """Mutable state of one scenario run; the loop owner"""

    def __init__(self, cfg: ScenarioConfig, model: ArmModel | None = None, profile=None):
        self.cfg = cfg
        self.model = model if model is not None else load_arm_model(cfg.arm.model)
        self.tag = cfg.tag
        n = self.model.n_dof

        seed = np.asarray(cfg.arm.seed_configuration, dtype=float)
        upright = forward_kinematics(self.model, seed).orientation
        q0 = inverse_kinematics(self.model, cfg.arm.start_position, upright, seed)
        start = forward_kinematics(self.model, q0, np.zeros(n))
        self.start_pose = _pose6(start)

        self.contact = BasketContact(
            cfg.contact.stiffness, cfg.contact_damping, cfg.contact.basket_radius,
            cfg.contact.well_curvature, cfg.contact.tangential_damping,
        )
        high, low = cfg.gains(n)
        self.schedule = GainSchedule(self.tag, high, low)
        self.profile = None
        if self.tag.variable_stiffness:
            self.profile = profile if profile is not None else (
                load_profile(cfg.poc.profile) if cfg.poc.profile else bundled_profile())

        factory = kalman_config_2d if cfg.estimator.two_axis else kalman_config_1d
        self.tracker = KalmanTracker(factory(
            dt=1.0 / cfg.estimator.rate, process_noise=cfg.estimator.process_noise,
            measurement_std=cfg.estimator.noise_std,
        ))
        self.measurements = self._camera_stream()
        self.measurement_times = self.measurements["time_s"].to_numpy(dtype=float)
        self.next_measurement = 0
        self.catch_z: float | None = cfg.catch_plane_z if cfg.planner.height_selector == "fixed" else None
        limits = PlannerLimits.around(
            self.start_pose, cfg.planner.workspace_half_width, v_lin_max=cfg.planner.v_lin_max,
            v_ang_max=cfg.planner.v_ang_max, a_lin_max=cfg.planner.a_lin_max, a_ang_max=cfg.planner.a_ang_max,
        )
        self.planner = PlannerTask(limits, cfg.planner.dt, self.tag.planner == "VM", self.start_pose[3:])
        self.monitor = TorqueMonitor(cfg.controller.torque_lock_duration)

        self.world = WorldState(
            0.0, JointState(q0, np.zeros(n)),
            ObjectState(np.array(cfg.object.release_position, dtype=float),
                        np.array(cfg.object.release_velocity, dtype=float)),
        )
        self.prediction = CatchPrediction.invalid()
        self.direction = DEFAULT_DIRECTION.copy()
        self.dq_command = np.zeros(n)
        self.warm_start = None
        self.events: list[tuple[float, str]] = []
        self.tick_events: list[str] = []
        self.rows: list[list] = []

        self.poc_plan: POCPlan | None = None
        self.K_prev: np.ndarray | None = None
        self.off_diagonal_logged = False
        self.t_trigger: float | None = None
        self.trigger: str | None = None
        self.t_first_contact: float | None = None
        self.analytic_impulse: float | None = None
        self.steady_since: float | None = None
        self.t_steady: float | None = None
        self.outcome: str | None = None

        self.executor: ThreadPoolExecutor | None = None if cfg.sim.deterministic else ThreadPoolExecutor(1)
        self.pending: Future | None = None

    # ------------------------------------------------------------
    def event(self, t: float, name: str):
        self.events.append((t, name))
        self.tick_events.append(name)

    def _camera_stream(self) -> pd.DataFrame:
        """Replayed log, or noisy samples of the free flight seeded by the scenario"""
        est = self.cfg.estimator
        if est.measurements is not None:
            try:
                return read_measurements(est.measurements)
            except (OSError, ValueError) as e:
                raise ConfigError("estimator.measurements", str(e)) from e
        obj = self.cfg.object
        flight = BallisticTrajectory(np.array(obj.release_position), np.array(obj.release_velocity),
                                     g=float(-self.model.gravity[2]))
        return synth_measurements(flight, est.noise_std, est.rate, seed=self.cfg.seed, t_end=self.cfg.sim.t_max)

    def measure(self, t: float):
        """Feed every camera sample due by t to the filter"""
        times = self.measurement_times
        while self.next_measurement < len(times) and times[self.next_measurement] <= t + 1e-9:
            row = self.measurements.iloc[self.next_measurement]
            self.tracker.update(float(row.time_s), measurement_vector(row, self.cfg.estimator.two_axis))
            self.next_measurement += 1

    def select_height(self, t: float, tool: CartesianState) -> bool:
        """Fix the catch height once, from the first valid prediction at the catch plane"""
        first = self.tracker.predict(self.cfg.catch_plane_z, fixed_xy=self.start_pose[:2])
        if not first.valid:
            return False
        height = legacy_catch_height(_pose6(tool), first, self.planner.limits, self.cfg.planner.dt, t,
                                     float(-self.model.gravity[2]))
        if height is None or not self.tracker.predict(height, fixed_xy=self.start_pose[:2]).valid:
            height = self.cfg.catch_plane_z
            self.event(t, "height_selector_fallback")
        self.catch_z = height
        self.event(t, "catch_height_selected")
        logger.info(f"Catch height {height:.3f} m (catch plane {self.cfg.catch_plane_z:.3f} m)")
        return True

    def replan(self, t: float, tool: CartesianState):
        if self.catch_z is None and not self.select_height(t, tool):
            return
        prediction = self.tracker.predict(self.catch_z, fixed_xy=self.start_pose[:2])
        if not prediction.valid:
            return
        self.prediction = prediction
        self.direction = _unit_or_default(prediction.v_at_tc)
        if self.planner.reference is None:
            x_now, v_now = _pose6(tool), np.zeros(6)
        else:
            x_now, v_now = self.planner.reference.sample(t)
        before = len(self.planner.events)
        if self.executor is None:
            self.planner.update(x_now, v_now, prediction, t, self.cfg.sim.dt_ctrl)
        elif self.pending is None or self.pending.done():
            self.pending = self.executor.submit(self.planner.update, x_now, v_now, prediction, t, self.cfg.sim.dt_ctrl)
        for when, name in self.planner.events[before:]:
            self.event(when, name)

    def prc_reference(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        if self.planner.reference is None:
            return self.start_pose.copy(), np.zeros(6)
        return self.planner.reference.sample(t)

    def enter_poc(self, t: float, reason: str, x_ref, v_ref):
        self.t_trigger, self.trigger = t, reason
        self.world = replace(self.world, phase=PHASE_POC)
        self.poc_plan = build_poc_plan(x_ref, v_ref, self.prediction.v_at_tc if self.prediction.valid else
                                       self.world.object.velocity, self.cfg)
        self.K_prev = self.schedule.high.K_p[0] * np.eye(3)
        self.event(t, f"poc_trigger:{reason}")
        logger.info(f"POC triggered at t={t:.4f}s ({reason})")

    def poc_reference(self, t: float, tool: CartesianState):
        elapsed = t - self.t_trigger
        if not self.tag.variable_stiffness:
            x_d, v_d = self.poc_plan.at(elapsed)
            return x_d, v_d, self.schedule.poc()
        c = self.cfg.poc
        x_d, v_d, K_p = poc_step(self.poc_plan, self.profile, tool.position, c.K_d_max, c.K_p_max, c.eps,
                                 self.K_prev, elapsed)
        self.K_prev = K_p
        off_diagonal = float(np.max(np.abs(K_p - np.diag(np.diag(K_p)))))
        if off_diagonal > 0 and not self.off_diagonal_logged:
            self.off_diagonal_logged = True
            self.event(t, "stiffness_off_diagonal_discarded")
            logger.debug(f"position gain off-diagonals up to {off_diagonal:.3f} dropped (diagonal gains only)")
        return x_d, v_d, self.schedule.poc(np.diag(K_p))

    def record(self, t: float, tool: CartesianState, refs: CartesianState, tau, gains, w: float, residual: float):
        arm, obj = self.world.arm, self.world.object
        self.rows.append(
            [t, self.world.phase, *arm.q, *arm.dq, *tau, *tool.position, *tool.twist[:3],
             *refs.position, *refs.twist[:3], *obj.position, *obj.velocity, *self.world.contact_force,
             *gains.K_p[:3], w, residual, ";".join(self.tick_events)]
        )
        self.tick_events = []

    def note_contact(self):
        """First-contact bookkeeping, including the rigid-impact impulse for comparison"""
        if self.t_first_contact is not None or not self.world.object.in_contact:
            return
        self.t_first_contact = self.world.t
        self.event(self.world.t, "first_contact")
        dyn = dynamics(self.model, self.world.arm)
        tool = forward_kinematics(self.model, self.world.arm.q, self.world.arm.dq)
        normal = _unit_or_default(self.world.contact_force)
        try:
            result = impact_impulse(dyn.Lambda_v, tool.twist[:3], self.world.object.velocity,
                                    ImpactParams(self.cfg.contact.restitution, self.cfg.object.mass, normal))
            self.analytic_impulse = abs(result.impulse)
        except (SingularConfigurationError, DimensionError) as e:
            logger.warning(f"⚠️ analytic impulse unavailable: {e}")

    def check_steady(self, t: float) -> bool:
        weight = self.cfg.object.mass * -self.model.gravity[2]
        if abs(self.world.contact_force[2] - weight) < self.cfg.sim.steady_band:
            if self.steady_since is None:
                self.steady_since = t
        else:
            self.steady_since = None
        settled = self.steady_since is not None and t - self.steady_since >= self.cfg.sim.steady_duration - 1e-12
        return settled and t >= self.t_trigger + self.poc_plan.dt_poc - 1e-12

    def resting_in_basket(self, tool: CartesianState) -> bool:
        rel = self.world.object.position - tool.position
        return bool(np.linalg.norm(rel[:2]) <= self.contact.radius and abs(rel[2]) < 0.02)

    # ------------------------------------------------------------
    def run(self) -> SimTrace:
        cfg, model = self.cfg, self.model
        dt_phys, dt_ctrl = cfg.sim.dt_phys, cfg.sim.dt_ctrl
        substeps = _period(dt_ctrl, dt_phys, "control")
        plan_every = _period(cfg.planner.dt, dt_ctrl, "planner")
        n_ticks = int(np.floor(cfg.sim.t_max / dt_ctrl + 1e-9))
        dim_enabled = cfg.dim_enabled
        started = time.perf_counter()

        try:
            for i in range(n_ticks):
                t = i * dt_ctrl
                arm = self.world.arm
                tool = forward_kinematics(model, arm.q, arm.dq)

                if self.world.phase == PHASE_PRC:
                    if i % plan_every == 0:
                        self.replan(t, tool)
                    x_ref, v_ref = self.prc_reference(t)
                    gains = self.schedule.prc()
                    predicted = (self.tag.variable_stiffness and self.prediction.valid
                                 and t >= self.prediction.t_c - 1e-12)
                    if np.linalg.norm(self.world.sensor_force[:3]) > cfg.force_threshold:
                        self.enter_poc(t, "force", x_ref, v_ref)
                    elif predicted:
                        self.enter_poc(t, "predicted", x_ref, v_ref)
                if self.world.phase == PHASE_POC:
                    x_ref, v_ref, gains = self.poc_reference(t, tool)
                refs = _cartesian(x_ref, v_ref)

                tick = control_tick(model, arm, refs, gains, dim_enabled, self.direction, dt_ctrl,
                                    dq_prev=self.dq_command, clamp=cfg.controller.clamp_torques,
                                    warm_start=self.warm_start)
                if tick.status == "solved":
                    self.warm_start = list(tick.diagnostics["solutions"])
                    self.dq_command = tick.dq_star
                else:
                    self.warm_start = None
                    self.dq_command = np.zeros(model.n_dof)
                    self.event(t, tick.diagnostics["event"])
                w = tick.dim_value if dim_enabled else dim_index(model, arm.q, self.direction)
                self.record(t, tool, refs, tick.tau, gains, w, tick.diagnostics.get("clik_residual", float("nan")))

                for k in range(substeps):
                    state = self.world.arm
                    terms = bias_forces(model, state.q, state.dq)
                    if tick.status == "solved":
                        bias = terms[1]
                        tau = impedance_torque(gains, tick.q_star, tick.dq_star, state.q, state.dq, bias)
                    else:
                        tau = tick.tau
                    saturated = np.abs(tau) > model.tau_lim
                    if cfg.controller.clamp_torques:
                        tau = np.clip(tau, -model.tau_lim, model.tau_lim)
                    if self.monitor.update(saturated, dt_phys):
                        self.event(self.world.t, "safety_lock")
                        self.outcome = OUTCOME_LOCKED
                        break
                    self.world = step(self.world, tau, dt_phys, model, self.contact, cfg.object.mass, terms)
                    if self.world.phase == PHASE_PRC:
                        self.measure(self.world.t)
                    self.note_contact()
                if self.outcome is not None:
                    break
                if self.executor is not None and self.pending is not None and self.pending.done():
                    self.pending.result()

                t_next = (i + 1) * dt_ctrl
                if self.world.object.position[2] < cfg.catch_plane_z - MISS_DEPTH:
                    self.outcome = OUTCOME_MISSED
                    self.event(t_next, "object_lost")
                    break
                if self.world.phase == PHASE_POC:
                    if self.check_steady(t_next):
                        self.t_steady = self.steady_since
                        self.outcome = OUTCOME_CAUGHT
                        self.event(t_next, "steady_state")
                        break
                    if t_next >= self.t_trigger + self.poc_plan.dt_poc + cfg.sim.settle_window - 1e-12:
                        tool = forward_kinematics(model, self.world.arm.q)
                        self.outcome = OUTCOME_CAUGHT if self.resting_in_basket(tool) else OUTCOME_MISSED
                        self.event(t_next, "settle_window_elapsed")
                        break
        except SimulationError as e:
            logger.error(f"❌ {e}")
            self.event(self.world.t, "aborted")
            self.outcome = OUTCOME_ABORTED
        finally:
            if self.executor is not None:
                self.executor.shutdown(wait=True)

        if self.outcome is None:
            tool = forward_kinematics(model, self.world.arm.q)
            self.outcome = OUTCOME_CAUGHT if self.t_trigger is not None and self.resting_in_basket(tool) else (
                OUTCOME_MISSED)
        self.world = replace(self.world, phase=PHASE_DONE)
        elapsed = time.perf_counter() - started
        icon = "✅" if self.outcome == OUTCOME_CAUGHT else "❌"
        logger.info(f"{icon} {cfg.name} ({cfg.strategy}): {self.outcome} after {self.world.t:.3f}s "
                    f"simulated, {elapsed:.1f}s wall")
        if self.planner.solve_times:
            logger.debug(f"planner median solve time {np.median(self.planner.solve_times) * 1e3:.3f} ms")
        return SimTrace(pd.DataFrame(self.rows, columns=trace_columns(model.n_dof)), self.events, self.summary(),
                        self.measurements.iloc[: self.next_measurement].reset_index(drop=True))

    def summary(self) -> dict:
        cfg = self.cfg
        poc_window = None
        if self.t_trigger is not None:
            poc_window = [self.t_trigger, self.t_trigger + self.poc_plan.dt_poc]
        prediction = self.prediction
        return {
            "name": cfg.name,
            "strategy": cfg.strategy,
            "outcome": self.outcome,
            "dim_enabled": cfg.dim_enabled,
            "dim_pseudoinverse": f"damped Moore-Penrose, lambda={PINV_DAMPING:g}",
            "t_end": self.world.t,
            "t_first_contact": self.t_first_contact,
            "t_trigger": self.t_trigger,
            "trigger": self.trigger,
            "t_steady": self.t_steady,
            "poc_window": poc_window,
            "catch_height": self.catch_z,
            "measurement_source": cfg.estimator.measurements or "synthetic",
            "predicted_t_c": prediction.t_c if prediction.valid else None,
            "predicted_catch_point": prediction.x_at_tc.tolist() if prediction.valid else None,
            "analytic_impulse": self.analytic_impulse,
            "object_mass": cfg.object.mass,
            "gravity": float(-self.model.gravity[2]),
            "force_threshold": cfg.force_threshold,
            "contact_stiffness": cfg.contact.stiffness,
            "contact_damping": self.contact.d_c,
            "clamp_events": self.monitor.clamp_events,
        }


def run_scenario(cfg: ScenarioConfig, model: ArmModel | None = None, profile=None) -> SimTrace:
    """Simulate one catch end to end"""
    logger.info(f"Running {cfg.name} ({cfg.strategy}, DIM {'on' if cfg.dim_enabled else 'off'})")
    logger.debug(f"DIM pseudoinverse: damped Moore-Penrose, lambda={PINV_DAMPING:g}")
    return _Run(cfg, model, profile).run()
