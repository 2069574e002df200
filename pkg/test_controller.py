"""Tests for the CLIK/DIM task stack, joint constraints and the joint impedance law"""

import time
from dataclasses import replace

import numpy as np
import pytest

from impact_catching import controller
from impact_catching.controller import (
    ControlGains,
    GainSchedule,
    StrategyTag,
    TorqueMonitor,
    clik_objective,
    clik_target,
    control_tick,
    dim_objective,
    joint_constraints,
)
from impact_catching.errors import ConfigError
from impact_catching.kinematics_dynamics import (
    CartesianState,
    JointState,
    dim_gradient,
    dim_index,
    dynamics,
    forward_kinematics,
    jacobian,
    load_arm_model,
    planar_arm,
)
from impact_catching.qp_core import HierarchyResult, QPProblem, TaskLevel, TaskStack, solve_hierarchy

READY_POSE = np.array([0.0, -np.pi / 4, 0.0, -3 * np.pi / 4, 0.0, np.pi / 2, np.pi / 4])
DIM_DIRECTION = np.array([0.0, 0.0, -1.0])


@pytest.fixture(scope="module")
def panda():
    return load_arm_model()


@pytest.fixture(scope="module")
def loose_panda(panda):
    """Same arm with acceleration limits wide enough to leave the CLIK optimum unconstrained"""
    return replace(panda, ddq_max=np.full(7, 1e4))


def gains(n=7, K_p=45.0):
    return ControlGains(K_p=K_p, K_v=1.0, K_qp=np.full(n, 100.0), K_qd=np.full(n, 20.0))


def at_rest(q):
    return JointState(np.asarray(q, dtype=float), np.zeros(len(q)))


def holding_reference(model, q):
    return forward_kinematics(model, q, np.zeros(len(q)))


def shifted_reference(model, q, offset):
    here = forward_kinematics(model, q, np.zeros(len(q)))
    return CartesianState(here.position + np.asarray(offset), here.orientation, np.zeros(6))


# ============================================================
# CLIK
# ============================================================
def test_zero_error_gives_zero_velocity(panda):
    tick = control_tick(panda, at_rest(READY_POSE), holding_reference(panda, READY_POSE), gains(), False,
                        DIM_DIRECTION, 1e-3)
    assert tick.status == "solved"
    np.testing.assert_allclose(tick.dq_star, 0.0, atol=1e-7)


def test_pure_vertical_error_target(panda):
    actual = holding_reference(panda, READY_POSE)
    desired = shifted_reference(panda, READY_POSE, [0.0, 0.0, 0.01])
    np.testing.assert_allclose(clik_target(desired, actual, gains()), [0, 0, 0.45, 0, 0, 0], atol=1e-12)


def test_clik_objective_is_least_squares(panda):
    actual = holding_reference(panda, READY_POSE)
    desired = shifted_reference(panda, READY_POSE, [0.02, -0.01, 0.03])
    H, g = clik_objective(panda, READY_POSE, desired, actual, gains())
    J = jacobian(panda, READY_POSE)
    target = clik_target(desired, actual, gains())
    dq = np.linspace(-0.1, 0.1, 7)
    direct = 0.5 * np.sum((J @ dq - target) ** 2) - 0.5 * target @ target
    assert 0.5 * dq @ H @ dq + g @ dq == pytest.approx(direct, abs=1e-12)


def test_unconstrained_solution_is_pseudoinverse(loose_panda):
    desired = shifted_reference(loose_panda, READY_POSE, [0.002, 0.001, -0.003])
    tick = control_tick(loose_panda, at_rest(READY_POSE), desired, gains(), False, DIM_DIRECTION, 1e-3)
    J = jacobian(loose_panda, READY_POSE)
    target = clik_target(desired, holding_reference(loose_panda, READY_POSE), gains())
    np.testing.assert_allclose(tick.dq_star, np.linalg.pinv(J) @ target, atol=1e-6)


# ============================================================
# DIM objective
# ============================================================
def test_dim_objective_vanishes_without_gradient(panda, monkeypatch):
    monkeypatch.setattr(controller, "dim_gradient", lambda model, q, u: np.zeros(model.n_dof))
    H, g = dim_objective(panda, READY_POSE, DIM_DIRECTION, 1e-3)
    assert not H.any() and not g.any()


def test_two_link_dim_step_follows_gradient():
    arm = planar_arm([0.4, 0.3], [1.0, 0.5])
    q, u, dt = np.array([0.3, 1.2]), np.array([1.0, 0.0, 0.0]), 0.1
    H, g = dim_objective(arm, q, u, dt)
    result = solve_hierarchy(TaskStack([TaskLevel(H, g, name="dim")], QPProblem(np.zeros((2, 2)), np.zeros(2))))
    grad = dim_gradient(arm, q, u)
    assert result.solved
    cosine = result.x @ grad / (np.linalg.norm(result.x) * np.linalg.norm(grad))
    assert cosine == pytest.approx(1.0, abs=1e-6)
    assert grad @ result.x == pytest.approx(dim_index(arm, q, u) / dt, rel=1e-5)


def test_dim_objective_value_by_substitution(panda):
    dt = 1e-3
    H, g = dim_objective(panda, READY_POSE, DIM_DIRECTION, dt)
    grad = dim_gradient(panda, READY_POSE, DIM_DIRECTION)
    w = dim_index(panda, READY_POSE, DIM_DIRECTION)
    n = np.linalg.norm(grad)
    expected = 0.5 * dt**2 * n**2 - w * dt * n
    assert TaskLevel(H, g).objective(grad / n) == pytest.approx(expected, rel=1e-9)


def test_dim_objective_rejects_bad_period(panda):
    with pytest.raises(ValueError):
        dim_objective(panda, READY_POSE, DIM_DIRECTION, 0.0)


# ============================================================
# Joint constraints
# ============================================================
def test_upper_position_limit_blocks_motion(panda):
    q = READY_POSE.copy()
    q[0] = panda.q_max[0]
    bounds = joint_constraints(panda, q, np.zeros(7), 1e-3)
    assert bounds.upper[0] <= 0.0


def test_stationary_start_acceleration_box():
    arm = replace(planar_arm([0.4, 0.3], [1.0, 0.5]), ddq_max=np.full(2, 10.0))
    bounds = joint_constraints(arm, np.zeros(2), np.zeros(2), 1e-3)
    np.testing.assert_allclose(bounds.upper, 0.01, atol=1e-15)
    np.testing.assert_allclose(bounds.lower, -0.01, atol=1e-15)
    assert not bounds.relaxed


def test_bounds_reproduced_by_direct_formula(panda):
    rng = np.random.default_rng(50)
    dt = 1e-3
    for _ in range(200):
        q = rng.uniform(panda.q_min, panda.q_max)
        dq_prev = rng.uniform(-panda.dq_max, panda.dq_max)
        bounds = joint_constraints(panda, q, dq_prev, dt)
        lower = np.maximum((panda.q_min - q) / dt, -panda.dq_max)
        upper = np.minimum((panda.q_max - q) / dt, panda.dq_max)
        if not bounds.relaxed:
            lower = np.maximum(lower, dq_prev - panda.ddq_max * dt)
            upper = np.minimum(upper, dq_prev + panda.ddq_max * dt)
        np.testing.assert_allclose(bounds.lower, lower, rtol=1e-15)
        np.testing.assert_allclose(bounds.upper, upper, rtol=1e-15)
        assert np.all(bounds.lower <= bounds.upper)


def test_integrated_reference_stays_in_limits(panda):
    q = READY_POSE.copy()
    q[3] = panda.q_max[3] - 1e-4
    desired = shifted_reference(panda, q, [0.0, 0.0, 0.2])
    tick = control_tick(panda, at_rest(q), desired, gains(), False, DIM_DIRECTION, 1e-3)
    assert np.all(tick.q_star <= panda.q_max + 1e-6)
    assert np.all(tick.q_star >= panda.q_min - 1e-6)


# ============================================================
# Tick assembly
# ============================================================
def test_perfect_tracking_gives_bias_torques(panda):
    state = at_rest(READY_POSE)
    tick = control_tick(panda, state, holding_reference(panda, READY_POSE), gains(), False, DIM_DIRECTION, 1e-3,
                        clamp=False)
    dyn = dynamics(panda, state)
    np.testing.assert_allclose(tick.tau, dyn.C_vec + dyn.g_vec, atol=1e-5)


def test_dim_moves_in_clik_nullspace(loose_panda):
    tick = control_tick(loose_panda, at_rest(READY_POSE), holding_reference(loose_panda, READY_POSE), gains(),
                        True, DIM_DIRECTION, 1e-3)
    assert tick.status == "solved"
    assert np.linalg.norm(jacobian(loose_panda, READY_POSE) @ tick.dq_star) <= 1e-7
    assert np.isfinite(tick.dim_value)


def test_dim_keeps_clik_residual(panda):
    desired = shifted_reference(panda, READY_POSE, [0.001, 0.0, -0.002])
    args = (panda, at_rest(READY_POSE), desired, gains())
    without = control_tick(*args, False, DIM_DIRECTION, 1e-3)
    with_dim = control_tick(*args, True, DIM_DIRECTION, 1e-3)
    assert abs(with_dim.diagnostics["clik_residual"] - without.diagnostics["clik_residual"]) <= 1e-7


def test_velocities_within_bounds(panda):
    desired = shifted_reference(panda, READY_POSE, [0.3, 0.0, 0.3])
    tick = control_tick(panda, at_rest(READY_POSE), desired, gains(), True, DIM_DIRECTION, 1e-3)
    bounds = joint_constraints(panda, READY_POSE, np.zeros(7), 1e-3)
    assert np.all(tick.dq_star <= bounds.upper + 1e-7)
    assert np.all(tick.dq_star >= bounds.lower - 1e-7)


def test_torques_clamped(panda):
    desired = shifted_reference(panda, READY_POSE, [0.3, 0.0, 0.3])
    stiff = ControlGains(K_p=45.0, K_v=1.0, K_qp=np.full(7, 1e4), K_qd=np.full(7, 1e5))
    tick = control_tick(panda, at_rest(READY_POSE), desired, stiff, False, DIM_DIRECTION, 1e-3)
    assert np.all(np.abs(tick.tau) <= panda.tau_lim)
    assert tick.saturated.any()


def test_solver_failure_gives_safe_stop(panda, monkeypatch):
    failed = HierarchyResult(np.zeros(7), "infeasible", [], [], 3, 0)
    monkeypatch.setattr(controller, "solve_hierarchy", lambda stack, warm_start=None: failed)
    state = at_rest(READY_POSE)
    tick = control_tick(panda, state, holding_reference(panda, READY_POSE), gains(), False, DIM_DIRECTION, 1e-3)
    assert tick.status == "infeasible"
    np.testing.assert_array_equal(tick.dq_star, np.zeros(7))
    np.testing.assert_allclose(tick.tau, np.clip(dynamics(panda, state).g_vec, -panda.tau_lim, panda.tau_lim))
    assert tick.diagnostics["event"] == "safe_stop:infeasible"


# ============================================================
# Gains, schedules and torque monitoring
# ============================================================
def test_gains_must_be_positive():
    with pytest.raises(ConfigError) as info:
        ControlGains(K_p=45.0, K_v=1.0, K_qp=np.full(7, 100.0), K_qd=np.array([20.0] * 6 + [0.0]))
    assert info.value.field == "K_qd"


def test_position_gain_replacement():
    base = gains()
    soft = base.with_position_gain([10.0, 10.0, 4.0])
    np.testing.assert_array_equal(soft.K_p, [10, 10, 4, 45, 45, 45])
    np.testing.assert_array_equal(base.K_p, np.full(6, 45.0))


@pytest.mark.parametrize("tag, planner, poc, dim", [
    ("FP-KL", "FP", "KL", False),
    ("VM-SIC", "VM", "SIC", False),
    ("VM-VIC-DIM", "VM", "VIC", True),
])
def test_strategy_tags(tag, planner, poc, dim):
    parsed = StrategyTag.parse(tag)
    assert (parsed.planner, parsed.poc, parsed.dim) == (planner, poc, dim)


def test_unknown_strategy_rejected():
    with pytest.raises(ConfigError):
        StrategyTag.parse("VM-DIM")


def test_gain_schedules():
    high, low = gains(K_p=45.0), gains(K_p=8.0)
    sic = GainSchedule(StrategyTag.parse("VM-SIC"), high, low)
    assert sic.prc() is high and sic.poc() is low
    kl = GainSchedule(StrategyTag.parse("VM-KL"), high, low)
    assert kl.prc() is low and kl.poc() is low
    vic = GainSchedule(StrategyTag.parse("VM-VIC"), high, low)
    np.testing.assert_array_equal(vic.poc([20.0, 20.0, 5.0]).K_p[:3], [20.0, 20.0, 5.0])


def test_torque_monitor_locks_after_sustained_clamp():
    monitor = TorqueMonitor(threshold=0.005)
    for _ in range(5):
        assert not monitor.update([True], 1e-3)
    assert monitor.update([True], 1e-3)


def test_torque_monitor_resets_on_release():
    monitor = TorqueMonitor(threshold=0.005)
    for _ in range(4):
        monitor.update([False, True], 1e-3)
    monitor.update([False, False], 1e-3)
    for _ in range(4):
        monitor.update([True, False], 1e-3)
    assert not monitor.locked
    assert monitor.clamp_events == 2


# ============================================================
# Closed-loop properties
# ============================================================
@pytest.mark.acceptance
def test_dim_monotone_during_hold(loose_panda):
    dt = 1e-3
    q = READY_POSE.copy()
    values = []
    for _ in range(200):
        tick = control_tick(loose_panda, at_rest(q), holding_reference(loose_panda, q), gains(), True,
                            DIM_DIRECTION, dt)
        values.append(dim_index(loose_panda, q, DIM_DIRECTION))
        q = tick.q_star
    assert np.all(np.diff(values) >= -1e-9)


@pytest.mark.acceptance
def test_tick_time_budget(panda):
    desired = shifted_reference(panda, READY_POSE, [0.0, 0.0, 0.01])
    control_tick(panda, at_rest(READY_POSE), desired, gains(), True, DIM_DIRECTION, 1e-3)
    durations = []
    for _ in range(20):
        start = time.perf_counter()
        control_tick(panda, at_rest(READY_POSE), desired, gains(), True, DIM_DIRECTION, 1e-3)
        durations.append(time.perf_counter() - start)
    assert np.median(durations) <= 1e-3
