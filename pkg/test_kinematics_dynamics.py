"""Tests for arm kinematics, dynamics, reflected mass and DIM"""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from impact_catching.config import DEFAULT_ARM_MODEL
from impact_catching.errors import ConfigError, DimensionError, SingularConfigurationError, SolverError
from impact_catching.kinematics_dynamics import (
    JointState,
    bias_forces,
    dim_gradient,
    dim_index,
    dump_arm_model,
    dynamics,
    forward_kinematics,
    inverse_dynamics,
    inverse_kinematics,
    jacobian,
    joint_inertia,
    kinetic_energy,
    load_arm_model,
    planar_arm,
    reflected_mass,
)

READY_POSE = np.array([0.0, -np.pi / 4, 0.0, -3 * np.pi / 4, 0.0, np.pi / 2, np.pi / 4])


@pytest.fixture(scope="module")
def panda():
    return load_arm_model()


def random_q(model, rng):
    return rng.uniform(model.q_min, model.q_max)


def two_link_terms(q, l1, l2, m1, m2):
    """Closed-form M and in-plane J_v of a two-link arm with tip point masses"""
    c2 = np.cos(q[1])
    s1, c1 = np.sin(q[0]), np.cos(q[0])
    s12, c12 = np.sin(q[0] + q[1]), np.cos(q[0] + q[1])
    M = np.array([
        [m1 * l1**2 + m2 * (l1**2 + l2**2 + 2 * l1 * l2 * c2), m2 * (l2**2 + l1 * l2 * c2)],
        [m2 * (l2**2 + l1 * l2 * c2), m2 * l2**2],
    ])
    J = np.array([[-l1 * s1 - l2 * s12, -l2 * s12], [l1 * c1 + l2 * c12, l2 * c12]])
    return M, J


# ============================================================
# Forward kinematics and Jacobian
# ============================================================
def test_zero_pose_matches_model_file(panda):
    state = forward_kinematics(panda, np.zeros(7))
    ref = panda.reference_pose
    np.testing.assert_allclose(state.position, ref["position"], atol=1e-9)
    # q and -q encode the same rotation
    assert abs(abs(state.orientation @ np.array(ref["quaternion_xyzw"])) - 1.0) < 1e-9


@pytest.mark.parametrize("q, expected", [(0.0, (1.0, 0.0, 0.0)), (np.pi / 2, (0.0, 1.0, 0.0))])
def test_one_link_position(q, expected):
    arm = planar_arm([1.0], [1.0])
    np.testing.assert_allclose(forward_kinematics(arm, [q]).position, expected, atol=1e-12)


def test_quaternion_is_unit(panda):
    rng = np.random.default_rng(0)
    for _ in range(20):
        quat = forward_kinematics(panda, random_q(panda, rng)).orientation
        assert abs(np.linalg.norm(quat) - 1.0) < 1e-9


def test_one_link_jacobian():
    J = jacobian(planar_arm([1.0], [1.0]), [0.0])
    np.testing.assert_allclose(J[:3, 0], [0.0, 1.0, 0.0], atol=1e-12)


def test_two_link_jacobian_matches_closed_form():
    arm = planar_arm([0.7, 0.4], [1.0, 1.0])
    for q in ([0.0, 0.0], [0.3, -1.1], [2.0, 0.5]):
        _, J_ref = two_link_terms(np.array(q), 0.7, 0.4, 1.0, 1.0)
        np.testing.assert_allclose(jacobian(arm, q)[:2], J_ref, atol=1e-12)


def test_jacobian_matches_finite_differences(panda):
    rng = np.random.default_rng(1)
    h = 1e-6
    for _ in range(100):
        q = random_q(panda, rng)
        J = jacobian(panda, q)
        base = forward_kinematics(panda, q)
        for i in range(7):
            dq = np.zeros(7)
            dq[i] = h
            moved = forward_kinematics(panda, q + dq)
            dv = (moved.position - base.position) / h
            dw = (Rotation.from_quat(moved.orientation) * Rotation.from_quat(base.orientation).inv()).as_rotvec() / h
            np.testing.assert_allclose(dv, J[:3, i], atol=1e-5)
            np.testing.assert_allclose(dw, J[3:, i], atol=1e-5)


def test_wrong_dimension_raises(panda):
    with pytest.raises(DimensionError):
        forward_kinematics(panda, np.zeros(6))


# ============================================================
# Dynamics
# ============================================================
def test_pendulum_inertia_and_gravity():
    m, l = 2.0, 0.8
    arm = planar_arm([l], [m])
    result = dynamics(arm, JointState(np.zeros(1), np.zeros(1)))
    assert result.M[0, 0] == pytest.approx(m * l**2, rel=1e-8)
    assert result.g_vec[0] == pytest.approx(m * 9.81 * l, rel=1e-12)


def test_two_link_inertia_matches_closed_form():
    arm = planar_arm([0.7, 0.4], [1.5, 0.8])
    rng = np.random.default_rng(2)
    for _ in range(10):
        q = rng.uniform(-np.pi, np.pi, 2)
        M_ref, _ = two_link_terms(q, 0.7, 0.4, 1.5, 0.8)
        np.testing.assert_allclose(joint_inertia(arm, q), M_ref, atol=1e-8)


def test_inertia_is_symmetric_positive_definite(panda):
    rng = np.random.default_rng(3)
    for _ in range(1000):
        M = joint_inertia(panda, random_q(panda, rng))
        np.testing.assert_allclose(M, M.T, atol=1e-12)
        assert np.min(np.linalg.eigvalsh(M)) > 0


def test_inverse_dynamics_matches_assembled_terms(panda):
    rng = np.random.default_rng(4)
    for _ in range(50):
        q = random_q(panda, rng)
        dq = rng.uniform(-2, 2, 7)
        ddq = rng.uniform(-5, 5, 7)
        result = dynamics(panda, JointState(q, dq))
        expected = result.M @ ddq + result.C_vec + result.g_vec
        np.testing.assert_allclose(inverse_dynamics(panda, q, dq, ddq), expected, rtol=1e-8, atol=1e-9)


def test_translational_inertia_is_spd(panda):
    result = dynamics(panda, JointState(READY_POSE, np.zeros(7)))
    assert not result.near_singular
    np.testing.assert_allclose(result.Lambda_v, result.Lambda_v.T, atol=1e-9)
    assert np.min(np.linalg.eigvalsh(result.Lambda_v)) > 0


def test_unforced_arm_conserves_energy():
    arm = planar_arm([0.3, 0.25], [1.0, 0.8], gravity=(0.0, 0.0, 0.0))
    q, dq = np.array([0.3, 0.9]), np.array([1.2, -0.8])
    dt = 1e-4
    start = kinetic_energy(arm, q, dq)
    for _ in range(10_000):
        M, bias, _ = bias_forces(arm, q, dq)
        dq = dq + dt * np.linalg.solve(M, -bias)
        q = q + dt * dq
    assert abs(kinetic_energy(arm, q, dq) - start) <= 1e-3 * start


# ============================================================
# Reflected mass
# ============================================================
def test_pendulum_reflected_mass_tangent():
    arm = planar_arm([0.8], [2.0])
    assert reflected_mass(arm, [0.0], [0.0, 1.0, 0.0]) == pytest.approx(2.0, rel=1e-8)


def test_radial_direction_is_singular():
    arm = planar_arm([0.8], [2.0])
    with pytest.raises(SingularConfigurationError) as exc:
        reflected_mass(arm, [0.0], [1.0, 0.0, 0.0])
    assert exc.value.condition_number > 1e8


def test_two_link_reflected_mass_matches_closed_form():
    arm = planar_arm([0.7, 0.4], [1.5, 0.8])
    rng = np.random.default_rng(5)
    for _ in range(20):
        q = rng.uniform(-np.pi, np.pi, 2)
        q[1] = np.sign(q[1]) * max(abs(q[1]), 0.3)  # keep away from the stretched singularity
        M_ref, J_ref = two_link_terms(q, 0.7, 0.4, 1.5, 0.8)
        angle = rng.uniform(0, 2 * np.pi)
        u2 = np.array([np.cos(angle), np.sin(angle)])
        expected = 1.0 / (u2 @ J_ref @ np.linalg.solve(M_ref, J_ref.T) @ u2)
        assert reflected_mass(arm, q, [*u2, 0.0]) == pytest.approx(expected, rel=1e-6)


def test_reflected_mass_sign_invariant(panda):
    u = np.array([0.0, 0.0, 1.0])
    assert reflected_mass(panda, READY_POSE, u) == pytest.approx(reflected_mass(panda, READY_POSE, -u), rel=1e-12)


def test_reflected_mass_rejects_non_unit(panda):
    with pytest.raises(DimensionError):
        reflected_mass(panda, READY_POSE, [0.0, 0.0, 2.0])


# ============================================================
# Dynamic Impact Measure
# ============================================================
def test_pendulum_dim_tangent():
    m, l = 2.0, 0.8
    arm = planar_arm([l], [m])
    assert dim_index(arm, [0.0], [0.0, 1.0, 0.0, 0.0, 0.0, 0.0]) == pytest.approx((m * l) ** 2, rel=1e-5)


def test_dim_zero_in_null_direction():
    arm = planar_arm([0.8], [2.0])
    assert dim_index(arm, [0.0], [1.0, 0.0, 0.0]) == pytest.approx(0.0, abs=1e-12)


def test_reflected_mass_and_dim_monotone_in_mass():
    light, heavy = planar_arm([0.8], [1.0]), planar_arm([0.8], [3.0])
    u = [0.0, 1.0, 0.0]
    assert reflected_mass(heavy, [0.2], u) > reflected_mass(light, [0.2], u)
    assert dim_index(heavy, [0.2], u) > dim_index(light, [0.2], u)


def test_dim_gradient_zero_for_constant_direction():
    # an angular impulse about the joint axis sees the same arm at every angle
    arm = planar_arm([0.8], [2.0])
    u = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0]
    for q in (-1.0, 0.0, 2.0):
        np.testing.assert_allclose(dim_gradient(arm, [q], u), [0.0], atol=1e-6)


def test_two_link_dim_gradient_matches_closed_form():
    l1, l2, m1, m2 = 0.7, 0.4, 1.5, 0.8
    arm = planar_arm([l1, l2], [m1, m2])
    u = np.array([0.6, 0.8, 0.0])

    def closed_form_dim(q):
        M, J = two_link_terms(q, l1, l2, m1, m2)
        v = M @ np.linalg.solve(J, u[:2])
        return v @ v

    rng = np.random.default_rng(6)
    for _ in range(10):
        q = np.array([rng.uniform(-np.pi, np.pi), rng.uniform(0.5, 2.5)])
        h = 1e-5
        expected = np.array([
            (closed_form_dim(q + h * e) - closed_form_dim(q - h * e)) / (2 * h) for e in np.eye(2)
        ])
        np.testing.assert_allclose(dim_gradient(arm, q, u), expected, rtol=1e-4, atol=1e-6)


def test_dim_gradient_second_order_convergence(panda):
    rng = np.random.default_rng(7)
    u = np.array([0.0, 0.0, -1.0, 0.0, 0.0, 0.0])
    checked = 0
    for _ in range(1000):
        if checked == 20:
            break
        q = random_q(panda, rng)
        J = jacobian(panda, q)[:3]
        if np.linalg.cond(J @ J.T) > 100:
            continue
        h = 1e-2
        g1, g2, g3 = (dim_gradient(panda, q, u, step=s) for s in (h, h / 2, h / 4))
        ratio = np.linalg.norm(g1 - g2) / np.linalg.norm(g2 - g3)
        assert ratio == pytest.approx(4.0, abs=0.5)
        checked += 1
    assert checked == 20


# ============================================================
# Inverse kinematics and model files
# ============================================================
def test_inverse_kinematics_recovers_pose(panda):
    target = forward_kinematics(panda, READY_POSE + 0.1)
    q = inverse_kinematics(panda, target.position, target.orientation, READY_POSE)
    reached = forward_kinematics(panda, q)
    np.testing.assert_allclose(reached.position, target.position, atol=1e-7)
    assert abs(abs(reached.orientation @ target.orientation) - 1.0) < 1e-9


def test_model_file_dump_and_reload(panda, tmp_path):
    path = dump_arm_model(panda, tmp_path / "arm.yaml")
    reloaded = load_arm_model(path)
    np.testing.assert_allclose(reloaded.link_inertia, panda.link_inertia)
    np.testing.assert_allclose(reloaded.tool_transform, panda.tool_transform, atol=1e-12)


def test_invalid_mass_rejected(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text(DEFAULT_ARM_MODEL.read_text(encoding="utf-8").replace("mass: 4.970", "mass: -1.0"), encoding="utf-8")
    with pytest.raises(ConfigError) as exc:
        load_arm_model(bad)
    assert exc.value.field == "link_mass"


def test_inverse_kinematics_unreachable_raises(panda):
    target = forward_kinematics(panda, READY_POSE)
    with pytest.raises(SolverError) as exc:
        far = target.position + np.array([5.0, 0.0, 0.0])
        inverse_kinematics(panda, far, target.orientation, READY_POSE, max_iter=50)
    assert exc.value.status == "max_iterations"
