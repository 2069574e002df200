"""
Serial-arm kinematics and dynamics

Forward kinematics, geometric Jacobian, joint-space dynamics (composite
rigid body inertia, recursive Newton-Euler bias forces), operational-space
inertia, reflected mass and the Dynamic Impact Measure (DIM).

All quantities are expressed in the world frame. Joints are revolute about
the z-axis of their modified-DH frame. The tool is lumped into the last
link.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import yaml
from scipy.spatial.transform import Rotation

from impact_catching.config import (
    ARM_MODEL_FORMAT_VERSION,
    DEFAULT_ARM_MODEL,
    DIM_FD_STEP,
    NEAR_SINGULAR_CONDITION,
    PINV_DAMPING,
)
from impact_catching.errors import ConfigError, DimensionError, SingularConfigurationError, SolverError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ArmModel:
    """Kinematic and inertial description of a serial arm"""

    name: str
    dh: np.ndarray  # (n, 4): a_{i-1}, alpha_{i-1}, d_i, theta offset
    link_mass: np.ndarray
    link_com: np.ndarray  # (n, 3), link frame
    link_inertia: np.ndarray  # (n, 3, 3), about COM, link frame
    q_min: np.ndarray
    q_max: np.ndarray
    dq_max: np.ndarray
    ddq_max: np.ndarray
    tau_lim: np.ndarray
    gravity: np.ndarray
    tool_transform: np.ndarray  # 4x4, tool frame in last-link frame
    tool_mass: float = 0.0
    tool_com: np.ndarray = field(default_factory=lambda: np.zeros(3))
    reference_pose: dict | None = None

    def __post_init__(self):
        n = self.n_dof
        if n < 1:
            raise ConfigError("links", "at least one link is required")
        shapes = {
            "link_mass": (n,), "link_com": (n, 3), "link_inertia": (n, 3, 3),
            "q_min": (n,), "q_max": (n,), "dq_max": (n,), "ddq_max": (n,), "tau_lim": (n,),
            "gravity": (3,), "tool_transform": (4, 4), "tool_com": (3,),
        }
        for name, shape in shapes.items():
            if np.shape(getattr(self, name)) != shape:
                raise ConfigError(name, f"expected shape {shape}, got {np.shape(getattr(self, name))}")
        if np.any(self.link_mass <= 0) or self.tool_mass < 0:
            raise ConfigError("link_mass", "masses must be positive")
        for i, inertia in enumerate(self.link_inertia):
            if not np.allclose(inertia, inertia.T) or np.min(np.linalg.eigvalsh(inertia)) <= 0:
                raise ConfigError(f"links[{i}].inertia", "inertia must be symmetric positive definite")
        if np.any(self.q_min >= self.q_max):
            raise ConfigError("q_min", "q_min must be below q_max")
        for name in ("dq_max", "ddq_max", "tau_lim"):
            if np.any(getattr(self, name) <= 0):
                raise ConfigError(name, "limits must be positive")

    @property
    def n_dof(self) -> int:
        return len(self.dh)

    @cached_property
    def lumped_links(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Masses, COMs and inertias with the tool merged into the last link"""
        mass = self.link_mass.astype(float).copy()
        com = self.link_com.astype(float).copy()
        inertia = self.link_inertia.astype(float).copy()
        if self.tool_mass > 0:
            m7, c7, i7 = mass[-1], com[-1], inertia[-1]
            mt = self.tool_mass
            m = m7 + mt
            c = (m7 * c7 + mt * self.tool_com) / m
            d7, dt = c7 - c, self.tool_com - c
            shift = m7 * (d7 @ d7 * np.eye(3) - np.outer(d7, d7)) + mt * (dt @ dt * np.eye(3) - np.outer(dt, dt))
            mass[-1], com[-1], inertia[-1] = m, c, i7 + shift
        return mass, com, inertia


@dataclass(frozen=True)
class JointState:
    q: np.ndarray
    dq: np.ndarray
    ddq: np.ndarray | None = None


@dataclass(frozen=True)
class CartesianState:
    position: np.ndarray
    orientation: np.ndarray  # unit quaternion, scalar-last (x, y, z, w)
    twist: np.ndarray  # (v, omega)

    @property
    def rotation(self) -> np.ndarray:
        return Rotation.from_quat(self.orientation).as_matrix()


@dataclass(frozen=True)
class DynamicsEval:
    M: np.ndarray
    C_vec: np.ndarray
    g_vec: np.ndarray
    J: np.ndarray
    Lambda: np.ndarray
    Lambda_v: np.ndarray
    near_singular: bool = False
    condition_number: float = 1.0


@dataclass(frozen=True)
class _Frames:
    rotations: np.ndarray  # (n, 3, 3)
    origins: np.ndarray  # (n, 3)
    axes: np.ndarray  # (n, 3)
    coms: np.ndarray  # (n, 3) world COM of the lumped links
    tool: np.ndarray  # 4x4


def _dh_transform(a: float, alpha: float, d: float, theta: float) -> np.ndarray:
    ca, sa, ct, st = np.cos(alpha), np.sin(alpha), np.cos(theta), np.sin(theta)
    return np.array([
        [ct, -st, 0.0, a],
        [st * ca, ct * ca, -sa, -sa * d],
        [st * sa, ct * sa, ca, ca * d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def _check_q(model: ArmModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (model.n_dof,):
        raise DimensionError(f"expected {model.n_dof} joint values, got shape {q.shape}")
    return q


def _frames(model: ArmModel, q: np.ndarray) -> _Frames:
    n = model.n_dof
    _, com, _ = model.lumped_links
    rotations = np.empty((n, 3, 3))
    origins = np.empty((n, 3))
    T = np.eye(4)
    for i, (a, alpha, d, offset) in enumerate(model.dh):
        T = T @ _dh_transform(a, alpha, d, q[i] + offset)
        rotations[i] = T[:3, :3]
        origins[i] = T[:3, 3]
    coms = origins + np.einsum("nij,nj->ni", rotations, com)
    return _Frames(rotations, origins, rotations[:, :, 2].copy(), coms, T @ model.tool_transform)


def forward_kinematics(model: ArmModel, q, dq=None) -> CartesianState:
    """Pose of the tool frame in the world frame (twist filled when dq is given)"""
    q = _check_q(model, q)
    frames = _frames(model, q)
    twist = np.zeros(6) if dq is None else _jacobian(frames) @ _check_q(model, dq)
    quat = Rotation.from_matrix(frames.tool[:3, :3]).as_quat()
    return CartesianState(frames.tool[:3, 3].copy(), quat / np.linalg.norm(quat), twist)


def _jacobian(frames: _Frames) -> np.ndarray:
    p = frames.tool[:3, 3]
    Jv = np.cross(frames.axes, p - frames.origins).T
    return np.vstack([Jv, frames.axes.T])


def jacobian(model: ArmModel, q) -> np.ndarray:
    """Geometric 6xn Jacobian of the tool point, linear rows first"""
    return _jacobian(_frames(model, _check_q(model, q)))


def _crba(model: ArmModel, frames: _Frames) -> tuple[np.ndarray, np.ndarray]:
    """Joint inertia matrix and gravity torques from composite bodies"""
    n = model.n_dof
    mass, _, inertia = model.lumped_links
    M = np.zeros((n, n))
    g_vec = np.zeros(n)
    m_c = 0.0
    h = np.zeros(3)  # first moment of the composite body about the world origin
    I_o = np.zeros((3, 3))  # composite inertia about the world origin
    for i in reversed(range(n)):
        c = frames.coms[i]
        R = frames.rotations[i]
        m_c += mass[i]
        h += mass[i] * c
        I_o += R @ inertia[i] @ R.T + mass[i] * (c @ c * np.eye(3) - np.outer(c, c))
        z, o = frames.axes[i], frames.origins[i]
        f = np.cross(z, h - m_c * o)
        L = I_o @ z - np.cross(h, np.cross(z, o))
        moments = L - np.cross(frames.origins[: i + 1], f)
        column = np.einsum("ij,ij->i", frames.axes[: i + 1], moments)
        M[: i + 1, i] = column
        M[i, : i + 1] = column
        g_vec[i] = -z @ np.cross(h - m_c * o, model.gravity)
    return M, g_vec


def _rnea(model: ArmModel, frames: _Frames, dq: np.ndarray, ddq: np.ndarray, gravity: np.ndarray) -> np.ndarray:
    n = model.n_dof
    mass, _, inertia = model.lumped_links
    omega = np.zeros(3)
    domega = np.zeros(3)
    acc = -np.asarray(gravity, dtype=float)
    o_prev = np.zeros(3)
    forces = np.empty((n, 3))
    moments = np.empty((n, 3))
    for i in range(n):
        z, o, c = frames.axes[i], frames.origins[i], frames.coms[i]
        r = o - o_prev
        acc = acc + np.cross(domega, r) + np.cross(omega, np.cross(omega, r))
        spin = dq[i] * z
        domega = domega + ddq[i] * z + np.cross(omega, spin)
        omega = omega + spin
        rc = c - o
        acc_c = acc + np.cross(domega, rc) + np.cross(omega, np.cross(omega, rc))
        Iw = frames.rotations[i] @ inertia[i] @ frames.rotations[i].T
        forces[i] = mass[i] * acc_c
        moments[i] = Iw @ domega + np.cross(omega, Iw @ omega) + np.cross(rc, forces[i])
        o_prev = o

    tau = np.zeros(n)
    f_next = np.zeros(3)
    n_next = np.zeros(3)
    for i in reversed(range(n)):
        o = frames.origins[i]
        n_i = moments[i] + n_next
        if i < n - 1:
            n_i = n_i + np.cross(frames.origins[i + 1] - o, f_next)
        f_next = forces[i] + f_next
        n_next = n_i
        tau[i] = frames.axes[i] @ n_i
    return tau


def inverse_dynamics(model: ArmModel, q, dq, ddq) -> np.ndarray:
    """Joint torques for the given motion (recursive Newton-Euler)"""
    q = _check_q(model, q)
    frames = _frames(model, q)
    return _rnea(model, frames, _check_q(model, dq), _check_q(model, ddq), model.gravity)


def joint_inertia(model: ArmModel, q) -> np.ndarray:
    return _crba(model, _frames(model, _check_q(model, q)))[0]


def bias_forces(model: ArmModel, q, dq) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """M, C_vec + g_vec and J at one state, the minimum the integrator needs"""
    q = _check_q(model, q)
    frames = _frames(model, q)
    M, _ = _crba(model, frames)
    bias = _rnea(model, frames, _check_q(model, dq), np.zeros(model.n_dof), model.gravity)
    return M, bias, _jacobian(frames)


def _operational_inertia(A: np.ndarray) -> tuple[np.ndarray, float, bool]:
    cond = float(np.linalg.cond(A))
    near_singular = not np.isfinite(cond) or cond > NEAR_SINGULAR_CONDITION
    if near_singular:
        return np.linalg.inv(A + PINV_DAMPING * np.eye(len(A))), cond, True
    return np.linalg.inv(A), cond, False


def dynamics(model: ArmModel, state: JointState) -> DynamicsEval:
    q = _check_q(model, state.q)
    dq = _check_q(model, state.dq)
    frames = _frames(model, q)
    M, g_vec = _crba(model, frames)
    C_vec = _rnea(model, frames, dq, np.zeros(model.n_dof), np.zeros(3))
    J = _jacobian(frames)
    Minv_Jt = np.linalg.solve(M, J.T)
    Lambda, cond, near_singular = _operational_inertia(J @ Minv_Jt)
    Lambda_v, cond_v, near_v = _operational_inertia(J[:3] @ Minv_Jt[:, :3])
    if near_singular or near_v:
        logger.debug(f"near-singular operational inertia (cond {max(cond, cond_v):.3e}), damped inverse used")
    return DynamicsEval(M, C_vec, g_vec, J, Lambda, Lambda_v, near_singular or near_v, max(cond, cond_v))


def inverse_mobility(model: ArmModel, q) -> np.ndarray:
    """Translational inverse inertia J_v M^-1 J_v^T (the inverse of Lambda_v)"""
    q = _check_q(model, q)
    frames = _frames(model, q)
    M, _ = _crba(model, frames)
    Jv = _jacobian(frames)[:3]
    return Jv @ np.linalg.solve(M, Jv.T)


def _unit(u, sizes: tuple[int, ...]) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.ndim != 1 or len(u) not in sizes:
        raise DimensionError(f"direction must have length in {sizes}, got shape {u.shape}")
    if abs(np.linalg.norm(u) - 1.0) > 1e-9:
        raise DimensionError(f"direction must be a unit vector, norm is {np.linalg.norm(u):.12f}")
    return u


def reflected_mass(model: ArmModel, q, u) -> float:
    """Mass perceived at the tool along unit direction u, (u^T Lambda_v^-1 u)^-1"""
    u = _unit(u, (3,))
    A_v = inverse_mobility(model, q)
    mobility = float(u @ A_v @ u)
    if mobility <= 1e-12 * max(np.trace(A_v), 1e-300):
        raise SingularConfigurationError(f"no tool mobility along {u}", float(np.linalg.cond(A_v)))
    return 1.0 / mobility


def _task_rows(J: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # force-only impulses act on the translational rows
    if len(u) == 3:
        return J[:3], u
    if np.linalg.norm(u[3:]) == 0.0:
        return J[:3], u[:3]
    return J, u


def dim_index(model: ArmModel, q, u) -> float:
    """Dynamic Impact Measure w = u^T J+^T M M^T J+ u with a damped Moore-Penrose inverse"""
    u = _unit(u, (3, 6))
    q = _check_q(model, q)
    frames = _frames(model, q)
    M, _ = _crba(model, frames)
    J, u = _task_rows(_jacobian(frames), u)
    pinv_u = J.T @ np.linalg.solve(J @ J.T + PINV_DAMPING * np.eye(len(J)), u)
    v = M.T @ pinv_u
    return float(v @ v)


def dim_gradient(model: ArmModel, q, u, step: float = DIM_FD_STEP) -> np.ndarray:
    """Central-difference gradient of dim_index with respect to q"""
    q = _check_q(model, q)
    grad = np.zeros(model.n_dof)
    for i in range(model.n_dof):
        dq = np.zeros(model.n_dof)
        dq[i] = step
        grad[i] = (dim_index(model, q + dq, u) - dim_index(model, q - dq, u)) / (2.0 * step)
    return grad


def kinetic_energy(model: ArmModel, q, dq) -> float:
    dq = _check_q(model, dq)
    return 0.5 * float(dq @ joint_inertia(model, q) @ dq)


def pose_error(position_d, quat_d, position_a, quat_a) -> np.ndarray:
    """6-D pose error: position difference and quaternion-log orientation error"""
    rot_err = Rotation.from_quat(quat_d) * Rotation.from_quat(quat_a).inv()
    return np.concatenate([np.asarray(position_d) - np.asarray(position_a), rot_err.as_rotvec()])


def inverse_kinematics(model: ArmModel, position, quat, q_seed, max_iter: int = 300, tol: float = 1e-10) -> np.ndarray:
    """Damped least-squares IK on the 6-D pose error, clipped to joint limits"""
    q = _check_q(model, q_seed).copy()
    damping = 1e-4
    for _ in range(max_iter):
        state = forward_kinematics(model, q)
        err = pose_error(position, quat, state.position, state.orientation)
        if np.linalg.norm(err) < tol:
            return q
        J = jacobian(model, q)
        q = np.clip(q + J.T @ np.linalg.solve(J @ J.T + damping * np.eye(6), err), model.q_min, model.q_max)
    state = forward_kinematics(model, q)
    residual = np.linalg.norm(pose_error(position, quat, state.position, state.orientation))
    if residual > 1e-6:
        raise SolverError(f"inverse kinematics did not converge (residual {residual:.3e})", status="max_iterations")
    return q


# ============================================================
# Model files
# ============================================================
def _inertia_from_spec(spec, mass: float, where: str) -> np.ndarray:
    if isinstance(spec, dict) and "cylinder" in spec:
        cyl = spec["cylinder"]
        r, h = float(cyl["radius"]), float(cyl["length"])
        axis = "xyz".index(cyl.get("axis", "z"))
        diag = np.full(3, mass * (3 * r**2 + h**2) / 12.0)
        diag[axis] = 0.5 * mass * r**2
        return np.diag(diag)
    matrix = np.asarray(spec, dtype=float)
    if matrix.shape != (3, 3):
        raise ConfigError(where, "inertia must be a 3x3 matrix or a cylinder description")
    return matrix


def load_arm_model(path: str | Path = DEFAULT_ARM_MODEL) -> ArmModel:
    """Load an arm model from its YAML description"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Arm model file not found: {path}")
    with open(path, encoding="utf-8") as f:
        raw = yaml.safe_load(f) or {}

    version = raw.get("format_version")
    if version != ARM_MODEL_FORMAT_VERSION:
        raise ConfigError("format_version", f"unsupported arm model version {version!r}")
    try:
        links = raw["links"]
        limits = raw["limits"]
        tool = raw.get("tool", {})
        dh = np.array([[lk["a"], lk["alpha"], lk["d"], lk.get("theta_offset", 0.0)] for lk in links], dtype=float)
        mass = np.array([lk["mass"] for lk in links], dtype=float)
        com = np.array([lk["com"] for lk in links], dtype=float)
        inertia = np.array([_inertia_from_spec(lk["inertia"], lk["mass"], f"links[{i}].inertia")
                            for i, lk in enumerate(links)])
        tool_T = np.eye(4)
        tool_T[:3, :3] = Rotation.from_euler("xyz", tool.get("rpy", [0.0, 0.0, 0.0])).as_matrix()
        tool_T[:3, 3] = tool.get("translation", [0.0, 0.0, 0.0])
        model = ArmModel(
            name=raw.get("name", path.stem),
            dh=dh, link_mass=mass, link_com=com, link_inertia=inertia,
            q_min=np.array(limits["q_min"], dtype=float), q_max=np.array(limits["q_max"], dtype=float),
            dq_max=np.array(limits["dq_max"], dtype=float), ddq_max=np.array(limits["ddq_max"], dtype=float),
            tau_lim=np.array(limits["tau_lim"], dtype=float),
            gravity=np.array(raw.get("gravity", [0.0, 0.0, -9.81]), dtype=float),
            tool_transform=tool_T, tool_mass=float(tool.get("mass", 0.0)),
            tool_com=np.array(tool.get("com", [0.0, 0.0, 0.0]), dtype=float),
            reference_pose=raw.get("reference_pose_at_zero"),
        )
    except KeyError as e:
        raise ConfigError(str(e.args[0]), "required field missing in arm model file") from e
    logger.info(f"Loaded arm model '{model.name}' ({model.n_dof} DoF) from {path}")
    return model


def planar_arm(lengths, masses, gravity=(0.0, -9.81, 0.0)) -> ArmModel:
    """Planar chain in the xy-plane with point masses at the link tips"""
    lengths = np.asarray(lengths, dtype=float)
    masses = np.asarray(masses, dtype=float)
    n = len(lengths)
    dh = np.zeros((n, 4))
    dh[1:, 0] = lengths[:-1]
    com = np.zeros((n, 3))
    com[:, 0] = lengths
    tool = np.eye(4)
    tool[0, 3] = lengths[-1]
    return ArmModel(
        name=f"planar_{n}link", dh=dh, link_mass=masses, link_com=com,
        link_inertia=np.array([1e-9 * np.eye(3)] * n),
        q_min=np.full(n, -np.pi), q_max=np.full(n, np.pi), dq_max=np.full(n, 10.0),
        ddq_max=np.full(n, 100.0), tau_lim=np.full(n, 100.0),
        gravity=np.asarray(gravity, dtype=float), tool_transform=tool,
    )


def dump_arm_model(model: ArmModel, path: str | Path) -> Path:
    """Write the model back to YAML with explicit inertia matrices"""
    links = [
        {
            "a": float(a), "alpha": float(alpha), "d": float(d), "theta_offset": float(offset),
            "mass": float(model.link_mass[i]), "com": model.link_com[i].tolist(),
            "inertia": model.link_inertia[i].tolist(),
        }
        for i, (a, alpha, d, offset) in enumerate(model.dh)
    ]
    raw = {
        "format_version": ARM_MODEL_FORMAT_VERSION,
        "name": model.name,
        "gravity": model.gravity.tolist(),
        "links": links,
        "limits": {name: getattr(model, name).tolist() for name in ("q_min", "q_max", "dq_max", "ddq_max", "tau_lim")},
        "tool": {
            "translation": model.tool_transform[:3, 3].tolist(),
            "rpy": Rotation.from_matrix(model.tool_transform[:3, :3]).as_euler("xyz").tolist(),
            "mass": float(model.tool_mass),
            "com": model.tool_com.tolist(),
        },
    }
    if model.reference_pose is not None:
        raw["reference_pose_at_zero"] = model.reference_pose
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(raw, f, sort_keys=False)
    return path
