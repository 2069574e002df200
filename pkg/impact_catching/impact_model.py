"""
Robot-object impact model

Two views of the same collision:
- impact_impulse: rigid one-dimensional frictionless impulse with restitution
- compliant_contact_force: non-adhesive Kelvin-Voigt force used by the simulator

The Kelvin-Voigt contact has a closed-form coefficient of restitution that only
depends on the damping ratio, so the damping needed for a target restitution
can be calibrated once per (k_c, m) pair.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from impact_catching.config import NEAR_SINGULAR_CONDITION
from impact_catching.errors import DimensionError, SingularConfigurationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ImpactParams:
    e: float
    m_o: float
    u: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.e <= 1.0:
            raise ValueError(f"restitution must lie in [0, 1], got {self.e}")
        if self.m_o <= 0:
            raise ValueError(f"object mass must be positive, got {self.m_o}")
        u = np.asarray(self.u, dtype=float)
        if u.shape != (3,) or abs(np.linalg.norm(u) - 1.0) > 1e-9:
            raise DimensionError(f"impact direction must be a unit 3-vector, got {self.u}")
        object.__setattr__(self, "u", u)


@dataclass(frozen=True)
class ImpactResult:
    impulse: float  # N*s along u, acting on the robot
    dv_robot: np.ndarray  # 6-vector
    dv_object: np.ndarray  # 3-vector


def _inverse_inertia(Lambda: np.ndarray) -> np.ndarray:
    Lambda = np.asarray(Lambda, dtype=float)
    if Lambda.shape not in ((3, 3), (6, 6)):
        raise DimensionError(f"operational inertia must be 3x3 or 6x6, got {Lambda.shape}")
    cond = float(np.linalg.cond(Lambda))
    if not np.isfinite(cond) or cond > NEAR_SINGULAR_CONDITION:
        raise SingularConfigurationError("operational inertia is singular", cond)
    return np.linalg.inv(Lambda)


def impact_impulse(Lambda_v, robot_twist, object_vel, params: ImpactParams) -> ImpactResult:
    """
    Impulse exchanged along u when the tool hits the object

    Lambda_v may be the 3x3 translational inertia or the full 6x6 one; with the
    full matrix the angular velocity jump is returned as well.
    """
    A = _inverse_inertia(Lambda_v)
    A_v = A[:3, :3]
    twist = np.zeros(6)
    twist[: len(robot_twist)] = robot_twist
    u = params.u

    relative = float((twist[:3] - np.asarray(object_vel, dtype=float)) @ u)
    impulse = -(1.0 + params.e) * relative / float(u @ (A_v + np.eye(3) / params.m_o) @ u)

    wrench = np.zeros(len(A))
    wrench[:3] = u * impulse
    dv_robot = np.zeros(6)
    dv_robot[: len(A)] = A @ wrench
    return ImpactResult(impulse, dv_robot, -u * impulse / params.m_o)


def compliant_contact_force(penetration: float, penetration_rate: float, k_c: float, d_c: float) -> float:
    """Non-adhesive Kelvin-Voigt normal force, zero outside contact"""
    if penetration <= 0.0:
        return 0.0
    return max(0.0, k_c * penetration + d_c * penetration_rate)


# ============================================================
# Restitution of the compliant contact
# ============================================================
def damping_ratio(k_c: float, d_c: float, m: float) -> float:
    return d_c / (2.0 * np.sqrt(k_c * m))


def _release(zeta: float) -> tuple[float, float]:
    """Release time (in units of 1/omega_n) and restitution for a unit approach speed"""
    if zeta == 0.0:
        return np.pi, 1.0
    if zeta < 1.0:
        wd = np.sqrt(1.0 - zeta**2)
        # force kd + c*dd vanishes at this phase; the rebound speed there is exp(-zeta*t)
        phase = np.pi - np.arctan2(2.0 * zeta * wd, 1.0 - 2.0 * zeta**2)
        t = phase / wd
        return t, float(np.exp(-zeta * t))
    if zeta == 1.0:
        return 2.0, float(np.exp(-2.0))
    s = np.sqrt(zeta**2 - 1.0)
    r1, r2 = -zeta + s, -zeta - s
    t = 2.0 * np.log(r2 / r1) / (r1 - r2)
    rate = (r1 * np.exp(r1 * t) - r2 * np.exp(r2 * t)) / (r1 - r2)
    return float(t), float(abs(rate))


def analytic_restitution(k_c: float, d_c: float, m: float) -> float:
    """Coefficient of restitution of a mass m bouncing on the (k_c, d_c) contact"""
    if k_c <= 0 or d_c < 0 or m <= 0:
        raise ValueError("contact stiffness and mass must be positive, damping non-negative")
    return _release(damping_ratio(k_c, d_c, m))[1]


def contact_duration(k_c: float, d_c: float, m: float) -> float:
    """Time from touchdown to release for the (k_c, d_c) contact"""
    return _release(damping_ratio(k_c, d_c, m))[0] / np.sqrt(k_c / m)


def calibrate_damping(e: float, k_c: float, m: float) -> float:
    """Contact damping giving restitution e for mass m on stiffness k_c"""
    if not 0.0 < e <= 1.0:
        raise ValueError(f"target restitution must lie in (0, 1], got {e}")
    if e == 1.0:
        return 0.0
    zeta_max = 50.0
    if _release(zeta_max)[1] > e:
        raise ValueError(f"restitution {e} is below what a damping ratio of {zeta_max} reaches")
    zeta = brentq(lambda z: _release(z)[1] - e, 1e-12, zeta_max, xtol=1e-14)
    d_c = 2.0 * zeta * np.sqrt(k_c * m)
    logger.info(f"Calibrated contact damping d_c={d_c:.4f} N*s/m (zeta={zeta:.4f}) for e={e}, k_c={k_c}, m={m}")
    return float(d_c)
