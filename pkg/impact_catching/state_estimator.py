"""
Ballistic object estimation

Linear Kalman filter with gravity as the control input, closed-form catch
prediction at a horizontal plane, and a synthetic measurement source standing
in for the camera.

State layouts:
- single axis: [p_z, v_z]
- two axes (camera plane): [p_z, v_z, p_y, v_y], measurements [p_z, p_y]
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from impact_catching.config import (
    GRAVITY,
    KF_INITIAL_COVARIANCE,
    KF_INITIAL_GUESS_1D,
    KF_INITIAL_GUESS_2D,
    KF_MEASUREMENT_STD,
    KF_PROCESS_NOISE,
    MEASUREMENT_RATE,
)
from impact_catching.errors import DimensionError, EstimationError

logger = logging.getLogger(__name__)

MEASUREMENT_COLUMNS = ["time_s", "y_m", "z_m"]


@dataclass(frozen=True, eq=False)
class KalmanConfig:
    F: np.ndarray
    G: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    x0: np.ndarray
    P0: np.ndarray
    dt: float
    u: np.ndarray = field(default_factory=lambda: np.array([-GRAVITY]))

    def __post_init__(self):
        n, m = len(self.F), len(self.H)
        expected = {"F": (n, n), "G": (n, 1), "H": (m, n), "Q": (n, n), "R": (m, m), "x0": (n,), "P0": (n, n)}
        for name, shape in expected.items():
            if np.shape(getattr(self, name)) != shape:
                raise DimensionError(f"{name} must have shape {shape}, got {np.shape(getattr(self, name))}")
        for name in ("Q", "R", "P0"):
            matrix = getattr(self, name)
            if not np.allclose(matrix, matrix.T) or np.min(np.linalg.eigvalsh(matrix)) < -1e-12:
                raise ValueError(f"{name} must be symmetric positive semidefinite")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def two_axis(self) -> bool:
        return len(self.F) == 4


@dataclass(frozen=True)
class CatchPrediction:
    t_c: float
    x_at_tc: np.ndarray
    v_at_tc: np.ndarray
    valid: bool

    @classmethod
    def invalid(cls) -> "CatchPrediction":
        return cls(float("nan"), np.full(3, np.nan), np.full(3, np.nan), False)


def kalman_config_1d(
    dt: float = 1.0 / MEASUREMENT_RATE,
    process_noise: float = KF_PROCESS_NOISE,
    measurement_std: float = KF_MEASUREMENT_STD,
    x0=KF_INITIAL_GUESS_1D,
    initial_covariance: float = KF_INITIAL_COVARIANCE,
) -> KalmanConfig:
    return KalmanConfig(
        F=np.array([[1.0, dt], [0.0, 1.0]]),
        G=np.array([[0.5 * dt**2], [dt]]),
        H=np.array([[1.0, 0.0]]),
        Q=process_noise * np.eye(2),
        R=np.array([[measurement_std**2]]),
        x0=np.array(x0, dtype=float),
        P0=initial_covariance * np.eye(2),
        dt=dt,
    )


def kalman_config_2d(
    dt: float = 1.0 / MEASUREMENT_RATE,
    process_noise: float = KF_PROCESS_NOISE,
    measurement_std: float = KF_MEASUREMENT_STD,
    x0=KF_INITIAL_GUESS_2D,
    initial_covariance: float = KF_INITIAL_COVARIANCE,
) -> KalmanConfig:
    # constant horizontal velocity: the last row keeps v_y
    F = np.array([
        [1.0, dt, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, dt],
        [0.0, 0.0, 0.0, 1.0],
    ])
    return KalmanConfig(
        F=F,
        G=np.array([[0.5 * dt**2], [dt], [0.0], [0.0]]),
        H=np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]]),
        Q=process_noise * np.eye(4),
        R=measurement_std**2 * np.eye(2),
        x0=np.array(x0, dtype=float),
        P0=initial_covariance * np.eye(4),
        dt=dt,
    )


# ============================================================
# Filter
# ============================================================
def kf_predict(state, covariance, config: KalmanConfig) -> tuple[np.ndarray, np.ndarray]:
    state = config.F @ state + config.G @ config.u
    covariance = config.F @ covariance @ config.F.T + config.Q
    return state, 0.5 * (covariance + covariance.T)


def kf_update(state, covariance, measurement, config: KalmanConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    z = np.atleast_1d(np.asarray(measurement, dtype=float))
    innovation = z - config.H @ state
    S = config.H @ covariance @ config.H.T + config.R
    try:
        gain = np.linalg.solve(S, config.H @ covariance).T
    except np.linalg.LinAlgError as e:
        raise EstimationError(f"innovation covariance is not invertible: {S.tolist()}") from e
    state = state + gain @ innovation
    # Joseph form keeps the covariance PSD
    I_KH = np.eye(len(state)) - gain @ config.H
    covariance = I_KH @ covariance @ I_KH.T + gain @ config.R @ gain.T
    return state, 0.5 * (covariance + covariance.T), innovation


def kf_step(state, covariance, measurement, config: KalmanConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One predict-update cycle, returns (state, covariance, innovation)"""
    state, covariance = kf_predict(np.asarray(state, dtype=float), np.asarray(covariance, dtype=float), config)
    return kf_update(state, covariance, measurement, config)


def _descending_crossing(z0: float, vz: float, plane: float, g: float) -> float | None:
    """Time until z0 + vz*t - g*t^2/2 falls through the plane, None when it never does"""
    disc = vz**2 + 2.0 * g * (z0 - plane)
    if disc < 0:
        return None
    t = (vz + np.sqrt(disc)) / g
    return t if t > 0 else None


def predict_catch(
    state, catch_plane_z: float, g: float = GRAVITY, now: float = 0.0, fixed_xy=(0.0, 0.0)
) -> CatchPrediction:
    """
    Ballistic crossing of the catch plane

    g is the gravity magnitude. For a single-axis state the horizontal position
    is fixed_xy; for the two-axis state only x is fixed and y moves at constant
    speed.
    """
    state = np.asarray(state, dtype=float)
    if state.shape not in ((2,), (4,)):
        raise DimensionError(f"state must have 2 or 4 entries, got {state.shape}")
    z0, vz = state[0], state[1]
    t = _descending_crossing(z0, vz, catch_plane_z, g)
    if t is None:
        return CatchPrediction.invalid()
    x, y = float(fixed_xy[0]), float(fixed_xy[1])
    vy = 0.0
    if len(state) == 4:
        y, vy = state[2] + state[3] * t, state[3]
    return CatchPrediction(
        t_c=now + t,
        x_at_tc=np.array([x, y, catch_plane_z]),
        v_at_tc=np.array([0.0, vy, vz - g * t]),
        valid=True,
    )


class KalmanTracker:
    """Owner of the filter state; feeds measurements and answers catch queries"""

    def __init__(self, config: KalmanConfig):
        self.config = config
        self.state = config.x0.copy()
        self.covariance = config.P0.copy()
        self.updates = 0
        self.last_time: float | None = None
        self.last_innovation = np.zeros(len(config.H))

    def update(self, time: float, measurement) -> np.ndarray:
        self.state, self.covariance, self.last_innovation = kf_step(
            self.state, self.covariance, measurement, self.config)
        self.updates += 1
        self.last_time = time
        return self.state

    def predict(self, catch_plane_z: float, fixed_xy=(0.0, 0.0)) -> CatchPrediction:
        if self.updates < 2:
            return CatchPrediction.invalid()
        return predict_catch(self.state, catch_plane_z, -float(self.config.u[0]), self.last_time, fixed_xy)


# ============================================================
# Truth model and synthetic measurements
# ============================================================
@dataclass(frozen=True)
class BallisticTrajectory:
    """Free flight of the tracked point in the world frame"""

    p0: np.ndarray
    v0: np.ndarray
    t0: float = 0.0
    g: float = GRAVITY

    def position(self, t) -> np.ndarray:
        tau = np.asarray(t, dtype=float)[..., None] - self.t0
        gravity = np.array([0.0, 0.0, -self.g])
        return np.asarray(self.p0) + np.asarray(self.v0) * tau + 0.5 * gravity * tau**2

    def velocity(self, t) -> np.ndarray:
        tau = np.asarray(t, dtype=float)[..., None] - self.t0
        return np.asarray(self.v0) + np.array([0.0, 0.0, -self.g]) * tau

    def crossing_time(self, plane_z: float) -> float | None:
        t = _descending_crossing(float(self.p0[2]), float(self.v0[2]), plane_z, self.g)
        return None if t is None else self.t0 + t


def synth_measurements(
    truth: BallisticTrajectory,
    noise_std: float = KF_MEASUREMENT_STD,
    rate: float = MEASUREMENT_RATE,
    seed: int = 0,
    t_end: float = 1.0,
) -> pd.DataFrame:
    """Noisy (y, z) samples of the truth at a fixed rate, one row per sample"""
    if rate <= 0:
        raise ValueError(f"measurement rate must be positive, got {rate}")
    times = truth.t0 + np.arange(1, int(np.floor((t_end - truth.t0) * rate)) + 1) / rate
    positions = truth.position(times)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, noise_std, size=(len(times), 2)) if noise_std > 0 else np.zeros((len(times), 2))
    return pd.DataFrame({
        "time_s": times,
        "y_m": positions[:, 1] + noise[:, 0],
        "z_m": positions[:, 2] + noise[:, 1],
    })


def measurement_vector(row, two_axis: bool) -> np.ndarray:
    """Filter measurement from a (time_s, y_m, z_m) row"""
    if two_axis:
        return np.array([row.z_m, row.y_m])
    return np.array([row.z_m])


def write_measurements(measurements: pd.DataFrame, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    measurements[MEASUREMENT_COLUMNS].to_csv(path, index=False)
    return path


def read_measurements(path: str | Path) -> pd.DataFrame:
    measurements = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in MEASUREMENT_COLUMNS if c not in measurements.columns]
    if missing:
        raise ValueError(f"measurement log {path} is missing columns {missing}")
    logger.info(f"Replaying {len(measurements)} measurements from {path}")
    return measurements[MEASUREMENT_COLUMNS]

