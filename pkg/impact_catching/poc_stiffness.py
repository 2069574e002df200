"""
Post-catch (POC) stiffness from human demonstrations

This module covers the whole learning-from-demonstration path:
1. Geometric endpoint stiffness of a human arm from its shoulder/elbow/hand triangle
2. Cholesky encoding of the 3x3 stiffness into a 6-vector
3. GMM training by EM and GMR regression of the stiffness on the distance to the catch point
4. Online POC trajectory (one cubic per axis) and stiffness scaling with smoothing

Demonstrations are synthetic: the generator sweeps an arm triangle and the
muscle activation so that the z stiffness grows monotonically with the
distance travelled after the catch.
"""

import functools
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import yaml
from scipy.linalg import LinAlgError, cho_factor, cho_solve, cholesky, solve_triangular
from scipy.special import logsumexp

from impact_catching.config import (
    A_LIN_MAX,
    ACC_ALPHA1,
    ACC_ALPHA2,
    ACC_C1,
    ACC_C2,
    GMM_COMPONENTS,
    HUMAN_MOVEMENT_LENGTH,
    K_D_MAX,
    K_P_MAX,
    PROFILE_FORMAT_VERSION,
    STIFFNESS_FILTER_EPS,
)
from impact_catching.errors import DimensionError, StiffnessModelError, TrainingError

logger = logging.getLogger(__name__)

DEMO_COLUMNS = ["delta_d_m", "L11", "L12", "L13", "L22", "L23", "L33"]
GENERATOR_VERSION = 1
_UPPER = np.triu_indices(3)  # row-major upper triangle: L11, L12, L13, L22, L23, L33


# ============================================================
# Arm geometry
# ============================================================
@dataclass(frozen=True, eq=False)
class ArmTriangle:
    shoulder: np.ndarray
    elbow: np.ndarray
    hand: np.ndarray
    p: float = 0.0  # muscle activation

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise StiffnessModelError(f"activation must lie in [0, 1], got {self.p}")

    @property
    def area(self) -> float:
        l = np.asarray(self.hand) - np.asarray(self.shoulder)
        r = np.asarray(self.elbow) - np.asarray(self.shoulder)
        return 0.5 * float(np.linalg.norm(np.cross(r, l)))


@dataclass(frozen=True, eq=False)
class StiffnessEllipsoid:
    V: np.ndarray
    D: np.ndarray
    K_hat: np.ndarray
    d1: float
    d2: float
    c1: float = ACC_C1
    c2: float = ACC_C2
    alpha1: float = ACC_ALPHA1
    alpha2: float = ACC_ALPHA2


def activation_gain(p: float, c1: float = ACC_C1, c2: float = ACC_C2) -> float:
    """Co-contraction term A_cc(p), linear in the activation"""
    return c1 * p + c2


def estimate_stiffness(
    tri: ArmTriangle,
    c1: float = ACC_C1,
    c2: float = ACC_C2,
    alpha1: float = ACC_ALPHA1,
    alpha2: float = ACC_ALPHA2,
) -> StiffnessEllipsoid:
    """
    Endpoint stiffness of the arm triangle

    Major axis along shoulder->hand, minor axis normal to the arm plane. The
    shape matrix has unit determinant, so A_cc(p) sets the volume.
    """
    if tri.area <= 1e-9:
        raise StiffnessModelError(f"arm triangle is degenerate (area {tri.area:.3e} m^2)")
    l = np.asarray(tri.hand, dtype=float) - np.asarray(tri.shoulder, dtype=float)
    r = np.asarray(tri.elbow, dtype=float) - np.asarray(tri.shoulder, dtype=float)
    n = np.cross(r, l)
    m = np.cross(n, l)
    V = np.column_stack([l / np.linalg.norm(l), m / np.linalg.norm(m), n / np.linalg.norm(n)])

    d1 = float(np.linalg.norm(l))
    d2 = abs(float(r @ V[:, 1]))
    shape = np.array([1.0, alpha1 / d1, alpha2 * d2])
    D = activation_gain(tri.p, c1, c2) * np.diag(shape / np.cbrt(np.prod(shape)))
    K_hat = V @ D @ V.T
    return StiffnessEllipsoid(V, D, 0.5 * (K_hat + K_hat.T), d1, d2, c1, c2, alpha1, alpha2)


# ============================================================
# Cholesky encoding
# ============================================================
def chol_encode(K_hat) -> np.ndarray:
    """Upper-triangular L with K = L^T L, packed row-major"""
    K_hat = np.asarray(K_hat, dtype=float)
    if K_hat.shape != (3, 3):
        raise DimensionError(f"stiffness must be 3x3, got {K_hat.shape}")
    if not np.allclose(K_hat, K_hat.T, rtol=1e-10, atol=1e-12):
        raise StiffnessModelError("stiffness matrix is not symmetric")
    try:
        L = cholesky(K_hat, lower=False)
    except LinAlgError as e:
        raise StiffnessModelError("stiffness matrix is not positive definite") from e
    return L[_UPPER]


def chol_decode(vector) -> np.ndarray:
    vector = np.asarray(vector, dtype=float)
    if vector.shape != (6,):
        raise DimensionError(f"Cholesky vector must have 6 entries, got {vector.shape}")
    L = np.zeros((3, 3))
    L[_UPPER] = vector
    if np.any(np.diag(L) == 0.0):
        raise StiffnessModelError(f"Cholesky vector has a zero diagonal entry: {vector.tolist()}")
    return L.T @ L


# ============================================================
# GMM / GMR
# ============================================================
@dataclass(frozen=True, eq=False)
class StiffnessProfile:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, 7)
    covariances: np.ndarray  # (K, 7, 7)
    d_h: float = HUMAN_MOVEMENT_LENGTH
    input_range: tuple[float, float] = (HUMAN_MOVEMENT_LENGTH, 0.0)
    log_likelihood: float = float("nan")
    iterations: int = 0

    @property
    def K(self) -> int:
        return len(self.weights)


def _log_gaussian(X: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    factor = cholesky(cov, lower=True)
    z = solve_triangular(factor, (X - mean).T, lower=True)
    log_det = 2.0 * np.sum(np.log(np.diag(factor)))
    return -0.5 * (np.sum(z**2, axis=0) + log_det + len(mean) * np.log(2.0 * np.pi))


def _kmeans_pp(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding on standardized data, returns a hard assignment"""
    Z = (X - X.mean(axis=0)) / np.maximum(X.std(axis=0), 1e-12)
    centers = [Z[rng.integers(len(Z))]]
    for _ in range(1, K):
        d2 = np.min([np.sum((Z - c) ** 2, axis=1) for c in centers], axis=0)
        total = d2.sum()
        index = rng.choice(len(Z), p=d2 / total) if total > 0 else rng.integers(len(Z))
        centers.append(Z[index])
    distances = np.stack([np.sum((Z - c) ** 2, axis=1) for c in centers], axis=1)
    return np.argmin(distances, axis=1)


def _m_step(X: np.ndarray, resp: np.ndarray, reg: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    Nk = resp.sum(axis=0) + 1e-300
    means = (resp.T @ X) / Nk[:, None]
    covariances = np.empty((resp.shape[1], X.shape[1], X.shape[1]))
    for k in range(resp.shape[1]):
        diff = X - means[k]
        covariances[k] = (resp[:, k, None] * diff).T @ diff / Nk[k] + reg * np.eye(X.shape[1])
    return Nk / len(X), means, covariances


def train_gmm(
    samples,
    K: int = GMM_COMPONENTS,
    seed: int = 0,
    d_h: float = HUMAN_MOVEMENT_LENGTH,
    tol: float = 1e-8,
    max_iterations: int = 500,
    reg: float = 1e-6,
) -> StiffnessProfile:
    """
    EM fit of a K-component GMM on rows [delta_d, L11..L33]

    samples may be an (N, 7) array or a demonstration DataFrame.
    """
    X = np.asarray(samples[DEMO_COLUMNS] if isinstance(samples, pd.DataFrame) else samples, dtype=float)
    if X.ndim != 2 or X.shape[1] != 7:
        raise DimensionError(f"training samples must be (N, 7), got {X.shape}")
    if K < 1:
        raise TrainingError(f"component count must be at least 1, got {K}")
    if len(X) < 10 * K:
        raise TrainingError(f"{len(X)} samples are too few for {K} components (need {10 * K})")

    rng = np.random.default_rng(seed)
    labels = _kmeans_pp(X, K, rng) if K > 1 else np.zeros(len(X), dtype=int)
    weights, means, covariances = _m_step(X, np.eye(K)[labels], reg)

    previous = -np.inf
    log_likelihood = -np.inf
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        log_p = np.column_stack([
            np.log(max(weights[k], 1e-300)) + _log_gaussian(X, means[k], covariances[k]) for k in range(len(weights))
        ])
        norm = logsumexp(log_p, axis=1)
        log_likelihood = float(np.mean(norm))
        resp = np.exp(log_p - norm[:, None])
        weights, means, covariances = _m_step(X, resp, reg)

        keep = weights >= 1e-6
        if not np.all(keep):
            logger.warning(f"⚠️ pruning {np.sum(~keep)} degenerate GMM component(s)")
            weights, means, covariances = weights[keep] / weights[keep].sum(), means[keep], covariances[keep]
        if abs(log_likelihood - previous) < tol:
            break
        previous = log_likelihood

    logger.info(f"✅ GMM trained: K={len(weights)}, {iterations} EM iterations, "
                f"mean log-likelihood {log_likelihood:.4f}")
    return StiffnessProfile(
        weights, means, covariances, d_h, (float(X[:, 0].min()), float(X[:, 0].max())), log_likelihood, iterations,
    )


def gmr_conditional(profile: StiffnessProfile, delta_d: float) -> tuple[np.ndarray, np.ndarray]:
    """Conditional mean and covariance of the Cholesky vector given delta_d"""
    log_h = np.empty(profile.K)
    cond_means = np.empty((profile.K, 6))
    cond_covs = np.empty((profile.K, 6, 6))
    for k in range(profile.K):
        mu, sigma = profile.means[k], profile.covariances[k]
        s_ii = sigma[0, 0]
        log_h[k] = np.log(profile.weights[k]) - 0.5 * ((delta_d - mu[0]) ** 2 / s_ii + np.log(2.0 * np.pi * s_ii))
        cond_means[k] = mu[1:] + sigma[1:, 0] / s_ii * (delta_d - mu[0])
        cond_covs[k] = sigma[1:, 1:] - np.outer(sigma[1:, 0], sigma[0, 1:]) / s_ii
    h = np.exp(log_h - logsumexp(log_h))
    mean = h @ cond_means
    spread = cond_means - mean
    cov = np.einsum("k,kij->ij", h, cond_covs) + (h[:, None] * spread).T @ spread
    return mean, cov


def gmr_predict(profile: StiffnessProfile, delta_d: float) -> np.ndarray:
    lo, hi = profile.input_range
    if not lo - 1e-9 <= delta_d <= hi + 1e-9:
        logger.debug(f"GMR extrapolating at delta_d={delta_d:.4f} m (trained on [{lo:.4f}, {hi:.4f}])")
    return gmr_conditional(profile, float(delta_d))[0]


def predict_stiffness(profile: StiffnessProfile, delta_d: float) -> np.ndarray:
    """Decoded 3x3 stiffness at delta_d"""
    return chol_decode(gmr_predict(profile, delta_d))


# ============================================================
# Synthetic demonstrations
# ============================================================
@dataclass(frozen=True)
class ProfileShape:
    """Target z stiffness along the post-catch movement, smoothstep from k_start to k_end"""

    k_start: float = 140.0
    k_end: float = 1100.0
    d_h: float = HUMAN_MOVEMENT_LENGTH
    upper_arm: float = 0.30
    forearm: float = 0.32
    catch_hand: tuple[float, float, float] = (0.42, 0.0, -0.12)

    def target(self, delta_d) -> np.ndarray:
        s = np.clip(np.asarray(delta_d, dtype=float) / self.d_h, 0.0, 1.0)
        return self.k_start + (self.k_end - self.k_start) * (3 * s**2 - 2 * s**3)


def _arm_at(shape: ProfileShape, delta_d: float, swivel: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shoulder at the origin, hand lowered by |delta_d|, elbow below the shoulder-hand line"""
    shoulder = np.zeros(3)
    hand = np.array(shape.catch_hand) + np.array([0.0, 0.0, -abs(delta_d)])
    reach = np.linalg.norm(hand)
    along = (shape.upper_arm**2 - shape.forearm**2 + reach**2) / (2.0 * reach)
    offset = np.sqrt(max(shape.upper_arm**2 - along**2, 1e-6))
    axis = hand / reach
    down = np.cross(axis, np.array([0.0, 1.0, 0.0]))
    down = down if down[2] < 0 else -down
    side = np.cross(axis, down)
    elbow = along * axis + offset * (np.cos(swivel) * down + np.sin(swivel) * side)
    return shoulder, elbow, hand


def synth_demonstrations(
    shape: ProfileShape = ProfileShape(),
    n_demos: int = 4,
    samples_per_demo: int = 60,
    noise_std: float = 0.0,
    seed: int = 0,
) -> pd.DataFrame:
    """
    Demonstration table (delta_d_m, L11..L33)

    Each demo sweeps delta_d from 0 to d_h. The activation is chosen per sample
    so that K_zz follows shape.target; noise_std is a relative perturbation of
    that target, with a per-demo swivel angle for variety.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n_demos):
        swivel = rng.uniform(-0.15, 0.15) if noise_std > 0 else 0.0
        for delta_d in np.linspace(0.0, shape.d_h, samples_per_demo):
            shoulder, elbow, hand = _arm_at(shape, delta_d, swivel)
            unit = estimate_stiffness(ArmTriangle(shoulder, elbow, hand, 0.0), c1=0.0, c2=1.0)
            target = shape.target(delta_d)
            if noise_std > 0:
                target *= 1.0 + noise_std * rng.normal()
            p = float(np.clip((target / unit.K_hat[2, 2] - ACC_C2) / ACC_C1, 0.0, 1.0))
            K_hat = estimate_stiffness(ArmTriangle(shoulder, elbow, hand, p)).K_hat
            rows.append([delta_d, *chol_encode(K_hat)])
    return pd.DataFrame(rows, columns=DEMO_COLUMNS)


def write_demonstrations(demos: pd.DataFrame, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    demos[DEMO_COLUMNS].to_csv(path, index=False, float_format="%.9f")
    return path


def read_demonstrations(path: str | Path) -> pd.DataFrame:
    demos = pd.read_csv(path)
    missing = [c for c in DEMO_COLUMNS if c not in demos.columns]
    if missing:
        raise TrainingError(f"demonstration file {path} is missing columns {missing}")
    return demos[DEMO_COLUMNS]


# ============================================================
# Profile files
# ============================================================
def save_profile(profile: StiffnessProfile, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {
        "format_version": PROFILE_FORMAT_VERSION,
        "generator_version": GENERATOR_VERSION,
        "d_h": float(profile.d_h),
        "input_range": [float(v) for v in profile.input_range],
        "log_likelihood": float(profile.log_likelihood),
        "iterations": int(profile.iterations),
        "weights": profile.weights.tolist(),
        "means": profile.means.tolist(),
        "covariances": profile.covariances.tolist(),
    }
    path.write_text(yaml.safe_dump(document, sort_keys=False))
    return path


def load_profile(path: str | Path) -> StiffnessProfile:
    document = yaml.safe_load(Path(path).read_text())
    if document.get("format_version") != PROFILE_FORMAT_VERSION:
        raise TrainingError(f"unsupported profile format {document.get('format_version')} in {path}")
    weights = np.array(document["weights"], dtype=float)
    covariances = np.array(document["covariances"], dtype=float)
    for k, cov in enumerate(covariances):
        try:
            cho_factor(cov)
        except LinAlgError as e:
            raise TrainingError(f"component {k} covariance in {path} is not positive definite") from e
    return StiffnessProfile(
        weights / weights.sum(), np.array(document["means"], dtype=float), covariances,
        float(document["d_h"]), tuple(document["input_range"]), float(document["log_likelihood"]),
        int(document["iterations"]),
    )


@functools.lru_cache(maxsize=1)
def bundled_profile() -> StiffnessProfile:
    """Default profile trained on the seeded synthetic demonstrations"""
    return train_gmm(synth_demonstrations(noise_std=0.01, seed=0), GMM_COMPONENTS, seed=0)


# ============================================================
# Online POC trajectory and stiffness
# ============================================================
@dataclass(frozen=True, eq=False)
class POCPlan:
    x_d_c: np.ndarray  # (6,) catch-instant reference pose
    v_d_c: np.ndarray  # (3,)
    x_d_f: np.ndarray  # (3,)
    d_lim: float
    dt_poc: float
    coefficients: np.ndarray  # (3, 4), c0 + c1 t + c2 t^2 + c3 t^3 per axis

    def at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Pose and twist references, held at the final point after dt_poc"""
        t = float(np.clip(t, 0.0, self.dt_poc))
        c = self.coefficients
        position = c[:, 0] + c[:, 1] * t + c[:, 2] * t**2 + c[:, 3] * t**3
        velocity = c[:, 1] + 2 * c[:, 2] * t + 3 * c[:, 3] * t**2
        return np.concatenate([position, self.x_d_c[3:]]), np.concatenate([velocity, np.zeros(3)])

    def peak_acceleration(self) -> float:
        c = self.coefficients
        return float(max(np.max(np.abs(2 * c[:, 2])), np.max(np.abs(2 * c[:, 2] + 6 * c[:, 3] * self.dt_poc))))


def final_point(x_d_c, v_d_c, d_lim: float) -> np.ndarray:
    """Project d_lim along the catch velocity, vertical part first"""
    x_d_c = np.asarray(x_d_c, dtype=float)[:3]
    v = np.asarray(v_d_c, dtype=float)[:3]
    speed = float(np.linalg.norm(v))
    d_z = d_lim * v[2] / speed
    d_xy = np.sqrt(max(d_lim**2 - d_z**2, 0.0))
    planar = float(np.hypot(v[0], v[1]))
    shift_xy = d_xy * v[:2] / planar if planar > 0 else np.zeros(2)
    return x_d_c + np.array([shift_xy[0], shift_xy[1], d_z])


def cubic_coefficients(x0, v0, xf, vf, T: float) -> np.ndarray:
    """Per-axis cubic matching position and velocity at both ends, rows (c0, c1, c2, c3)"""
    x0, v0, xf, vf = (np.asarray(a, dtype=float) for a in (x0, v0, xf, vf))
    delta = xf - x0
    c2 = 3 * delta / T**2 - (2 * v0 + vf) / T
    c3 = -2 * delta / T**3 + (v0 + vf) / T**2
    return np.column_stack([x0, v0, c2, c3])


def plan_poc(x_d_c, v_d_c, d_lim: float, dt_poc: float, a_max: float = A_LIN_MAX) -> POCPlan:
    """
    Cubic from the catch reference to the point d_lim further along the catch velocity

    A cubic with fixed end conditions can exceed a_max even when dt_poc meets
    the v/a_max bound; the duration is then stretched until it does not.
    """
    x_d_c = np.asarray(x_d_c, dtype=float)
    if x_d_c.shape == (3,):
        x_d_c = np.concatenate([x_d_c, np.zeros(3)])
    v = np.asarray(v_d_c, dtype=float)[:3]
    if np.linalg.norm(v) == 0.0:
        raise ValueError("POC plan needs a nonzero catch velocity")
    bound = float(np.max(np.abs(v)) / a_max)
    if dt_poc < bound - 1e-12:
        raise ValueError(f"dt_poc={dt_poc:.3f}s is below the kinematic bound {bound:.3f}s")

    x_d_f = final_point(x_d_c, v, d_lim)
    duration = dt_poc
    plan = POCPlan(x_d_c, v, x_d_f, d_lim, duration, cubic_coefficients(x_d_c[:3], v, x_d_f, np.zeros(3), duration))
    while plan.peak_acceleration() > a_max + 1e-9 and duration < 10 * dt_poc:
        duration *= 1.01
        plan = POCPlan(x_d_c, v, x_d_f, d_lim, duration, cubic_coefficients(x_d_c[:3], v, x_d_f, np.zeros(3), duration))
    if duration != dt_poc:
        logger.warning(f"⚠️ POC duration stretched from {dt_poc:.3f}s to {duration:.3f}s to respect a_max={a_max}")
    return plan


def relative_distance(x_actual, x_d_c, d_lim: float, d_h: float) -> float:
    """Distance from the catch point mapped onto the human movement length"""
    gap = np.linalg.norm(np.asarray(x_actual, dtype=float)[:3] - np.asarray(x_d_c, dtype=float)[:3])
    return float(gap / d_lim * d_h)


def scale_stiffness(K_d, K_d_max: float = K_D_MAX, K_p_max: float = K_P_MAX) -> np.ndarray:
    return np.asarray(K_d, dtype=float) / K_d_max * K_p_max


def _smooth(target: np.ndarray, previous: np.ndarray, eps: float) -> np.ndarray:
    return eps * target + (1.0 - eps) * previous


def poc_step(
    plan: POCPlan,
    profile: StiffnessProfile,
    x_actual,
    K_d_max: float = K_D_MAX,
    K_p_max: float = K_P_MAX,
    eps: float = STIFFNESS_FILTER_EPS,
    K_prev=None,
    t: float = 0.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """References and smoothed 3x3 position gain at time t after the trigger"""
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"filter parameter must lie in (0, 1], got {eps}")
    x_d, v_d = plan.at(t)
    delta_d = relative_distance(x_actual, plan.x_d_c, plan.d_lim, profile.d_h)
    K_p = scale_stiffness(predict_stiffness(profile, delta_d), K_d_max, K_p_max)
    if K_prev is not None:
        K_p = _smooth(K_p, np.asarray(K_prev, dtype=float), eps)
    return x_d, v_d, K_p
