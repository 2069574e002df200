"""
Configuration for the impact-aware catching simulator

This module contains the numeric defaults and file locations shared by
all modules, separated from the main logic so that scenario files and
tests can refer to one place.
"""

from pathlib import Path

# Bundled data
DATA_DIR = Path(__file__).parent / "data"
DEFAULT_ARM_MODEL = DATA_DIR / "panda_like.yaml"
SCENARIO_DIR = DATA_DIR / "scenarios"
ARM_MODEL_FORMAT_VERSION = 1
PROFILE_FORMAT_VERSION = 1

# Numerical policy
PINV_DAMPING = 1e-6
NEAR_SINGULAR_CONDITION = 1e8
DIM_FD_STEP = 1e-6
GRAVITY = 9.81

# Contact
DEFAULT_CONTACT_STIFFNESS = 5e4  # N/m; the bundled scenarios use a softer 2000 N/m, see DESIGN.md
DEFAULT_RESTITUTION = 0.6
OBJECT_MASS = 0.1  # kg

# Estimator
KF_PROCESS_NOISE = 1e-6
KF_MEASUREMENT_STD = 2.5e-3  # m
KF_INITIAL_COVARIANCE = 1.0
KF_INITIAL_GUESS_1D = (0.7, 0.0)
KF_INITIAL_GUESS_2D = (0.3, 1.0, -1.6, 2.5)
MEASUREMENT_RATE = 500.0  # Hz

# Planner
PLANNER_DT = 0.01
PLANNER_MAX_SAMPLES = 100
V_LIN_MAX = 1.0
V_ANG_MAX = 2.5
A_LIN_MAX = 6.0
A_ANG_MAX = 25.0
LEGACY_WEIGHTS = (1.0, 10.0, 0.1)  # alpha, beta, gamma

# QP
QP_TOLERANCE = 1e-9
QP_MAX_ITERATIONS = 4000
HESSIAN_REGULARIZATION = 1e-9
LOCK_TOLERANCE = 1e-8

# Post-catch stiffness
ACC_C1 = 2033.325
ACC_C2 = 140.606
ACC_ALPHA1 = 0.255
ACC_ALPHA2 = 2.815
GMM_COMPONENTS = 8
HUMAN_MOVEMENT_LENGTH = -0.27  # d_h, m
K_D_MAX = 750.0
K_P_MAX = 45.0
STIFFNESS_FILTER_EPS = 0.05
POC_DURATION_1D = 0.2
POC_DISTANCE_1D = 0.13
FORCE_THRESHOLD = 3.0  # N

# Controller / safety
TORQUE_LOCK_DURATION = 0.005
SIM_DT = 1e-4
CONTROL_DT = 1e-3
BLOWUP_JOINT_SPEED = 1e3
READY_POSE = (0.0, -0.7853981633974483, 0.0, -2.356194490192345, 0.0, 1.5707963267948966, 0.7853981633974483)
# untuned defaults, see DESIGN.md
GAIN_HIGH = 45.0  # K_H, 1/s
GAIN_LOW = 8.0  # K_L, 1/s
GAIN_VELOCITY = 1.0
JOINT_STIFFNESS = (100.0, 100.0, 100.0, 100.0, 30.0, 30.0, 10.0)
JOINT_DAMPING = (40.0, 40.0, 30.0, 30.0, 8.0, 8.0, 2.0)

# Simulation
BASKET_RADIUS = 0.1  # m
BASKET_CURVATURE = 2.0  # 1/m, well height = curvature * r^2
TANGENTIAL_DAMPING = 0.5  # N*s/m
WORKSPACE_HALF_WIDTH = 0.6  # m
SETTLE_WINDOW = 0.6  # s after dt_poc
SIM_DURATION_MAX = 3.0  # s

# Metrics
PEAK_MIN_SEPARATION = 0.005
CONTACT_LOSS_FORCE = 0.5
STEADY_FORCE_BAND = 0.2
STEADY_DURATION = 0.1

# Logging configuration
LOG_FORMAT = "%(asctime)s | %(levelname)s | %(name)s | %(message)s"
