"""
Configuration for the square-root visual-inertial estimation toolkit
Defaults follow the desk-scale simulation protocol; environment overrides via .env
"""

import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

class Config:
    """Configuration settings for the square-root VINS toolkit"""

    # Output
    OUTPUT_ROOT = os.getenv("SQRTVINS_OUTPUT_ROOT", "runs")

    # IMU noise (continuous-time densities)
    GYRO_WHITE_NOISE = 2.0e-4   # rad/s/sqrt(Hz)
    GYRO_RANDOM_WALK = 2.0e-5   # rad/s^2/sqrt(Hz)
    ACCEL_WHITE_NOISE = 5.0e-4  # m/s^2/sqrt(Hz)
    ACCEL_RANDOM_WALK = 4.0e-4  # m/s^3/sqrt(Hz)

    # Sensor rates
    CAMERA_RATE_HZ = 10
    IMU_RATE_HZ = 400

    # Sliding window and feature budgets
    MAX_CLONES = 11
    MAX_TRACKED_FEATURES = 100
    MAX_MSCKF_FEATURES = 40
    MAX_SLAM_FEATURES = 50

    # Camera
    PIXEL_NOISE = 1.0           # px, isotropic
    DEPTH_FLOOR = 1e-3          # m
    MIN_PARALLAX_DEG = 1.0
    MAX_TRIANGULATION_COND = 1e10

    # Gravity
    GRAVITY_MAGNITUDE = 9.81

    # Chi-square gating
    CHI2_CONFIDENCE = 0.95
    CHI2_INFLATION = 1.0
    CHI2_TABLE_MAX_DOF = 512

    # Factorization tolerances per precision mode
    PIVOT_EPS_DOUBLE = 1e-12
    PIVOT_EPS_SINGLE = 1e-6

    # Prior standard deviations for a filter started from a known state
    PRIOR_ORIENTATION_STD = 1e-3   # rad
    PRIOR_POSITION_STD = 1e-3      # m
    PRIOR_VELOCITY_STD = 1e-2      # m/s
    PRIOR_GYRO_BIAS_STD = 1e-3     # rad/s
    PRIOR_ACCEL_BIAS_STD = 1e-2    # m/s^2

    # Initialization
    DEGENERACY_RATIO = 10.0
    STATIC_NORMAL_FLOOR = 1e-6
    INIT_MAX_NORMAL_COND = 1e12    # column-scaled, over the five constrained directions
    INIT_AMBIGUITY_RESIDUAL = 1e-3  # m per row, residual slack between gravity-sphere candidates
    INIT_GN_ITERATIONS = 10
    REFINE_MAX_ITERATIONS = 5
    REFINE_STEP_TOL = 1e-6
    INIT_WINDOWS = [0.1, 0.15, 0.2, 0.3, 0.5, 0.75, 1.0]
    INIT_ATE_THRESHOLDS = [0.1, 0.3, 0.5]
    INIT_GRAVITY_THRESHOLD_DEG = 3.0
    INIT_VELOCITY_THRESHOLD = 0.2
    INIT_TRACKING_HORIZON = 5.0    # s of filtering after initialization
    INIT_MIN_PARALLAX_DEG = 0.1
    INIT_PRIOR_ROLL_PITCH_STD = 0.05   # rad, first keyframe
    INIT_PRIOR_YAW_STD = 1e-4          # rad, gauge
    INIT_PRIOR_POSITION_STD = 1e-4     # m, gauge
    INIT_PRIOR_VELOCITY_STD = 0.1      # m/s

    # Simulation
    SIM_DURATION = 60.0
    SIM_TRIALS = 1
    SIM_SEED = 42
    SIM_FEATURE_COUNT = 2500
    SIM_TRACK_DROP_PROB = 0.02

    # Benchmark grid
    BENCH_N_GRID = [100]
    BENCH_M_GRID = [10, 20, 30, 33, 34, 40, 44, 45, 50, 100, 200, 500, 1000]
    BENCH_REPETITIONS = 5

    # Supported selectors
    PRECISION_MODES = ["single", "double"]
    BACKENDS = ["llt", "pqr", "potter", "carlson", "kaminski"]
    ESTIMATORS = ["ekf", "srif"] + BACKENDS
    MATRIX_ESTIMATORS = ["ekf", "srif", "llt", "pqr", "potter", "carlson"]

    # Logging Configuration
    ENABLE_DIAGNOSTICS_LOGGING = True
    LOG_LEVEL = os.getenv("SQRTVINS_LOG_LEVEL", "INFO")
    LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

    @classmethod
    def pivot_eps(cls, dtype) -> float:
        """Pivot tolerance for the given floating point type"""
        import numpy as np
        return cls.PIVOT_EPS_SINGLE if np.dtype(dtype) == np.float32 else cls.PIVOT_EPS_DOUBLE

    @classmethod
    def validate_config(cls):
        """Validate configuration settings"""
        if cls.IMU_RATE_HZ % cls.CAMERA_RATE_HZ != 0:
            raise ValueError("CAMERA_RATE_HZ must divide IMU_RATE_HZ")

        if min(cls.GYRO_WHITE_NOISE, cls.GYRO_RANDOM_WALK,
               cls.ACCEL_WHITE_NOISE, cls.ACCEL_RANDOM_WALK) <= 0:
            raise ValueError("IMU noise densities must be strictly positive")

        if not 0.0 < cls.CHI2_CONFIDENCE < 1.0:
            raise ValueError("CHI2_CONFIDENCE must lie in (0, 1)")

        if cls.MAX_CLONES < 2:
            raise ValueError("MAX_CLONES must be at least 2")

        return True
