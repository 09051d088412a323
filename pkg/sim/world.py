"""
Synthetic visual-inertial world: analytic trajectory, IMU synthesis with bias
random walk and white noise, and feature tracks from a landmark cylinder.

Timestamps are integer nanoseconds so camera frames land exactly on IMU
samples and exported streams round-trip without drift.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from config import Config
from core.quaternion import euler_zyx_to_rot, rot_to_quat
from core.state import StateBlock, StateVector, nav_value
from sensors.camera import CameraModel, project_points
from sensors.imu import ImuBuffer, NoiseSpec, gravity_vector

logger = logging.getLogger(__name__)

NS_PER_S = 1_000_000_000

EUROC_INTRINSICS = (458.654, 457.296, 367.215, 248.375)
EUROC_RADTAN = (-0.28340811, 0.07395907, 0.00019359, 1.76187114e-05)
# Camera looks along the IMU x axis
DEFAULT_R_CI = np.array([[0.0, -1.0, 0.0],
                         [0.0, 0.0, -1.0],
                         [1.0, 0.0, 0.0]])
DEFAULT_P_CINI = np.array([0.05, 0.0, 0.02])


def default_camera() -> CameraModel:
    """EuRoC-like pinhole camera with radial-tangential distortion"""
    fx, fy, cx, cy = EUROC_INTRINSICS
    return CameraModel(fx, fy, cx, cy, "radtan", EUROC_RADTAN, DEFAULT_R_CI,
                       -DEFAULT_R_CI @ DEFAULT_P_CINI, 752, 480)


@dataclass(frozen=True)
class TrajectorySpec:
    """
    Sinusoidal position inside a landmark cylinder with a yaw ramp and small
    pitch and roll oscillations
    """
    duration: float = Config.SIM_DURATION
    center: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    amplitude: Tuple[float, float, float] = (2.0, 1.5, 0.3)
    frequency: Tuple[float, float, float] = (0.05, 0.08, 0.11)
    phase: Tuple[float, float, float] = (0.0, 0.5, 1.0)
    yaw_rate: float = 0.15
    pitch_amplitude: float = 0.1
    roll_amplitude: float = 0.1
    attitude_frequency: float = 0.2
    wall_radius: float = 6.0
    wall_height: Tuple[float, float] = (-1.5, 3.5)
    feature_count: int = Config.SIM_FEATURE_COUNT
    seed: int = Config.SIM_SEED

    def validate(self) -> None:
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if max(abs(a) for a in self.amplitude[:2]) >= self.wall_radius:
            raise ValueError("trajectory leaves the landmark cylinder")

    @classmethod
    def static(cls, duration: float = 5.0, **kwargs) -> "TrajectorySpec":
        return cls(duration=duration, amplitude=(0.0, 0.0, 0.0), yaw_rate=0.0,
                   pitch_amplitude=0.0, roll_amplitude=0.0, **kwargs)

    @classmethod
    def excited(cls, duration: float = 10.0, **kwargs) -> "TrajectorySpec":
        """
        Fast motion for short-window initialization

        A brisk vertical bob on top of a slow horizontal sweep, close to the
        landmark walls, so the specific force departs from gravity mostly
        along the vertical.
        """
        kwargs.setdefault("wall_radius", 4.5)
        return cls(duration=duration, amplitude=(2.0, 1.5, 0.15), frequency=(0.1, 0.13, 0.7),
                   yaw_rate=0.4, pitch_amplitude=0.15, roll_amplitude=0.15, attitude_frequency=0.8, **kwargs)


@dataclass(frozen=True)
class SimConfig:
    """Sensor, noise and filter settings of one simulation study"""
    gyro_white_noise: float = Config.GYRO_WHITE_NOISE
    gyro_random_walk: float = Config.GYRO_RANDOM_WALK
    accel_white_noise: float = Config.ACCEL_WHITE_NOISE
    accel_random_walk: float = Config.ACCEL_RANDOM_WALK
    pixel_noise: float = Config.PIXEL_NOISE
    noise_scale: float = 1.0
    camera_rate_hz: int = Config.CAMERA_RATE_HZ
    imu_rate_hz: int = Config.IMU_RATE_HZ
    max_clones: int = Config.MAX_CLONES
    max_tracked_features: int = Config.MAX_TRACKED_FEATURES
    max_msckf_features: int = Config.MAX_MSCKF_FEATURES
    max_slam_features: int = Config.MAX_SLAM_FEATURES
    track_drop_prob: float = Config.SIM_TRACK_DROP_PROB
    gravity_magnitude: float = Config.GRAVITY_MAGNITUDE
    precision: str = "double"
    estimator: str = "llt"
    trials: int = Config.SIM_TRIALS
    seed: int = Config.SIM_SEED

    def validate(self) -> None:
        if self.camera_rate_hz <= 0 or self.imu_rate_hz <= 0:
            raise ValueError("sensor rates must be positive")
        if self.imu_rate_hz % self.camera_rate_hz != 0:
            raise ValueError("camera rate must divide IMU rate")
        if NS_PER_S % self.imu_rate_hz != 0:
            raise ValueError("IMU period must be a whole number of nanoseconds")
        if self.noise_scale < 0 or self.pixel_noise < 0:
            raise ValueError("noise levels must be non-negative")
        if self.precision not in Config.PRECISION_MODES:
            raise ValueError(f"Unknown precision: {self.precision}")
        if self.estimator not in Config.ESTIMATORS:
            raise ValueError(f"Unknown estimator: {self.estimator}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")

    @property
    def noise(self) -> NoiseSpec:
        """Densities used to synthesize the IMU stream"""
        return NoiseSpec(self.gyro_white_noise, self.accel_white_noise,
                         self.gyro_random_walk, self.accel_random_walk)

    @property
    def filter_noise(self) -> NoiseSpec:
        """Densities assumed by the estimator; a small floor keeps noise-free runs well posed"""
        return self.noise.scaled(max(self.noise_scale, 1e-2))

    @property
    def filter_pixel_sigma(self) -> float:
        return max(self.pixel_noise, 1e-2)

    def high_precision(self) -> "SimConfig":
        """IMU an order of magnitude better than nominal"""
        return replace(self,
                       gyro_white_noise=0.1 * self.gyro_white_noise,
                       gyro_random_walk=0.1 * self.gyro_random_walk,
                       accel_white_noise=0.1 * self.accel_white_noise,
                       accel_random_walk=0.1 * self.accel_random_walk)


@dataclass
class TruthTrack:
    """Ground truth sampled at the IMU timestamps"""
    t_ns: np.ndarray
    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    bg: np.ndarray
    ba: np.ndarray

    @property
    def t(self) -> np.ndarray:
        return self.t_ns * 1e-9

    def index(self, t_ns: int) -> int:
        i = int(np.searchsorted(self.t_ns, t_ns))
        if i >= self.t_ns.size or self.t_ns[i] != t_ns:
            raise KeyError(f"No ground truth sample at {t_ns} ns")
        return i

    def nav_at(self, t_ns: int) -> np.ndarray:
        i = self.index(t_ns)
        return nav_value(self.q[i], self.p[i], self.v[i], self.bg[i], self.ba[i])


@dataclass
class SimulatedRun:
    """Streams and ground truth of one synthetic run"""
    imu_t_ns: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray
    frame_t_ns: np.ndarray
    frames: List[Dict[int, np.ndarray]]
    truth: TruthTrack
    landmarks: Dict[int, np.ndarray]
    cam: CameraModel
    spec: TrajectorySpec
    cfg: SimConfig
    metadata: Dict[str, float] = field(default_factory=dict)

    @property
    def imu(self) -> ImuBuffer:
        return ImuBuffer(self.imu_t_ns * 1e-9, self.gyro, self.accel)

    def frame_list(self) -> List[Tuple[float, Dict[int, np.ndarray]]]:
        return [(t * 1e-9, obs) for t, obs in zip(self.frame_t_ns, self.frames)]


def trajectory_kinematics(spec: TrajectorySpec, t: np.ndarray) -> Dict[str, np.ndarray]:
    """
    Analytic position, velocity, acceleration, orientation and body rate

    Returns:
        dict: p, v, a (global, (N, 3)), R_GI (N, 3, 3) and omega (body, (N, 3))
    """
    t = np.asarray(t, dtype=np.float64)
    c = np.asarray(spec.center)
    A = np.asarray(spec.amplitude)
    w = 2.0 * np.pi * np.asarray(spec.frequency)
    ph = np.asarray(spec.phase)
    arg = np.outer(t, w) + ph
    p = c + A * np.sin(arg)
    v = A * w * np.cos(arg)
    a = -A * w * w * np.sin(arg)

    wa = 2.0 * np.pi * spec.attitude_frequency
    yaw, yaw_d = spec.yaw_rate * t, np.full_like(t, spec.yaw_rate)
    pitch, pitch_d = spec.pitch_amplitude * np.sin(wa * t), spec.pitch_amplitude * wa * np.cos(wa * t)
    roll, roll_d = spec.roll_amplitude * np.sin(1.3 * wa * t + 0.3), \
        spec.roll_amplitude * 1.3 * wa * np.cos(1.3 * wa * t + 0.3)

    sr, cr = np.sin(roll), np.cos(roll)
    sp, cp = np.sin(pitch), np.cos(pitch)
    omega = np.column_stack([
        roll_d - yaw_d * sp,
        pitch_d * cr + yaw_d * cp * sr,
        -pitch_d * sr + yaw_d * cp * cr,
    ])
    R_GI = np.stack([euler_zyx_to_rot(y, p_, r) for y, p_, r in zip(yaw, pitch, roll)])
    return {"p": p, "v": v, "a": a, "R_GI": R_GI, "omega": omega}


def landmark_cylinder(spec: TrajectorySpec, rng: np.random.Generator) -> np.ndarray:
    """Points on the cylinder wall around the trajectory center"""
    angle = rng.uniform(0.0, 2.0 * np.pi, spec.feature_count)
    height = rng.uniform(spec.wall_height[0], spec.wall_height[1], spec.feature_count)
    c = np.asarray(spec.center)
    return np.column_stack([c[0] + spec.wall_radius * np.cos(angle),
                            c[1] + spec.wall_radius * np.sin(angle),
                            height])


def synthesize(spec: TrajectorySpec, cfg: SimConfig, cam: Optional[CameraModel] = None) -> SimulatedRun:
    """
    Generate IMU samples, feature tracks and ground truth

    Deterministic under ``spec.seed``. Feature ids identify tracks: a landmark
    that is lost and re-acquired gets a new id.
    """
    spec.validate()
    cfg.validate()
    cam = cam or default_camera()
    rng = np.random.default_rng(spec.seed)
    g = gravity_vector(cfg.gravity_magnitude)

    imu_period = NS_PER_S // cfg.imu_rate_hz
    stride = cfg.imu_rate_hz // cfg.camera_rate_hz
    n_samples = int(round(spec.duration * NS_PER_S)) // imu_period + 1
    t_ns = np.arange(n_samples, dtype=np.int64) * imu_period
    t = t_ns * 1e-9
    dt = imu_period * 1e-9
    kin = trajectory_kinematics(spec, t)
    R_IG = np.transpose(kin["R_GI"], (0, 2, 1))

    noise = cfg.noise
    s = cfg.noise_scale
    bg = np.cumsum(rng.standard_normal((n_samples, 3)) * noise.sigma_wg * np.sqrt(dt) * s, axis=0)
    ba = np.cumsum(rng.standard_normal((n_samples, 3)) * noise.sigma_wa * np.sqrt(dt) * s, axis=0)
    bg -= bg[0]
    ba -= ba[0]
    gyro = kin["omega"] + bg + rng.standard_normal((n_samples, 3)) * noise.sigma_g / np.sqrt(dt) * s
    specific = np.einsum("nij,nj->ni", R_IG, kin["a"] - g)
    accel = specific + ba + rng.standard_normal((n_samples, 3)) * noise.sigma_a / np.sqrt(dt) * s

    landmarks = landmark_cylinder(spec, rng)
    frame_idx = np.arange(0, n_samples, stride)
    frames: List[Dict[int, np.ndarray]] = []
    track_landmark: Dict[int, int] = {}
    active: Dict[int, int] = {}   # landmark -> track id
    next_id = 0
    for i in frame_idx:
        f_I = (landmarks - kin["p"][i]) @ R_IG[i].T
        f_C = f_I @ cam.R_CI.T + cam.p_IinC
        uv, visible = project_points(f_C, cam, depth_floor=0.1)
        visible_set = set(np.flatnonzero(visible).tolist())

        kept = {}
        for lm in sorted(active):
            if lm in visible_set and rng.random() >= cfg.track_drop_prob:
                kept[lm] = active[lm]
        candidates = sorted(visible_set - set(kept))
        rng.shuffle(candidates)
        for lm in candidates[:max(cfg.max_tracked_features - len(kept), 0)]:
            kept[lm] = next_id
            track_landmark[next_id] = lm
            next_id += 1
        active = kept

        obs = {}
        for lm, fid in sorted(active.items(), key=lambda kv: kv[1]):
            obs[fid] = uv[lm] + rng.standard_normal(2) * cfg.pixel_noise
        frames.append(obs)

    q = np.stack([rot_to_quat(R) for R in R_IG])
    truth = TruthTrack(t_ns, kin["p"], kin["v"], q, bg, ba)
    logger.info(f"Synthesized {spec.duration:.1f} s: {n_samples} IMU samples, {len(frames)} frames, "
                f"{next_id} tracks")
    return SimulatedRun(t_ns, gyro, accel, t_ns[frame_idx], frames, truth,
                        {fid: landmarks[lm] for fid, lm in track_landmark.items()}, cam, spec, cfg,
                        {"tracks": next_id})


def prior_std() -> np.ndarray:
    """Navigation prior standard deviations of a filter started near the truth"""
    return np.concatenate([
        np.full(3, Config.PRIOR_ORIENTATION_STD),
        np.full(3, Config.PRIOR_POSITION_STD),
        np.full(3, Config.PRIOR_VELOCITY_STD),
        np.full(3, Config.PRIOR_GYRO_BIAS_STD),
        np.full(3, Config.PRIOR_ACCEL_BIAS_STD),
    ])


def initial_state(run: SimulatedRun, rng: Optional[np.random.Generator] = None,
                  frame: int = 0) -> Tuple[StateVector, np.ndarray]:
    """
    Initial estimate drawn from the prior around the truth at a frame

    With ``rng`` None the estimate equals the truth.
    """
    std = prior_std()
    truth = StateBlock("nav", "imu", run.truth.nav_at(int(run.frame_t_ns[frame])))
    if rng is not None:
        truth = truth.boxplus(rng.standard_normal(15) * std)
    return StateVector([truth]), np.diag(std)
