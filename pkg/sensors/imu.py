"""
IMU kinematics: sample buffers, preintegration, mean propagation and the
error-state transition consumed by the square-root filter.

Preintegrated quantities are expressed in the IMU frame at the start of the
interval. Rotation errors follow the JPL convention R = exp(-[dtheta]x) R_hat;
position, velocity and integral errors are additive.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, Optional, Tuple

import numpy as np
import scipy.linalg

from config import Config
from core.errors import EmptyBuffer, NonMonotonicTimestamps
from core.quaternion import exp_so3, orthonormalize, quat_to_rot, right_jacobian, rot_to_quat, skew
from core.sqrt_kernels import qr_triangularize
from core.state import NAV_ACCEL_BIAS, NAV_GYRO_BIAS, NAV_POSITION, NAV_THETA, NAV_VELOCITY

logger = logging.getLogger(__name__)

NAV_DIM = 15


def gravity_vector(magnitude: float = Config.GRAVITY_MAGNITUDE) -> np.ndarray:
    """Global gravity ^G g, pointing down the z axis"""
    return np.array([0.0, 0.0, -magnitude])


@dataclass(frozen=True)
class ImuSample:
    t: float
    gyro: np.ndarray
    accel: np.ndarray


@dataclass(frozen=True)
class NoiseSpec:
    """Continuous-time white-noise and random-walk densities"""
    sigma_g: float = Config.GYRO_WHITE_NOISE
    sigma_a: float = Config.ACCEL_WHITE_NOISE
    sigma_wg: float = Config.GYRO_RANDOM_WALK
    sigma_wa: float = Config.ACCEL_RANDOM_WALK

    def __post_init__(self):
        if min(self.sigma_g, self.sigma_a, self.sigma_wg, self.sigma_wa) <= 0:
            raise ValueError("IMU noise densities must be strictly positive")

    def scaled(self, factor: float) -> "NoiseSpec":
        return NoiseSpec(self.sigma_g * factor, self.sigma_a * factor,
                         self.sigma_wg * factor, self.sigma_wa * factor)


class ImuBuffer:
    """
    Time-ordered IMU samples held as arrays

    Args:
        t: (N,) timestamps in seconds, strictly increasing
        gyro: (N, 3) angular rate in rad/s
        accel: (N, 3) specific force in m/s^2
    """

    def __init__(self, t: np.ndarray, gyro: np.ndarray, accel: np.ndarray):
        self.t = np.asarray(t, dtype=np.float64).reshape(-1)
        self.gyro = np.asarray(gyro, dtype=np.float64).reshape(-1, 3)
        self.accel = np.asarray(accel, dtype=np.float64).reshape(-1, 3)
        if not (self.t.size == self.gyro.shape[0] == self.accel.shape[0]):
            raise ValueError("IMU arrays have inconsistent lengths")
        if self.t.size > 1 and np.any(np.diff(self.t) <= 0):
            bad = int(np.flatnonzero(np.diff(self.t) <= 0)[0]) + 1
            raise NonMonotonicTimestamps(f"IMU timestamp {self.t[bad]!r} at index {bad} is not increasing")

    @classmethod
    def from_samples(cls, samples) -> "ImuBuffer":
        samples = list(samples)
        return cls(np.array([s.t for s in samples]),
                   np.array([s.gyro for s in samples]).reshape(-1, 3),
                   np.array([s.accel for s in samples]).reshape(-1, 3))

    def __len__(self) -> int:
        return self.t.size

    def __iter__(self) -> Iterator[ImuSample]:
        for i in range(self.t.size):
            yield ImuSample(self.t[i], self.gyro[i], self.accel[i])

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0]) if self.t.size else 0.0

    def _interpolate(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        gyro = np.array([np.interp(t, self.t, self.gyro[:, i]) for i in range(3)])
        accel = np.array([np.interp(t, self.t, self.accel[:, i]) for i in range(3)])
        return gyro, accel

    def slice(self, t0: float, t1: float) -> "ImuBuffer":
        """
        Samples spanning exactly [t0, t1], interpolating the end points if needed

        Raises:
            EmptyBuffer: the buffer does not cover the interval
        """
        if self.t.size < 2 or t0 < self.t[0] - 1e-12 or t1 > self.t[-1] + 1e-12 or t1 <= t0:
            raise EmptyBuffer(f"IMU buffer does not cover [{t0}, {t1}]")
        inside = (self.t > t0) & (self.t < t1)
        t = [t0, *self.t[inside], t1]
        g0, a0 = self._interpolate(t0)
        g1, a1 = self._interpolate(t1)
        gyro = np.vstack([g0, self.gyro[inside], g1])
        accel = np.vstack([a0, self.accel[inside], a1])
        return ImuBuffer(np.array(t), gyro, accel)


@dataclass
class Preintegration:
    """
    Bias-corrected IMU integrals over one interval

    ``delta_R`` maps vectors from the start frame into the end frame; ``alpha``
    and ``beta`` are the position and velocity integrals in the start frame.
    ``noise_sqrt`` is an upper triangular 15x15 factor over the errors
    [theta, alpha, beta, gyro walk, accel walk].
    """
    delta_R: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    dT: float
    bias_jacobians: Dict[str, np.ndarray]
    noise_sqrt: np.ndarray
    bg_lin: np.ndarray
    ba_lin: np.ndarray
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    t0: float = 0.0

    @property
    def t1(self) -> float:
        return self.t0 + self.dT

    def corrected(self, bg: np.ndarray, ba: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """First-order re-linearization to new bias estimates"""
        dbg = np.asarray(bg) - self.bg_lin
        dba = np.asarray(ba) - self.ba_lin
        J = self.bias_jacobians
        delta_R = exp_so3(-J["theta_bg"] @ dbg) @ self.delta_R
        alpha = self.alpha + J["alpha_bg"] @ dbg + J["alpha_ba"] @ dba
        beta = self.beta + J["beta_bg"] @ dbg + J["beta_ba"] @ dba
        return delta_R, alpha, beta


def _walk_block(noise: NoiseSpec, dT: float) -> np.ndarray:
    return np.diag(np.concatenate([np.full(3, noise.sigma_wg * np.sqrt(dT)),
                                   np.full(3, noise.sigma_wa * np.sqrt(dT))]))


def preintegrate(samples: ImuBuffer, bg: Optional[np.ndarray] = None, ba: Optional[np.ndarray] = None,
                 noise: Optional[NoiseSpec] = None) -> Preintegration:
    """
    Midpoint preintegration of bias-corrected samples

    Args:
        samples (ImuBuffer): at least two samples spanning the interval
        bg (np.ndarray): gyro bias estimate
        ba (np.ndarray): accelerometer bias estimate
        noise (NoiseSpec): noise densities

    Returns:
        Preintegration: integrals, bias Jacobians and square-root noise

    Raises:
        EmptyBuffer: fewer than two samples
    """
    if len(samples) < 2:
        raise EmptyBuffer(f"Preintegration needs at least 2 samples, got {len(samples)}")
    noise = noise or NoiseSpec()
    bg = np.zeros(3) if bg is None else np.asarray(bg, dtype=np.float64)
    ba = np.zeros(3) if ba is None else np.asarray(ba, dtype=np.float64)

    omega = samples.gyro - bg
    acc = samples.accel - ba
    dR = np.eye(3)
    alpha = np.zeros(3)
    beta = np.zeros(3)
    J_theta = np.zeros((3, 3))
    J_alpha_bg = np.zeros((3, 3))
    J_alpha_ba = np.zeros((3, 3))
    J_beta_bg = np.zeros((3, 3))
    J_beta_ba = np.zeros((3, 3))
    S = np.zeros((9, 9))
    I3 = np.eye(3)

    for i in range(len(samples) - 1):
        dt = samples.t[i + 1] - samples.t[i]
        w_mid = 0.5 * (omega[i] + omega[i + 1])
        E = exp_so3(-w_mid * dt)
        Jr = right_jacobian(-w_mid * dt)
        dR_next = E @ dR

        a_i = dR.T @ acc[i]
        a_next = dR_next.T @ acc[i + 1]
        a_mid = 0.5 * (a_i + a_next)

        # Bias Jacobians
        J_theta_next = E @ J_theta - E @ Jr * dt
        Da_bg = -dR.T @ skew(acc[i]) @ J_theta - dR_next.T @ skew(acc[i + 1]) @ J_theta_next
        Da_ba = -dR.T - dR_next.T
        J_alpha_bg = J_alpha_bg + J_beta_bg * dt + 0.25 * Da_bg * dt * dt
        J_alpha_ba = J_alpha_ba + J_beta_ba * dt + 0.25 * Da_ba * dt * dt
        J_beta_bg = J_beta_bg + 0.5 * Da_bg * dt
        J_beta_ba = J_beta_ba + 0.5 * Da_ba * dt

        # Linearized noise transition over [theta, alpha, beta]
        Da_theta = -0.5 * (dR.T @ skew(acc[i]) + dR_next.T @ skew(acc[i + 1]) @ E)
        F = np.eye(9)
        F[0:3, 0:3] = E
        F[3:6, 0:3] = 0.5 * dt * dt * Da_theta
        F[3:6, 6:9] = dt * I3
        F[6:9, 0:3] = dt * Da_theta
        G = np.zeros((9, 6))
        G[0:3, 0:3] = -E @ Jr * dt
        Da_ng = 0.5 * dR_next.T @ skew(acc[i + 1]) @ E @ Jr * dt
        Da_na = -0.5 * (dR.T + dR_next.T)
        G[3:6, 0:3] = 0.5 * dt * dt * Da_ng
        G[3:6, 3:6] = 0.5 * dt * dt * Da_na
        G[6:9, 0:3] = dt * Da_ng
        G[6:9, 3:6] = dt * Da_na
        q_sqrt = np.concatenate([np.full(3, noise.sigma_g / np.sqrt(dt)), np.full(3, noise.sigma_a / np.sqrt(dt))])
        S = qr_triangularize(np.vstack([S @ F.T, q_sqrt[:, None] * G.T]))

        alpha = alpha + beta * dt + 0.5 * a_mid * dt * dt
        beta = beta + a_mid * dt
        dR = dR_next
        J_theta = J_theta_next

    dT = float(samples.t[-1] - samples.t[0])
    noise_sqrt = scipy.linalg.block_diag(S, _walk_block(noise, dT))
    jacobians = {
        "theta_bg": J_theta,
        "alpha_bg": J_alpha_bg,
        "alpha_ba": J_alpha_ba,
        "beta_bg": J_beta_bg,
        "beta_ba": J_beta_ba,
    }
    return Preintegration(orthonormalize(dR), alpha, beta, dT, jacobians, noise_sqrt,
                          bg.copy(), ba.copy(), noise, float(samples.t[0]))


def compose(first: Preintegration, second: Preintegration) -> Preintegration:
    """
    Chain two consecutive preintegrations sharing a linearization bias

    Raises:
        ValueError: the intervals are not consecutive or the biases differ
    """
    if abs(first.t1 - second.t0) > 1e-9:
        raise ValueError(f"Intervals are not consecutive: {first.t1} vs {second.t0}")
    if not (np.allclose(first.bg_lin, second.bg_lin) and np.allclose(first.ba_lin, second.ba_lin)):
        raise ValueError("Preintegrations were linearized at different biases")

    R1, R2 = first.delta_R, second.delta_R
    T2 = second.dT
    J1, J2 = first.bias_jacobians, second.bias_jacobians

    delta_R = orthonormalize(R2 @ R1)
    alpha = first.alpha + first.beta * T2 + R1.T @ second.alpha
    beta = first.beta + R1.T @ second.beta
    jacobians = {
        "theta_bg": J2["theta_bg"] + R2 @ J1["theta_bg"],
        "alpha_bg": (J1["alpha_bg"] + T2 * J1["beta_bg"] + R1.T @ J2["alpha_bg"]
                     - R1.T @ skew(second.alpha) @ J1["theta_bg"]),
        "alpha_ba": J1["alpha_ba"] + T2 * J1["beta_ba"] + R1.T @ J2["alpha_ba"],
        "beta_bg": J1["beta_bg"] + R1.T @ J2["beta_bg"] - R1.T @ skew(second.beta) @ J1["theta_bg"],
        "beta_ba": J1["beta_ba"] + R1.T @ J2["beta_ba"],
    }

    A1 = np.eye(9)
    A1[0:3, 0:3] = R2
    A1[3:6, 0:3] = -R1.T @ skew(second.alpha)
    A1[3:6, 6:9] = T2 * np.eye(3)
    A1[6:9, 0:3] = -R1.T @ skew(second.beta)
    A2 = scipy.linalg.block_diag(np.eye(3), R1.T, R1.T)
    S = qr_triangularize(np.vstack([first.noise_sqrt[:9, :9] @ A1.T, second.noise_sqrt[:9, :9] @ A2.T]))

    dT = first.dT + second.dT
    noise_sqrt = scipy.linalg.block_diag(S, _walk_block(first.noise, dT))
    return Preintegration(delta_R, alpha, beta, dT, jacobians, noise_sqrt,
                          first.bg_lin.copy(), first.ba_lin.copy(), first.noise, first.t0)


def propagate_mean(x_I: np.ndarray, preint: Preintegration, g: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Noise-free navigation mean at the end of the interval

    Args:
        x_I (np.ndarray): navigation value [q(4), p, v, bg, ba]
        preint (Preintegration): interval integrals
        g (np.ndarray): global gravity

    Returns:
        np.ndarray: propagated navigation value, biases unchanged
    """
    g = gravity_vector() if g is None else np.asarray(g, dtype=np.float64)
    x_I = np.asarray(x_I, dtype=np.float64)
    R0 = quat_to_rot(x_I[0:4])
    p0, v0 = x_I[4:7], x_I[7:10]
    bg, ba = x_I[10:13], x_I[13:16]
    dR, alpha, beta = preint.corrected(bg, ba)
    T = preint.dT

    R1 = dR @ R0
    p1 = p0 + v0 * T + 0.5 * g * T * T + R0.T @ alpha
    v1 = v0 + g * T + R0.T @ beta
    return np.concatenate([rot_to_quat(R1), p1, v1, bg, ba])


def transition_blocks(x_I: np.ndarray, preint: Preintegration,
                      g: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Error-state transition over [theta, p, v, bg, ba] and the process-noise factor

    The preintegration noise factor is mapped from the start IMU frame into the
    global error state, so w_sqrt^T w_sqrt is the global process covariance.
    """
    x_I = np.asarray(x_I, dtype=np.float64)
    R0 = quat_to_rot(x_I[0:4])
    bg, ba = x_I[10:13], x_I[13:16]
    dR, alpha, beta = preint.corrected(bg, ba)
    J = preint.bias_jacobians
    T = preint.dT

    phi = np.eye(NAV_DIM)
    phi[NAV_THETA, NAV_THETA] = dR
    phi[NAV_THETA, NAV_GYRO_BIAS] = J["theta_bg"]
    phi[NAV_POSITION, NAV_THETA] = -R0.T @ skew(alpha)
    phi[NAV_POSITION, NAV_VELOCITY] = T * np.eye(3)
    phi[NAV_POSITION, NAV_GYRO_BIAS] = R0.T @ J["alpha_bg"]
    phi[NAV_POSITION, NAV_ACCEL_BIAS] = R0.T @ J["alpha_ba"]
    phi[NAV_VELOCITY, NAV_THETA] = -R0.T @ skew(beta)
    phi[NAV_VELOCITY, NAV_GYRO_BIAS] = R0.T @ J["beta_bg"]
    phi[NAV_VELOCITY, NAV_ACCEL_BIAS] = R0.T @ J["beta_ba"]

    frame_map = scipy.linalg.block_diag(np.eye(3), R0.T, R0.T, np.eye(3), np.eye(3))
    w_sqrt = preint.noise_sqrt @ frame_map.T
    return phi, w_sqrt


def local_frame_motion(preint: Preintegration, v0: np.ndarray, g_local: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Motion expressed in the first IMU frame

    Args:
        preint: integrals from the first frame to frame k
        v0: velocity of the first frame expressed in itself
        g_local: gravity expressed in the first frame

    Returns:
        tuple: rotation (frame k <- first frame), position and velocity of frame k in the first frame
    """
    T = preint.dT
    p = v0 * T + 0.5 * g_local * T * T + preint.alpha
    v = v0 + g_local * T + preint.beta
    return preint.delta_R, p, v
