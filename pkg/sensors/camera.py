"""
Pinhole camera with radial-tangential or equidistant distortion.

Extrinsics are stored as the rotation R_CI (IMU frame to camera frame) and the
IMU origin expressed in the camera frame, so ^C f = R_CI ^I f + ^C p_I.
"""

import logging
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from config import Config
from core.errors import BehindCamera, NumericalError

logger = logging.getLogger(__name__)

DISTORTION_KINDS = ("radtan", "equidistant")


@dataclass(frozen=True)
class CameraModel:
    """
    Intrinsics, distortion and camera-IMU extrinsics

    Args:
        fx, fy, cx, cy: focal lengths and principal point in pixels
        distortion: "radtan" (k1, k2, p1, p2) or "equidistant" (k1, k2, k3, k4)
        coeffs: distortion coefficients
        R_CI: rotation from the IMU frame into the camera frame
        p_IinC: IMU origin in the camera frame (m)
        width, height: image size in pixels
        time_offset: fixed camera-IMU time offset (s)
    """
    fx: float
    fy: float
    cx: float
    cy: float
    distortion: str = "radtan"
    coeffs: Tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    R_CI: np.ndarray = field(default_factory=lambda: np.eye(3))
    p_IinC: np.ndarray = field(default_factory=lambda: np.zeros(3))
    width: int = 752
    height: int = 480
    time_offset: float = 0.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.distortion not in DISTORTION_KINDS:
            raise ValueError(f"Unknown distortion kind: {self.distortion}")
        if len(self.coeffs) != 4:
            raise ValueError(f"{self.distortion} distortion takes 4 coefficients, got {len(self.coeffs)}")
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        object.__setattr__(self, "R_CI", np.asarray(self.R_CI, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "p_IinC", np.asarray(self.p_IinC, dtype=np.float64).reshape(3))

    @property
    def R_IC(self) -> np.ndarray:
        return self.R_CI.T

    @property
    def p_CinI(self) -> np.ndarray:
        """Camera origin in the IMU frame"""
        return -self.R_IC @ self.p_IinC

    def imu_to_camera(self, f_I: np.ndarray) -> np.ndarray:
        return self.R_CI @ f_I + self.p_IinC

    def in_image(self, uv: np.ndarray) -> bool:
        return 0.0 <= uv[0] < self.width and 0.0 <= uv[1] < self.height

    # Distortion on normalized coordinates

    def distort(self, xn: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Distorted normalized point and its 2x2 Jacobian"""
        x, y = float(xn[0]), float(xn[1])
        if self.distortion == "radtan":
            k1, k2, p1, p2 = self.coeffs
            r2 = x * x + y * y
            radial = 1.0 + k1 * r2 + k2 * r2 * r2
            xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
            yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
            dr = k1 + 2.0 * k2 * r2
            J = np.array([
                [radial + 2.0 * x * x * dr + 2.0 * p1 * y + 6.0 * p2 * x,
                 2.0 * x * y * dr + 2.0 * p1 * x + 2.0 * p2 * y],
                [2.0 * x * y * dr + 2.0 * p1 * x + 2.0 * p2 * y,
                 radial + 2.0 * y * y * dr + 6.0 * p1 * y + 2.0 * p2 * x],
            ])
            return np.array([xd, yd]), J

        k1, k2, k3, k4 = self.coeffs
        r = np.hypot(x, y)
        if r < 1e-12:
            return np.array([x, y]), np.eye(2)
        theta = np.arctan(r)
        t2 = theta * theta
        theta_d = theta * (1.0 + k1 * t2 + k2 * t2 ** 2 + k3 * t2 ** 3 + k4 * t2 ** 4)
        dtheta_d = 1.0 + 3.0 * k1 * t2 + 5.0 * k2 * t2 ** 2 + 7.0 * k3 * t2 ** 3 + 9.0 * k4 * t2 ** 4
        scale = theta_d / r
        dscale_dr = (dtheta_d / (1.0 + r * r) * r - theta_d) / (r * r)
        u = np.array([x, y]) / r
        J = scale * np.eye(2) + dscale_dr * np.outer(np.array([x, y]), u)
        return scale * np.array([x, y]), J

    def undistort(self, xd: np.ndarray, max_iterations: int = 20, tol: float = 1e-14) -> np.ndarray:
        """Invert the distortion by Newton iteration"""
        xd = np.asarray(xd, dtype=np.float64)
        xn = xd.copy()
        for _ in range(max_iterations):
            guess, J = self.distort(xn)
            step = np.linalg.solve(J, guess - xd)
            xn = xn - step
            if np.linalg.norm(step) < tol:
                return xn
        if np.linalg.norm(self.distort(xn)[0] - xd) > 1e-10:
            raise NumericalError(f"Undistortion did not converge for {xd}")
        return xn

    # Pixel mapping

    def pixel_to_normalized(self, uv: np.ndarray) -> np.ndarray:
        xd = np.array([(uv[0] - self.cx) / self.fx, (uv[1] - self.cy) / self.fy])
        return self.undistort(xd)

    def bearing(self, uv: np.ndarray) -> np.ndarray:
        """Unit bearing in the camera frame"""
        xn = self.pixel_to_normalized(uv)
        b = np.array([xn[0], xn[1], 1.0])
        return b / np.linalg.norm(b)


def project(f_C: np.ndarray, cam: CameraModel, depth_floor: float = Config.DEPTH_FLOOR) -> np.ndarray:
    """
    Pixel of a point in the camera frame

    Raises:
        BehindCamera: depth not above the floor
    """
    return project_with_jacobian(f_C, cam, depth_floor)[0]


def project_with_jacobian(f_C: np.ndarray, cam: CameraModel,
                          depth_floor: float = Config.DEPTH_FLOOR) -> Tuple[np.ndarray, np.ndarray]:
    """Pixel and 2x3 Jacobian with respect to the camera-frame point"""
    x, y, z = np.asarray(f_C, dtype=np.float64)
    if z <= depth_floor:
        raise BehindCamera(f"Point depth {z:.3e} m not above {depth_floor} m")
    xn = np.array([x / z, y / z])
    xd, Jd = cam.distort(xn)
    uv = np.array([cam.fx * xd[0] + cam.cx, cam.fy * xd[1] + cam.cy])
    Jn = np.array([[1.0 / z, 0.0, -x / (z * z)],
                   [0.0, 1.0 / z, -y / (z * z)]])
    J = np.diag([cam.fx, cam.fy]) @ Jd @ Jn
    return uv, J


def project_points(f_C: np.ndarray, cam: CameraModel,
                   depth_floor: float = Config.DEPTH_FLOOR) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vectorized projection of (N, 3) camera-frame points

    Returns:
        tuple: (N, 2) pixels and a mask of points in front of the camera and inside the image
    """
    f_C = np.atleast_2d(np.asarray(f_C, dtype=np.float64))
    z = f_C[:, 2]
    front = z > depth_floor
    safe_z = np.where(front, z, 1.0)
    x = f_C[:, 0] / safe_z
    y = f_C[:, 1] / safe_z
    if cam.distortion == "radtan":
        k1, k2, p1, p2 = cam.coeffs
        r2 = x * x + y * y
        radial = 1.0 + k1 * r2 + k2 * r2 * r2
        xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        # Beyond this radius the radial polynomial may fold back into the image
        front = front & (r2 < 1.2)
    else:
        k1, k2, k3, k4 = cam.coeffs
        r = np.hypot(x, y)
        theta = np.arctan(r)
        t2 = theta * theta
        theta_d = theta * (1.0 + k1 * t2 + k2 * t2 ** 2 + k3 * t2 ** 3 + k4 * t2 ** 4)
        scale = np.where(r > 1e-12, theta_d / np.maximum(r, 1e-12), 1.0)
        xd, yd = scale * x, scale * y
    uv = np.column_stack([cam.fx * xd + cam.cx, cam.fy * yd + cam.cy])
    inside = (uv[:, 0] >= 0.0) & (uv[:, 0] < cam.width) & (uv[:, 1] >= 0.0) & (uv[:, 1] < cam.height)
    return uv, front & inside
