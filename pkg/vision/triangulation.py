"""
Linear multi-view triangulation with Gauss-Newton refinement on pixels
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from config import Config
from core.errors import BehindCamera, LowParallax, NegativeDepth
from core.quaternion import skew
from sensors.camera import CameraModel, project_with_jacobian

logger = logging.getLogger(__name__)


@dataclass
class CameraView:
    """A calibrated view of a feature: global-to-camera rotation, camera center and pixel"""
    R_CG: np.ndarray
    p_C: np.ndarray
    uv: np.ndarray


@dataclass
class TriangulationResult:
    f_G: np.ndarray
    condition: float
    max_parallax_deg: float
    iterations: int
    reprojection_rms: float


def view_from_imu_pose(R_IG: np.ndarray, p_I: np.ndarray, uv: np.ndarray, cam: CameraModel) -> CameraView:
    """Camera view of an IMU pose (R_IG maps global vectors into the IMU frame)"""
    R_CG = cam.R_CI @ R_IG
    p_C = p_I + R_IG.T @ cam.p_CinI
    return CameraView(R_CG, p_C, np.asarray(uv, dtype=np.float64))


def _max_parallax_deg(rays: List[np.ndarray]) -> float:
    best = 0.0
    for i in range(len(rays)):
        for j in range(i + 1, len(rays)):
            c = np.clip(rays[i] @ rays[j], -1.0, 1.0)
            best = max(best, float(np.degrees(np.arccos(c))))
    return best


def triangulate(views: Sequence[CameraView], cam: CameraModel,
                min_parallax_deg: float = Config.MIN_PARALLAX_DEG,
                max_condition: float = Config.MAX_TRIANGULATION_COND,
                max_iterations: int = 5,
                depth_floor: float = Config.DEPTH_FLOOR) -> TriangulationResult:
    """
    Triangulate a feature from two or more views

    Args:
        views: calibrated views of the feature
        cam: camera model used to undistort the pixels
        min_parallax_deg: minimum angle between any two viewing rays
        max_condition: maximum condition number of the linear normal matrix
        max_iterations: Gauss-Newton steps on the reprojection error

    Returns:
        TriangulationResult: global position and diagnostics

    Raises:
        LowParallax: rays nearly parallel or the linear system ill-conditioned
        NegativeDepth: the point lies behind one of the cameras
    """
    if len(views) < 2:
        raise LowParallax(f"Triangulation needs at least 2 views, got {len(views)}")

    A = np.zeros((3, 3))
    rhs = np.zeros(3)
    rays = []
    for view in views:
        b = cam.bearing(view.uv)
        rays.append(view.R_CG.T @ b)
        S = skew(b) @ view.R_CG
        A += S.T @ S
        rhs += S.T @ (S @ view.p_C)

    condition = float(np.linalg.cond(A))
    parallax = _max_parallax_deg(rays)
    if parallax < min_parallax_deg or not np.isfinite(condition) or condition > max_condition:
        raise LowParallax(f"Parallax {parallax:.3f} deg, condition {condition:.3e}")
    f_G = np.linalg.solve(A, rhs)

    iterations = 0
    for iterations in range(1, max_iterations + 1):
        JtJ = np.zeros((3, 3))
        Jtr = np.zeros(3)
        for view in views:
            f_C = view.R_CG @ (f_G - view.p_C)
            try:
                uv, J = project_with_jacobian(f_C, cam, depth_floor)
            except BehindCamera as e:
                raise NegativeDepth(str(e)) from e
            Jg = J @ view.R_CG
            JtJ += Jg.T @ Jg
            Jtr += Jg.T @ (view.uv - uv)
        step = np.linalg.solve(JtJ, Jtr)
        f_G = f_G + step
        if np.linalg.norm(step) < 1e-10 * max(1.0, np.linalg.norm(f_G)):
            break

    sq = 0.0
    for view in views:
        f_C = view.R_CG @ (f_G - view.p_C)
        if f_C[2] <= depth_floor:
            raise NegativeDepth(f"Triangulated depth {f_C[2]:.3e} m behind a view")
        uv, _ = project_with_jacobian(f_C, cam, depth_floor)
        sq += float(np.sum((view.uv - uv) ** 2))
    rms = float(np.sqrt(sq / (2 * len(views))))
    return TriangulationResult(f_G, condition, parallax, iterations, rms)
