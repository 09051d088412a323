"""
JPL quaternion and SO(3) helpers.

Quaternions are stored as [x, y, z, w]. A JPL quaternion ^I_G q maps global
vectors into the local frame, R(^I_G q) = ^I_G R. Orientation errors follow
R = exp(-[dtheta]x) R_hat, i.e. R ~ (I - [dtheta]x) R_hat to first order.
"""

import numpy as np
from scipy.spatial.transform import Rotation


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix [v]x"""
    x, y, z = v
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]], dtype=np.result_type(v, np.float64))


def exp_so3(phi: np.ndarray) -> np.ndarray:
    """exp([phi]x) as a rotation matrix"""
    return Rotation.from_rotvec(np.asarray(phi, dtype=np.float64)).as_matrix()


def log_so3(R: np.ndarray) -> np.ndarray:
    return Rotation.from_matrix(np.asarray(R, dtype=np.float64)).as_rotvec()


def right_jacobian(phi: np.ndarray) -> np.ndarray:
    """Right Jacobian of SO(3), exp(phi + e) ~ exp(phi) exp(Jr(phi) e)"""
    phi = np.asarray(phi, dtype=np.float64)
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta < 1e-6:
        return np.eye(3) - 0.5 * K + K @ K / 6.0
    return (np.eye(3)
            - (1.0 - np.cos(theta)) / theta ** 2 * K
            + (theta - np.sin(theta)) / theta ** 3 * K @ K)


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    """JPL quaternion [x, y, z, w] to the rotation matrix it represents"""
    # A JPL quaternion equals the Hamilton quaternion of the transposed rotation
    return Rotation.from_quat(np.asarray(q, dtype=np.float64)).as_matrix().T


def rot_to_quat(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to a unit JPL quaternion with non-negative w"""
    q = Rotation.from_matrix(np.asarray(R, dtype=np.float64).T).as_quat()
    if q[3] < 0:
        q = -q
    return q / np.linalg.norm(q)


def quat_multiply(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """JPL product with R(q (x) p) = R(q) R(p)"""
    return rot_to_quat(quat_to_rot(q) @ quat_to_rot(p))


def quat_boxplus(q: np.ndarray, dtheta: np.ndarray) -> np.ndarray:
    """Apply an orientation error: R(q') = exp(-[dtheta]x) R(q)"""
    return rot_to_quat(exp_so3(-np.asarray(dtheta, dtype=np.float64)) @ quat_to_rot(q))


def rotation_error(R: np.ndarray, R_hat: np.ndarray) -> np.ndarray:
    """The dtheta with R = exp(-[dtheta]x) R_hat"""
    return -log_so3(R @ R_hat.T)


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Closest rotation matrix"""
    return Rotation.from_matrix(np.asarray(R, dtype=np.float64)).as_matrix()


def euler_zyx_to_rot(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Body-to-global rotation Rz(yaw) Ry(pitch) Rx(roll)"""
    return Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_matrix()


def angle_deg(R: np.ndarray, R_hat: np.ndarray) -> float:
    """Geodesic angle between two rotations in degrees"""
    return float(np.degrees(np.linalg.norm(log_so3(R @ R_hat.T))))
