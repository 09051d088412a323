import numpy as np
import pytest

from core.quaternion import exp_so3, rot_to_quat
from core.sqrt_kernels import precision_dtype, qr_triangularize
from core.srf_core import LinearizedMeasurement, SqrtState
from core.state import NAV_BLOCK, StateBlock, StateVector, nav_value
from sensors.camera import CameraModel
from sim.world import SimConfig, TrajectorySpec, default_camera


def random_factor(n, rng, scale=0.5):
    """Well-conditioned random upper triangular factor"""
    A = rng.standard_normal((n, n)) / np.sqrt(n) + np.eye(n)
    return scale * qr_triangularize(A)


def dense_ekf_update(P, H, r, noise_std):
    """Joseph-form reference update; returns (dx, P_post)"""
    R = np.diag(np.asarray(noise_std, dtype=np.float64) ** 2)
    S = H @ P @ H.T + R
    K = np.linalg.solve(S, H @ P).T
    IKH = np.eye(P.shape[0]) - K @ H
    return K @ r, IKH @ P @ IKH.T + K @ R @ K.T


def relative_error(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def feature_state(rng):
    """Factory for a random state made of point-feature blocks only"""
    def _make(n_features=4, precision="double", scale=0.5):
        blocks = [StateBlock(f"feat_{j}", "feature", rng.standard_normal(3)) for j in range(n_features)]
        vector = StateVector(blocks)
        U = random_factor(vector.dim, rng, scale).astype(precision_dtype(precision))
        return SqrtState(vector, U)
    return _make


@pytest.fixture
def nav_state(rng):
    """Factory for a random navigation block followed by point features"""
    def _make(n_features=2, scale=0.3):
        q = rot_to_quat(exp_so3(0.3 * rng.standard_normal(3)))
        blocks = [StateBlock(NAV_BLOCK, "imu", nav_value(q, rng.standard_normal(3), rng.standard_normal(3)))]
        blocks += [StateBlock(f"feat_{j}", "feature", rng.standard_normal(3)) for j in range(n_features)]
        vector = StateVector(blocks)
        return SqrtState(vector, random_factor(vector.dim, rng, scale))
    return _make


@pytest.fixture
def random_measurement(rng):
    def _make(n, m, noise=0.5):
        return LinearizedMeasurement(rng.standard_normal(m), rng.standard_normal((m, n)), noise * np.ones(m))
    return _make


@pytest.fixture
def pinhole():
    return CameraModel(450.0, 450.0, 320.0, 240.0, width=640, height=480)


@pytest.fixture
def euroc_camera():
    return default_camera()


@pytest.fixture
def noise_free_config():
    return SimConfig(noise_scale=0.0, pixel_noise=0.0, track_drop_prob=0.0)


@pytest.fixture
def short_trajectory():
    return TrajectorySpec(duration=3.0, feature_count=800)
