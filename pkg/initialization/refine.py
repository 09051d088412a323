"""
Iterated square-root refinement of the initialization window.

Keyframe states are tied together by hard IMU propagation and form the
prior; key features enter through their visual residuals only. Every
iteration splits each feature's system into the rows that fix the feature
and the nullspace rows that constrain the keyframes, applies one Cholesky
update to the prior and back-solves the features. The covariance is formed
once, after convergence.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import Config
from core.errors import Diverged, GeometryError, NumericalError
from core.quaternion import exp_so3, skew
from core.sqrt_kernels import qr_triangularize, solve_lower
from core.srf_core import LinearizedMeasurement, SqrtState, append_feature, update_llt
from core.state import CALIB_BLOCK, NAV_BLOCK, StateBlock, StateVector
from sensors.camera import CameraModel
from sensors.imu import Preintegration, transition_blocks
from vision.measurements import FeatureSplit, linearize, split_feature_system
from vision.tracks import Observation, feature_name

logger = logging.getLogger(__name__)


def keyframe_name(k: int) -> str:
    return f"kf_{k}"


def gravity_aligned_rotation(g_local: np.ndarray) -> np.ndarray:
    """
    Global-to-local rotation whose global frame has gravity along -z

    Yaw is fixed by taking the smallest rotation between the two vertical
    directions.
    """
    up_local = -np.asarray(g_local, dtype=np.float64)
    up_local = up_local / np.linalg.norm(up_local)
    ez = np.array([0.0, 0.0, 1.0])
    axis = np.cross(ez, up_local)
    s, c = np.linalg.norm(axis), float(ez @ up_local)
    if s < 1e-12:
        return np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    return exp_so3(axis / s * np.arctan2(s, c))


def keyframe_prior_covariance(R_0: np.ndarray,
                              roll_pitch_std: float = Config.INIT_PRIOR_ROLL_PITCH_STD,
                              yaw_std: float = Config.INIT_PRIOR_YAW_STD,
                              position_std: float = Config.INIT_PRIOR_POSITION_STD,
                              velocity_std: float = Config.INIT_PRIOR_VELOCITY_STD,
                              gyro_bias_std: float = Config.PRIOR_GYRO_BIAS_STD,
                              accel_bias_std: float = Config.PRIOR_ACCEL_BIAS_STD) -> np.ndarray:
    """First keyframe covariance; yaw and position only fix the gauge"""
    P = np.zeros((15, 15))
    # Global-frame angle perturbations map into the local error through R_0
    P[0:3, 0:3] = R_0 @ np.diag([roll_pitch_std ** 2, roll_pitch_std ** 2, yaw_std ** 2]) @ R_0.T
    P[3:6, 3:6] = position_std ** 2 * np.eye(3)
    P[6:9, 6:9] = velocity_std ** 2 * np.eye(3)
    P[9:12, 9:12] = gyro_bias_std ** 2 * np.eye(3)
    P[12:15, 12:15] = accel_bias_std ** 2 * np.eye(3)
    return 0.5 * (P + P.T)


def propagated_prior(guess: StateVector, intervals: Sequence[Preintegration], g: np.ndarray,
                     P0: np.ndarray) -> SqrtState:
    """
    Square-root prior over all keyframe states

    Each keyframe is appended as [[U, U_prev Phi^T], [0, qr(w_sqrt)]].
    """
    names = guess.names
    U = np.linalg.cholesky(P0).T
    for k in range(1, len(names)):
        prev = guess.block(names[k - 1]).value
        phi, w_sqrt = transition_blocks(prev, intervals[k - 1], g)
        n = U.shape[0]
        U_prev = U[:, n - 15:n]
        U = np.block([
            [U, U_prev @ phi.T],
            [np.zeros((15, n)), qr_triangularize(w_sqrt)],
        ])
    return SqrtState(guess.copy(), U)


@dataclass
class InitSolution:
    """
    Refined initialization window

    ``state`` holds every keyframe state followed by the key features in the
    global frame, with one square-root covariance over all of them.
    """
    state: SqrtState
    keyframe_times: List[float]
    iterations: int
    converged: bool
    final_cost: float
    trace: List[Dict[str, Any]] = field(default_factory=list)
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    minimal: Any = None

    @property
    def vector(self) -> StateVector:
        return self.state.vector

    @property
    def U(self) -> np.ndarray:
        return self.state.U

    @property
    def keyframe_names(self) -> List[str]:
        return [b.name for b in self.vector.blocks if b.kind == "imu"]

    @property
    def feature_ids(self) -> List[int]:
        return [b.meta["fid"] for b in self.vector.blocks if b.kind == "feature"]

    def to_filter_state(self, max_features: int = Config.MAX_SLAM_FEATURES) -> Tuple[StateVector, np.ndarray, List[int]]:
        """
        Filter state at the last keyframe

        The last keyframe becomes the navigation state, the earlier ones clones
        (newest first), and up to ``max_features`` key features become SLAM
        features anchored in the newest clone. Everything else is marginalized.

        Returns:
            tuple: state vector, upper triangular factor, SLAM feature ids
        """
        old = self.vector
        kfs = self.keyframe_names
        if len(kfs) < 2:
            raise ValueError("Filter hand-off needs at least two keyframes")
        last = old.block(kfs[-1])
        anchor_name = kfs[-2]
        anchor = old.block(anchor_name)
        R_A, p_A = anchor.rotation, anchor.position

        blocks = [StateBlock(NAV_BLOCK, "imu", last.value)]
        rows: List[np.ndarray] = []

        def select(name: str, width: int) -> np.ndarray:
            T = np.zeros((width, old.dim))
            sl = old.err_slice(name)
            T[:, sl.start:sl.start + width] = np.eye(width)
            return T

        rows.append(select(kfs[-1], 15))
        for k in range(len(kfs) - 2, -1, -1):
            block = old.block(kfs[k])
            blocks.append(StateBlock(kfs[k], "pose", block.value[0:7], {"t": self.keyframe_times[k]}))
            rows.append(select(kfs[k], 6))

        fids = self.feature_ids[:max_features]
        asl = old.err_slice(anchor_name)
        for fid in fids:
            name = feature_name(fid)
            f_G = old.block(name).value
            f_A = R_A @ (f_G - p_A)
            T = np.zeros((3, old.dim))
            T[:, old.err_slice(name)] = R_A
            T[:, asl.start:asl.start + 3] += skew(f_A)
            T[:, asl.start + 3:asl.start + 6] += -R_A
            blocks.append(StateBlock(name, "anchored_feature", f_A, {"fid": fid, "anchor": anchor_name}))
            rows.append(T)

        T = np.vstack(rows)
        U_new = qr_triangularize(self.U.astype(np.float64) @ T.T)
        return StateVector(blocks), U_new, fids


def _feature_systems(vector: StateVector, features: Dict[int, np.ndarray],
                     observations: Dict[int, List[Observation]],
                     cam: CameraModel) -> Tuple[Dict[int, FeatureSplit], float]:
    """Split systems of every usable feature and the total whitened cost"""
    splits, cost = {}, 0.0
    for fid in sorted(features):
        try:
            system = linearize(observations[fid], vector, cam, f_G=features[fid])
            if system.m < 4:
                raise GeometryError(f"only {system.m} usable rows")
            splits[fid] = split_feature_system(system, label="init")
        except (GeometryError, NumericalError) as e:
            logger.warning(f"Key feature {fid} dropped from refinement: {e}")
            continue
        cost += float(np.sum((system.residual / system.noise_std) ** 2))
    return splits, cost


def _stacked_nullspace(splits: Dict[int, FeatureSplit], shift: np.ndarray, n: int) -> LinearizedMeasurement:
    """Nullspace rows re-expressed about the prior mean: r + H (x_i - x_prior)"""
    if not splits:
        return LinearizedMeasurement.empty(n)
    H = np.vstack([s.nullspace.dense_jacobian(n) for s in splits.values()])
    r = np.concatenate([s.nullspace.residual for s in splits.values()])
    return LinearizedMeasurement(r + H @ shift, H, np.ones(r.size), label="init")


def srf_refine(guess: StateVector, intervals: Sequence[Preintegration], features: Dict[int, np.ndarray],
               observations: Dict[int, List[Observation]], cam: CameraModel, g: np.ndarray,
               max_iterations: int = Config.REFINE_MAX_ITERATIONS,
               step_tol: float = Config.REFINE_STEP_TOL,
               keyframe_times: Optional[List[float]] = None,
               prior_covariance: Optional[np.ndarray] = None) -> InitSolution:
    """
    Iterated update of keyframe states and key features

    Args:
        guess: keyframe states ``kf_0..kf_{K-1}`` in the gravity-aligned frame
        intervals: preintegration between consecutive keyframes
        features: feature id -> global position guess
        observations: feature id -> keyframe observations
        cam: camera model
        g: global gravity
        max_iterations: iteration cap; 0 keeps the closed-form guess
        step_tol: convergence threshold on the joint step norm

    Returns:
        InitSolution: refined window with covariance

    Raises:
        Diverged: the visual cost grew in two consecutive iterations
    """
    if CALIB_BLOCK in guess:
        raise ValueError("Extrinsic calibration is not refined during initialization")
    first = guess.block(guess.names[0])
    P0 = prior_covariance if prior_covariance is not None else keyframe_prior_covariance(first.rotation)
    prior = propagated_prior(guess, intervals, g, P0)
    n = prior.dim

    x = guess.copy()
    f = {fid: np.asarray(p, dtype=np.float64).copy() for fid, p in features.items()}
    trace: List[Dict[str, Any]] = []
    converged = max_iterations == 0
    growth, last_cost, iterations = 0, np.inf, 0

    splits, cost = _feature_systems(x, f, observations, cam)
    for it in range(max_iterations):
        trace.append({"iteration": it, "cost": cost, "kf0": x.block(guess.names[0]).value.copy()})
        if cost > last_cost:
            growth += 1
            if growth >= 2:
                raise Diverged(f"Refinement cost grew twice in a row ({last_cost:.4g} -> {cost:.4g})")
        else:
            growth = 0
        last_cost = cost

        meas = _stacked_nullspace(splits, x.boxminus(prior.vector), n)
        posterior = update_llt(prior, meas)
        dx = posterior.vector.boxminus(x)
        step_sq = float(dx @ dx)
        for fid, split in splits.items():
            df = solve_lower(split.J_f, split.residual - split.J_x @ dx[:split.J_x.shape[1]])
            f[fid] = f[fid] + df
            step_sq += float(df @ df)
        x = posterior.vector
        iterations = it + 1
        f = {fid: f[fid] for fid in splits}
        splits, cost = _feature_systems(x, f, observations, cam)
        if np.sqrt(step_sq) < step_tol:
            converged = True
            break

    trace.append({"iteration": iterations, "cost": cost, "kf0": x.block(guess.names[0]).value.copy()})

    # Covariance at the final linearization point; the mean stays at x
    meas = _stacked_nullspace(splits, x.boxminus(prior.vector), n)
    U = update_llt(prior, meas).U
    state = SqrtState(x, U)
    for fid, split in splits.items():
        state = append_feature(state, feature_name(fid), f[fid], split.J_x, split.J_f,
                               kind="feature", meta={"fid": fid})

    logger.info(f"Refinement finished after {iterations} iterations, cost {cost:.4g}, "
                f"{len(splits)} key features")
    return InitSolution(
        state=state,
        keyframe_times=list(keyframe_times or []),
        iterations=iterations,
        converged=converged,
        final_cost=cost,
        trace=trace,
        diagnostics={"features": len(splits), "rows": meas.m},
    )
