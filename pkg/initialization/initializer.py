"""
Dynamic initializer: keyframes, closed-form velocity and gravity, then
iterated refinement of the full window
"""

import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import Config
from core.errors import GeometryError, InsufficientData, SqrtVinsError
from core.quaternion import rot_to_quat
from core.state import StateBlock, StateVector, nav_value
from sensors.camera import CameraModel
from sensors.imu import ImuBuffer, NoiseSpec, compose, gravity_vector, preintegrate, propagate_mean
from utils.diagnostics_logger import log_operation
from vision.tracks import Observation
from vision.triangulation import triangulate, view_from_imu_pose
from initialization.featureless import MinimalInitState, accumulate_pairs, featureless_solve
from initialization.keyframes import Frame, default_keyframe_count, select_keyframes
from initialization.refine import InitSolution, gravity_aligned_rotation, keyframe_name, srf_refine

logger = logging.getLogger(__name__)


class DynamicInitializer:
    """
    Initializes velocity, gravity, keyframe states and key features from a
    short window of IMU data and feature tracks
    """

    def __init__(self,
                 cam: CameraModel,
                 noise: Optional[NoiseSpec] = None,
                 gravity_magnitude: float = Config.GRAVITY_MAGNITUDE,
                 window: float = 0.5,
                 keyframe_count: Optional[int] = None,
                 max_iterations: int = Config.REFINE_MAX_ITERATIONS,
                 refine: bool = True,
                 min_parallax_deg: float = Config.INIT_MIN_PARALLAX_DEG):
        """
        Args:
            cam (CameraModel): camera intrinsics and extrinsics
            noise (NoiseSpec): IMU noise densities
            gravity_magnitude (float): fixed gravity norm
            window (float): initialization window length in seconds
            keyframe_count (int): defaults to 3 below 0.5 s and 5 otherwise
            max_iterations (int): refinement iteration cap
            refine (bool): False keeps the closed-form solution (no iterations)
            min_parallax_deg (float): triangulation parallax floor for key features
        """
        self.name = "dynamic_init"
        self.cam = cam
        self.noise = noise or NoiseSpec()
        self.gravity_magnitude = gravity_magnitude
        self.window = window
        self.keyframe_count = keyframe_count or default_keyframe_count(window)
        self.max_iterations = max_iterations if refine else 0
        self.min_parallax_deg = min_parallax_deg

    def _keyframe_integrals(self, times: Sequence[float], imu: ImuBuffer, bg: np.ndarray, ba: np.ndarray):
        intervals = [preintegrate(imu.slice(times[k - 1], times[k]), bg, ba, self.noise)
                     for k in range(1, len(times))]
        cumulative = [None, intervals[0]]
        for interval in intervals[1:]:
            cumulative.append(compose(cumulative[-1], interval))
        return intervals, cumulative

    def _initial_guess(self, minimal: MinimalInitState, intervals, bg: np.ndarray, ba: np.ndarray) -> StateVector:
        R_0 = gravity_aligned_rotation(minimal.gravity)
        g = gravity_vector(self.gravity_magnitude)
        values = [nav_value(rot_to_quat(R_0), np.zeros(3), R_0.T @ minimal.v0, bg, ba)]
        for interval in intervals:
            values.append(propagate_mean(values[-1], interval, g))
        return StateVector([StateBlock(keyframe_name(k), "imu", v) for k, v in enumerate(values)])

    def _key_features(self, guess: StateVector, keyframes: Sequence[Frame]) -> Tuple[Dict[int, np.ndarray], Dict[int, List[Observation]]]:
        seen: Dict[int, List[Observation]] = {}
        for k, (t, obs) in enumerate(keyframes):
            for fid, uv in obs.items():
                seen.setdefault(int(fid), []).append(Observation(t, keyframe_name(k), np.asarray(uv, dtype=np.float64)))

        features, observations, dropped = {}, {}, 0
        for fid in sorted(seen):
            obs = seen[fid]
            if len(obs) < 2:
                continue
            views = [view_from_imu_pose(guess.block(o.clone).rotation, guess.block(o.clone).position, o.uv, self.cam)
                     for o in obs]
            try:
                features[fid] = triangulate(views, self.cam, min_parallax_deg=self.min_parallax_deg).f_G
                observations[fid] = obs
            except GeometryError as e:
                dropped += 1
                logger.debug(f"Key feature {fid} not triangulated: {e}")
        if dropped:
            logger.warning(f"Dropped {dropped} of {dropped + len(features)} key features at triangulation")
        return features, observations

    def solve(self, frames: Sequence[Frame], imu: ImuBuffer,
              bg: Optional[np.ndarray] = None, ba: Optional[np.ndarray] = None) -> InitSolution:
        """
        Run the full initialization on time-ordered frames

        Raises:
            SqrtVinsError: any stage failure (insufficient data, degenerate geometry, divergence)
        """
        bg = np.zeros(3) if bg is None else np.asarray(bg, dtype=np.float64)
        ba = np.zeros(3) if ba is None else np.asarray(ba, dtype=np.float64)
        indices = select_keyframes(frames, self.keyframe_count, self.window, imu)
        keyframes = [frames[i] for i in indices]
        times = [float(t) for t, _ in keyframes]

        intervals, cumulative = self._keyframe_integrals(times, imu, bg, ba)
        rotations = [np.eye(3)] + [c.delta_R for c in cumulative[1:]]
        pairs = accumulate_pairs([obs for _, obs in keyframes], rotations, self.cam)
        minimal = featureless_solve(cumulative, pairs, self.cam.p_CinI, self.gravity_magnitude)

        guess = self._initial_guess(minimal, intervals, bg, ba)
        features, observations = self._key_features(guess, keyframes)
        if not features:
            raise InsufficientData("No key feature could be triangulated")

        solution = srf_refine(guess, intervals, features, observations, self.cam,
                              gravity_vector(self.gravity_magnitude),
                              max_iterations=self.max_iterations, keyframe_times=times)
        solution.minimal = minimal
        solution.diagnostics.update({
            "keyframes": len(times),
            "window": times[-1] - times[0],
            "eigen_gap": minimal.diagnostics.get("eigen_gap"),
            "normal_condition": minimal.diagnostics.get("condition"),
            "gravity_candidates": minimal.diagnostics.get("candidates"),
        })
        return solution

    @log_operation("initialize", "init")
    def initialize(self, frames: Sequence[Frame], imu: ImuBuffer,
                   bg: Optional[np.ndarray] = None, ba: Optional[np.ndarray] = None) -> Dict[str, Any]:
        """
        Initialization attempt that never raises

        Returns:
            dict: {"success": bool, "solution": InitSolution} or {"success": False, "error": str, "error_type": str}
        """
        try:
            solution = self.solve(frames, imu, bg, ba)
            logger.info(f"Initialized over {solution.diagnostics['window']:.3f} s with "
                        f"{solution.diagnostics['keyframes']} keyframes")
            return {"success": True, "solution": solution}
        except SqrtVinsError as e:
            logger.error(f"Initialization failed: {str(e)}")
            return {"success": False, "error": str(e), "error_type": type(e).__name__}
