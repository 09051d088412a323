"""
Sliding-window visual-inertial loop driving any FilterEngine
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from config import Config
from core.errors import GeometryError, NumericalError, StateLayoutError
from core.flops import FlopCounter
from core.srf_core import LinearizedMeasurement
from core.state import NAV_BLOCK, StateVector
from estimators.base_estimator import FilterEngine
from sensors.camera import CameraModel
from sensors.imu import ImuBuffer, NoiseSpec, gravity_vector, preintegrate, propagate_mean, transition_blocks
from utils.diagnostics_logger import diagnostics_logger_instance
from vision.measurements import (
    FeatureSplit,
    anchor_maps,
    assemble_update,
    linearize,
    msckf_project,
    slam_reobservation,
    split_feature_system,
)
from vision.tracks import AnchoredFeature, TrackManager, feature_name
from vision.triangulation import triangulate, view_from_imu_pose

logger = logging.getLogger(__name__)

# Measurement failures that drop a feature instead of aborting the frame
FEATURE_ERRORS = (GeometryError, NumericalError, StateLayoutError)


def clone_name(frame: int) -> str:
    return f"clone_{frame}"


@dataclass
class FrameResult:
    """Outcome of one processed camera frame"""
    frame: int
    t: float
    plan: Dict[str, int]
    m: int
    accepted: int
    rejected: int
    update: Dict[str, Any]
    nav_value: np.ndarray
    nav_covariance: Optional[np.ndarray] = None
    failures: Dict[str, int] = field(default_factory=dict)


class VinsOrchestrator:
    """
    Runs the per-frame order: propagate, clone, track, anchor change,
    marginalize, categorize, form and gate measurements, append new SLAM
    features and apply one stacked update.
    """

    def __init__(self,
                 engine: FilterEngine,
                 cam: CameraModel,
                 noise: Optional[NoiseSpec] = None,
                 gravity: Optional[np.ndarray] = None,
                 tracks: Optional[TrackManager] = None,
                 chi2_confidence: float = Config.CHI2_CONFIDENCE,
                 chi2_inflation: float = Config.CHI2_INFLATION,
                 record_covariance: bool = True,
                 pixel_sigma: float = Config.PIXEL_NOISE):
        """
        Args:
            engine (FilterEngine): covariance representation being driven
            cam (CameraModel): intrinsics and fixed extrinsics
            noise (NoiseSpec): IMU noise densities
            gravity (np.ndarray): global gravity vector
            tracks (TrackManager): feature bookkeeping and categorization policy
            record_covariance (bool): keep the navigation covariance of every frame
            pixel_sigma (float): pixel noise standard deviation assigned to observations
        """
        self.engine = engine
        self.cam = cam
        self.noise = noise or NoiseSpec()
        self.gravity = gravity_vector() if gravity is None else np.asarray(gravity, dtype=np.float64)
        self.tracks = tracks or TrackManager()
        self.chi2_confidence = chi2_confidence
        self.chi2_inflation = chi2_inflation
        self.record_covariance = record_covariance
        self.pixel_sigma = pixel_sigma

        self.frame = 0
        self.t: Optional[float] = None
        self.history: List[FrameResult] = []
        self.update_records: List[Dict[str, Any]] = []

    def start(self, vector: StateVector, U: np.ndarray, t0: float) -> None:
        """Initialize the engine at time t0"""
        self.engine.initialize(vector, U)
        self.t = float(t0)
        self.frame = 0
        self.history = []
        self.update_records = []
        logger.info(f"Started {self.engine.name} ({self.engine.precision}) at t={t0:.3f}, n={vector.dim}")

    # Per-frame steps

    def _propagate(self, t: float, imu: ImuBuffer) -> None:
        if self.t is None:
            raise StateLayoutError("Call start() before processing frames")
        if t <= self.t:
            return
        nav = self.engine.vector.block(NAV_BLOCK).value
        preint = preintegrate(imu.slice(self.t, t), nav[10:13], nav[13:16], self.noise)
        new_nav = propagate_mean(nav, preint, self.gravity)
        phi, w_sqrt = transition_blocks(nav, preint, self.gravity)
        self.engine.propagate(phi, w_sqrt, new_nav, defer_qr=True)

    def _select_victim(self) -> Optional[str]:
        clones = self.engine.vector.clone_names
        return clones[-1] if len(clones) > self.tracks.max_clones else None

    def _reanchor(self, victim: Optional[str], lost: List[int], current: str) -> None:
        if victim is None:
            return
        vector = self.engine.vector
        for fid in sorted(self.tracks.slam_features):
            name = feature_name(fid)
            if fid in lost or name not in vector:
                continue
            block = vector.block(name)
            if block.meta.get("anchor") != victim:
                continue
            maps, f_B = anchor_maps(self.engine.vector, name, current)
            self.engine.transform_block(name, maps, f_B, meta=dict(block.meta, anchor=current))

    def _triangulate(self, fid: int):
        vector = self.engine.vector
        track = self.tracks.tracks[fid]
        views = []
        for obs in track.observations:
            block = vector.block(obs.clone)
            views.append(view_from_imu_pose(block.rotation, block.position, obs.uv, self.cam))
        return track.observations, triangulate(views, self.cam)

    def _gate(self, meas: LinearizedMeasurement, counter: FlopCounter) -> bool:
        return self.engine.gate(meas, self.chi2_confidence, self.chi2_inflation, counter)

    def process_frame(self, t: float, observations: Dict[int, np.ndarray], imu: ImuBuffer,
                      counter: Optional[FlopCounter] = None) -> FrameResult:
        """
        Process one camera frame

        Args:
            t (float): frame timestamp in seconds
            observations (dict): feature id -> pixel
            imu (ImuBuffer): samples covering the interval since the previous frame
            counter (FlopCounter): accumulates the update cost

        Returns:
            FrameResult: counts, update outcome and the navigation estimate
        """
        counter = FlopCounter() if counter is None else counter
        failures: Dict[str, int] = {}

        def fail(kind: str, fid: int, err: Exception) -> None:
            failures[type(err).__name__] = failures.get(type(err).__name__, 0) + 1
            logger.debug(f"{kind} feature {fid} dropped: {err}")

        self._propagate(t, imu)
        current = clone_name(self.frame)
        self.engine.clone(current, meta={"t": float(t)})
        self.tracks.add_frame(t, current, observations, sigma=self.pixel_sigma)

        victim = self._select_victim()
        lost = self.tracks.lost_slam_features()
        self._reanchor(victim, lost, current)
        victims = ([victim] if victim else []) + [feature_name(f) for f in lost if feature_name(f) in self.engine.vector]
        self.engine.marginalize(victims)
        self.tracks.prune(self.engine.vector.clone_names)
        for fid in lost:
            self.tracks.drop_slam(fid)

        plan = self.tracks.categorize()
        vector = self.engine.vector
        blocks: List[LinearizedMeasurement] = []
        queued: List[Tuple[int, AnchoredFeature, FeatureSplit]] = []
        accepted = rejected = 0

        for fid in plan.msckf:
            try:
                obs, tri = self._triangulate(fid)
                meas = msckf_project(linearize(obs, vector, self.cam, f_G=tri.f_G))
                if self._gate(meas, counter):
                    blocks.append(meas)
                    accepted += 1
                else:
                    rejected += 1
            except FEATURE_ERRORS as e:
                fail("MSCKF", fid, e)
        self.tracks.consume(plan.msckf)

        for fid in plan.slam_tracked:
            try:
                obs = self.tracks.tracks[fid].observations[-1]
                meas = slam_reobservation(obs, vector, self.cam, feature_name(fid))
                if self._gate(meas, counter):
                    blocks.append(meas)
                    accepted += 1
                else:
                    rejected += 1
            except FEATURE_ERRORS as e:
                fail("SLAM", fid, e)
        self.tracks.consume(plan.slam_tracked)

        current_block = vector.block(current)
        for fid in plan.slam_new:
            try:
                obs, tri = self._triangulate(fid)
                feature = AnchoredFeature.from_global(fid, current, tri.f_G,
                                                      current_block.rotation, current_block.position)
                split = split_feature_system(linearize(obs, vector, self.cam, feature=feature))
                if self._gate(split.nullspace, counter):
                    queued.append((fid, feature, split))
                    blocks.append(split.nullspace)
                    accepted += 1
                else:
                    rejected += 1
                    self.tracks.drop(fid)
            except FEATURE_ERRORS as e:
                fail("new SLAM", fid, e)
                self.tracks.drop(fid)

        for fid, feature, split in queued:
            self.engine.append_feature(feature_name(fid), feature.f_A, split.J_x, split.J_f,
                                       residual=split.residual, meta={"fid": fid, "anchor": current})
            self.tracks.promote(fid)
        self.tracks.consume([fid for fid, _, _ in queued])

        n = self.engine.vector.dim
        stacked = assemble_update(blocks, n)
        result = self.engine.update(stacked, counter=counter)
        cond = result.get("cond_C", result.get("cond_R", result.get("cond_S", float("nan"))))
        record = diagnostics_logger_instance.record_update(self.frame, self.engine.name, stacked.m, n,
                                                  cond, counter.total, accepted, rejected)
        self.update_records.append(record)
        if not result.get("success", False):
            logger.warning(f"Frame {self.frame} update failed: {result.get('error')}")

        nav_cov = self.engine.nav_covariance() if self.record_covariance else None
        frame_result = FrameResult(
            frame=self.frame,
            t=float(t),
            plan=plan.as_counts(),
            m=stacked.m,
            accepted=accepted,
            rejected=rejected,
            update=result,
            nav_value=self.engine.vector.block(NAV_BLOCK).value.copy(),
            nav_covariance=nav_cov,
            failures=failures,
        )
        self.history.append(frame_result)
        self.t = float(t)
        self.frame += 1
        return frame_result

    def summary(self) -> Dict[str, Any]:
        """Totals over the processed frames"""
        return {
            "estimator": self.engine.name,
            "precision": self.engine.precision,
            "frames": len(self.history),
            "failed_updates": self.engine.failed_updates,
            "accepted": sum(r.accepted for r in self.history),
            "rejected": sum(r.rejected for r in self.history),
            "rows": sum(r.m for r in self.history),
            "slam_features": len(self.tracks.slam_features),
        }
