"""
Feature tracks, anchored feature parameterization and the per-frame track
manager that partitions observations into the update paths.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Set

import numpy as np

from config import Config
from core.quaternion import skew

logger = logging.getLogger(__name__)


def feature_name(fid: int) -> str:
    """State block name of a SLAM or key feature"""
    return f"feat_{fid}"


class FeatureCategory(str, Enum):
    SLAM_NEW = "slam_new"
    SLAM_TRACKED = "slam_tracked"
    MSCKF = "msckf"
    DEFERRED = "deferred"


@dataclass
class Observation:
    """One pixel measurement of a feature, tied to the clone taken at time t"""
    t: float
    clone: str
    uv: np.ndarray
    sigma: float = Config.PIXEL_NOISE


@dataclass
class FeatureTrack:
    fid: int
    observations: List[Observation] = field(default_factory=list)
    category: Optional[FeatureCategory] = None

    def add(self, obs: Observation) -> None:
        self.observations.append(obs)

    @property
    def last_clone(self) -> Optional[str]:
        return self.observations[-1].clone if self.observations else None

    @property
    def clones(self) -> List[str]:
        return [o.clone for o in self.observations]

    def prune(self, window: Set[str]) -> int:
        """Drop observations whose clone left the window; returns how many"""
        before = len(self.observations)
        self.observations = [o for o in self.observations if o.clone in window]
        return before - len(self.observations)

    def clear(self) -> None:
        self.observations = []


@dataclass
class AnchoredFeature:
    """
    Feature position in the frame of an anchor IMU clone

    ^G f = R_A^T ^A f + ^G p_A, with R_A the global-to-anchor rotation.
    """
    fid: int
    anchor: str
    f_A: np.ndarray

    def to_global(self, R_A: np.ndarray, p_A: np.ndarray) -> np.ndarray:
        return R_A.T @ self.f_A + p_A

    @classmethod
    def from_global(cls, fid: int, anchor: str, f_G: np.ndarray,
                    R_A: np.ndarray, p_A: np.ndarray) -> "AnchoredFeature":
        return cls(fid, anchor, R_A @ (np.asarray(f_G, dtype=np.float64) - p_A))

    @staticmethod
    def global_jacobians(f_A: np.ndarray, R_A: np.ndarray):
        """d ^G f / d (anchor pose [theta, p], ^A f)"""
        J_pose = np.hstack([-R_A.T @ skew(f_A), np.eye(3)])
        return J_pose, R_A.T


@dataclass
class FramePlan:
    """Partition of the tracks for one frame"""
    slam_tracked: List[int] = field(default_factory=list)
    slam_new: List[int] = field(default_factory=list)
    msckf: List[int] = field(default_factory=list)
    deferred: List[int] = field(default_factory=list)
    lost_slam: List[int] = field(default_factory=list)

    def as_counts(self) -> Dict[str, int]:
        return {
            "slam_tracked": len(self.slam_tracked),
            "slam_new": len(self.slam_new),
            "msckf": len(self.msckf),
            "deferred": len(self.deferred),
            "lost_slam": len(self.lost_slam),
        }


class TrackManager:
    """
    Holds feature tracks and assigns each one an update path every frame

    Policy: SLAM features observed in the current frame are re-observed,
    otherwise marginalized. Other tracks lost in this frame with at least two
    observations go to MSCKF; tracks still observed that span the whole
    window become new SLAM features while the SLAM budget has room and MSCKF
    features otherwise. MSCKF features beyond the per-frame budget are
    deferred to a later frame.
    """

    def __init__(self, max_clones: int = Config.MAX_CLONES,
                 max_msckf: int = Config.MAX_MSCKF_FEATURES,
                 max_slam: int = Config.MAX_SLAM_FEATURES):
        """
        Args:
            max_clones (int): sliding window length
            max_msckf (int): MSCKF features processed per frame
            max_slam (int): SLAM features kept in the state
        """
        self.max_clones = max_clones
        self.max_msckf = max_msckf
        self.max_slam = max_slam
        self.tracks: Dict[int, FeatureTrack] = {}
        self.slam_features: Set[int] = set()
        self.current_clone: Optional[str] = None

    def add_frame(self, t: float, clone: str, observations: Dict[int, np.ndarray],
                  sigma: float = Config.PIXEL_NOISE) -> None:
        self.current_clone = clone
        for fid, uv in observations.items():
            track = self.tracks.setdefault(int(fid), FeatureTrack(int(fid)))
            track.add(Observation(t, clone, np.asarray(uv, dtype=np.float64), sigma))

    def observed_now(self, fid: int) -> bool:
        track = self.tracks.get(fid)
        return track is not None and track.last_clone == self.current_clone

    def lost_slam_features(self) -> List[int]:
        return sorted(fid for fid in self.slam_features if not self.observed_now(fid))

    def prune(self, window: Iterable[str]) -> None:
        """Forget observations on marginalized clones and tracks that became useless"""
        window = set(window)
        for fid in list(self.tracks):
            track = self.tracks[fid]
            track.prune(window)
            if not track.observations and fid not in self.slam_features:
                del self.tracks[fid]

    def categorize(self) -> FramePlan:
        plan = FramePlan()
        candidates = []
        slam_room = self.max_slam - len(self.slam_features)

        for fid in sorted(self.tracks):
            track = self.tracks[fid]
            track.category = None
            observed = track.last_clone == self.current_clone
            if fid in self.slam_features:
                if observed:
                    track.category = FeatureCategory.SLAM_TRACKED
                    plan.slam_tracked.append(fid)
                else:
                    plan.lost_slam.append(fid)
                continue
            if not observed:
                if len(track.observations) >= 2:
                    candidates.append(track)
                continue
            if len(track.observations) >= self.max_clones:
                if slam_room > 0:
                    track.category = FeatureCategory.SLAM_NEW
                    plan.slam_new.append(fid)
                    slam_room -= 1
                else:
                    candidates.append(track)

        candidates.sort(key=lambda tr: (-len(tr.observations), tr.fid))
        for i, track in enumerate(candidates):
            if i < self.max_msckf:
                track.category = FeatureCategory.MSCKF
                plan.msckf.append(track.fid)
            else:
                track.category = FeatureCategory.DEFERRED
                plan.deferred.append(track.fid)

        if plan.deferred:
            logger.debug(f"Deferred {len(plan.deferred)} MSCKF features past the per-frame budget")
        return plan

    def consume(self, fids: Iterable[int]) -> None:
        """Clear observations used by an update path; lost tracks are removed"""
        for fid in fids:
            track = self.tracks.get(fid)
            if track is None:
                continue
            observed = track.last_clone == self.current_clone
            track.clear()
            if not observed and fid not in self.slam_features:
                del self.tracks[fid]

    def promote(self, fid: int) -> None:
        self.slam_features.add(fid)

    def drop_slam(self, fid: int) -> None:
        self.slam_features.discard(fid)
        self.tracks.pop(fid, None)

    def drop(self, fid: int) -> None:
        """Discard a track whose measurement could not be formed"""
        self.tracks.pop(fid, None)
        self.slam_features.discard(fid)
