"""
Square-root VINS toolkit - visual front-end bookkeeping and measurement models
"""

from vision.measurements import (
    FeatureSplit,
    FeatureSystem,
    anchor_change,
    anchor_maps,
    assemble_update,
    linearize,
    msckf_project,
    slam_delayed_init,
    slam_reobservation,
    split_feature_system,
)
from vision.tracks import (
    AnchoredFeature,
    FeatureCategory,
    FeatureTrack,
    FramePlan,
    Observation,
    TrackManager,
    feature_name,
)
from vision.triangulation import CameraView, TriangulationResult, triangulate, view_from_imu_pose

__all__ = [
    'FeatureSplit',
    'FeatureSystem',
    'anchor_change',
    'anchor_maps',
    'assemble_update',
    'linearize',
    'msckf_project',
    'slam_delayed_init',
    'slam_reobservation',
    'split_feature_system',
    'AnchoredFeature',
    'FeatureCategory',
    'FeatureTrack',
    'FramePlan',
    'Observation',
    'TrackManager',
    'feature_name',
    'CameraView',
    'TriangulationResult',
    'triangulate',
    'view_from_imu_pose'
]
