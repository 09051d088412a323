"""
Square-root VINS toolkit - sensor models
"""

from sensors.camera import CameraModel, project, project_points, project_with_jacobian
from sensors.imu import (
    ImuBuffer,
    ImuSample,
    NoiseSpec,
    Preintegration,
    compose,
    gravity_vector,
    local_frame_motion,
    preintegrate,
    propagate_mean,
    transition_blocks,
)

__all__ = [
    'CameraModel',
    'project',
    'project_points',
    'project_with_jacobian',
    'ImuBuffer',
    'ImuSample',
    'NoiseSpec',
    'Preintegration',
    'compose',
    'gravity_vector',
    'local_frame_motion',
    'preintegrate',
    'propagate_mean',
    'transition_blocks'
]
