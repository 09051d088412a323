"""
Square-root VINS toolkit - dynamic initialization
"""

from initialization.featureless import (
    EpipolarAccumulator,
    MinimalInitState,
    RelativeDirection,
    accumulate_pairs,
    featureless_solve,
    relative_direction,
)
from initialization.initializer import DynamicInitializer
from initialization.keyframes import default_keyframe_count, select_keyframes
from initialization.refine import InitSolution, gravity_aligned_rotation, keyframe_name, srf_refine

__all__ = [
    'EpipolarAccumulator',
    'MinimalInitState',
    'RelativeDirection',
    'accumulate_pairs',
    'featureless_solve',
    'relative_direction',
    'DynamicInitializer',
    'default_keyframe_count',
    'select_keyframes',
    'InitSolution',
    'gravity_aligned_rotation',
    'keyframe_name',
    'srf_refine'
]
