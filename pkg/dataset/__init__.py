"""
Square-root VINS toolkit - recorded sequence ingestion
"""

from dataset.asl import (
    AslImuRecord,
    AslSequence,
    GroundTruth,
    TrackFileRecord,
    export_run,
    load_sequence,
    write_sequence,
)
from dataset.calibration import Calibration, calibration_from_dict, load_calibration, write_calibration

__all__ = [
    'AslImuRecord',
    'AslSequence',
    'GroundTruth',
    'TrackFileRecord',
    'export_run',
    'load_sequence',
    'write_sequence',
    'Calibration',
    'calibration_from_dict',
    'load_calibration',
    'write_calibration'
]
