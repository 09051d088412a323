"""
Square-root VINS toolkit - numerical core
"""

from core.errors import SqrtVinsError
from core.flops import FlopCounter
from core.srf_core import LinearizedMeasurement, SqrtState
from core.state import StateBlock, StateVector

__all__ = [
    'SqrtVinsError',
    'FlopCounter',
    'LinearizedMeasurement',
    'SqrtState',
    'StateBlock',
    'StateVector'
]
