"""
Square-root VINS toolkit - Utils Module
"""

from .diagnostics_logger import DiagnosticsLogger, diagnostics_logger_instance, log_operation
from .report_generator import ReportGenerator

__all__ = [
    'DiagnosticsLogger',
    'diagnostics_logger_instance',
    'log_operation',
    'ReportGenerator'
]
