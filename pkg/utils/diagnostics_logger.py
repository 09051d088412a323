"""
Diagnostics logging for filter operations and per-update records
"""

import logging
import time
from functools import wraps
from typing import Any, Callable, Dict, List, Optional

import numpy as np

# Filter-operation logger, separate from module loggers so it can be silenced on its own
diagnostics_log = logging.getLogger('filter_ops')

UPDATE_RECORD_FIELDS = ['timestep', 'backend', 'm', 'n', 'cond_C', 'flops', 'accepted', 'rejected']


class DiagnosticsLogger:
    """
    Records timed filter operations and per-update diagnostics
    """

    def __init__(self):
        self.call_history: List[Dict[str, Any]] = []
        self.performance_metrics: Dict[str, Dict[str, float]] = {}
        self.update_records: List[Dict[str, Any]] = []

    def log_operation(self,
                      operation: str,
                      component: str,
                      execution_time: float,
                      success: bool,
                      error: Optional[str] = None,
                      details: Optional[Dict[str, Any]] = None) -> None:
        """
        Log one timed operation

        Args:
            operation (str): operation name (propagate, update, ...)
            component (str): estimator or module performing it
            execution_time (float): elapsed seconds
            success (bool): whether the call returned normally
            error (str): error message if failed
            details (dict): small summary of inputs
        """
        call_record = {
            'operation': operation,
            'component': component,
            'details': self._sanitize_details(details or {}),
            'execution_time_ms': round(execution_time * 1000, 3),
            'success': success,
            'error': error
        }
        self.call_history.append(call_record)

        if operation not in self.performance_metrics:
            self.performance_metrics[operation] = {
                'total_calls': 0,
                'successful_calls': 0,
                'failed_calls': 0,
                'total_execution_time': 0.0,
                'average_execution_time': 0.0
            }

        metrics = self.performance_metrics[operation]
        metrics['total_calls'] += 1
        metrics['total_execution_time'] += execution_time
        metrics['average_execution_time'] = metrics['total_execution_time'] / metrics['total_calls']
        if success:
            metrics['successful_calls'] += 1
        else:
            metrics['failed_calls'] += 1

        message = f"OP: {operation} | COMPONENT: {component} | TIME: {execution_time * 1000:.3f}ms | SUCCESS: {success}"
        if error:
            message += f" | ERROR: {error}"
        diagnostics_log.debug(message)
        if not success:
            diagnostics_log.warning(f"OPERATION FAILURE - {operation}: {error}")

    def record_update(self, timestep: int, backend: str, m: int, n: int, cond_C: float,
                      flops: float, accepted: int, rejected: int) -> Dict[str, Any]:
        """Store one per-update filter record"""
        record = {
            'timestep': int(timestep),
            'backend': backend,
            'm': int(m),
            'n': int(n),
            'cond_C': float(cond_C),
            'flops': float(flops),
            'accepted': int(accepted),
            'rejected': int(rejected)
        }
        self.update_records.append(record)
        return record

    def _sanitize_details(self, details: Dict[str, Any]) -> Dict[str, Any]:
        """Replace arrays by their shapes, truncate long strings"""
        sanitized = {}
        for key, value in details.items():
            if isinstance(value, np.ndarray):
                sanitized[key] = f"array{value.shape}"
            elif isinstance(value, str) and len(value) > 200:
                sanitized[key] = value[:200] + "... (truncated)"
            elif isinstance(value, (int, float, bool, str)) or value is None:
                sanitized[key] = value
            else:
                sanitized[key] = type(value).__name__
        return sanitized

    def get_performance_report(self) -> Dict[str, Any]:
        """Summary over all logged operations"""
        total_calls = sum(m['total_calls'] for m in self.performance_metrics.values())
        successful_calls = sum(m['successful_calls'] for m in self.performance_metrics.values())

        return {
            'summary': {
                'total_calls': total_calls,
                'successful_calls': successful_calls,
                'failed_calls': total_calls - successful_calls,
                'success_rate': (successful_calls / total_calls * 100) if total_calls > 0 else 0,
                'operations_used': len(self.performance_metrics),
                'updates_recorded': len(self.update_records)
            },
            'per_operation_metrics': self.performance_metrics,
            'recent_calls': self.call_history[-10:]
        }

    def get_operation_summary(self, operation: str) -> Dict[str, Any]:
        if operation not in self.performance_metrics:
            return {'error': f'No data for operation: {operation}'}
        calls = [c for c in self.call_history if c['operation'] == operation]
        return {
            'operation': operation,
            'metrics': self.performance_metrics[operation],
            'recent_calls': calls[-5:],
            'common_errors': self._get_common_errors(calls)
        }

    def _get_common_errors(self, calls: list) -> Dict[str, int]:
        error_counts: Dict[str, int] = {}
        for call in calls:
            if not call['success'] and call['error']:
                error_type = call['error'][:50]
                error_counts[error_type] = error_counts.get(error_type, 0) + 1
        return error_counts

    def reset(self) -> None:
        self.call_history = []
        self.performance_metrics = {}
        self.update_records = []


# Global logger instance
diagnostics_logger_instance = DiagnosticsLogger()


def log_operation(operation: str, component: str = "Unknown"):
    """
    Decorator timing a filter operation into the global diagnostics logger
    """
    def decorator(func: Callable) -> Callable:
        @wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.perf_counter()
            success = False
            error = None
            try:
                result = func(*args, **kwargs)
                success = True
                return result
            except Exception as e:
                error = str(e)
                raise
            finally:
                owner = args[0] if args else None
                name = getattr(owner, 'name', component) if owner is not None else component
                diagnostics_logger_instance.log_operation(
                    operation=operation,
                    component=name if isinstance(name, str) else component,
                    execution_time=time.perf_counter() - start_time,
                    success=success,
                    error=error,
                    details={'args_count': len(args), **{k: v for k, v in kwargs.items()}}
                )

        return wrapper
    return decorator
