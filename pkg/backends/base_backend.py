"""
Base UpdateBackend class that all square-root update forms inherit from
"""

import logging
from abc import ABC, abstractmethod
from typing import Any, Dict, Optional, Tuple

import numpy as np

from core.errors import DimensionMismatch, StateLayoutError
from core.flops import FlopCounter
from core.srf_core import LinearizedMeasurement, SqrtState, whitened_cross

logger = logging.getLogger(__name__)


class UpdateBackend(ABC):
    """
    Abstract base class for square-root measurement update forms

    All backends accept the same prior and measurement and return the same
    posterior up to rounding; they differ in cost and in how the factor is
    rebuilt.
    """

    def __init__(self, name: str, sequential: bool = False):
        """
        Initialize the backend

        Args:
            name (str): backend identifier (llt, pqr, potter, carlson, kaminski)
            sequential (bool): whether measurement rows are processed one at a time
        """
        self.name = name
        self.sequential = sequential

    @abstractmethod
    def _apply(self, state: SqrtState, meas: LinearizedMeasurement,
               counter: FlopCounter, diagnostics: Dict[str, Any]) -> SqrtState:
        """
        Compute the posterior for a non-empty measurement

        Returns:
            SqrtState: posterior with a square upper triangular factor
        """
        pass

    def update(self, state: SqrtState, meas: LinearizedMeasurement,
               counter: Optional[FlopCounter] = None,
               diagnostics: Optional[Dict[str, Any]] = None) -> Tuple[SqrtState, FlopCounter]:
        """
        Apply one stacked measurement

        Args:
            state (SqrtState): prior with a triangular factor
            meas (LinearizedMeasurement): linearized measurement
            counter (FlopCounter, optional): accumulator, a fresh one is created otherwise
            diagnostics (dict, optional): receives k, m and cond_C

        Returns:
            tuple: posterior state and the flop counter
        """
        counter = FlopCounter() if counter is None else counter
        diagnostics = {} if diagnostics is None else diagnostics
        if not state.is_triangular:
            raise StateLayoutError(f"{self.name} update requires a triangular factor")
        if meas.width > state.dim:
            raise DimensionMismatch(f"Measurement width {meas.width} exceeds state dimension {state.dim}")

        if meas.m == 0 or meas.columns.size == 0:
            diagnostics.update({"k": 0, "m": meas.m, "cond_C": 1.0})
            return state, counter

        posterior = self._apply(state, meas, counter, diagnostics)
        if "cond_C" not in diagnostics:
            diagnostics.update(self._telemetry(state, meas))
        return posterior, counter

    def _telemetry(self, state: SqrtState, meas: LinearizedMeasurement) -> Dict[str, Any]:
        """cond(C) for backends that never form C, computed outside the flop count"""
        k, A = whitened_cross(state, meas)
        C = np.eye(k) + A.astype(np.float64) @ A.astype(np.float64).T
        return {"k": k, "m": meas.m, "cond_C": float(np.linalg.cond(C))}

    def _dense_whitened(self, state: SqrtState, meas: LinearizedMeasurement) -> Tuple[np.ndarray, np.ndarray]:
        """Unit-noise residual and full-width Jacobian in the factor's precision"""
        rw = (meas.residual / meas.noise_std).astype(state.dtype)
        Hw = (meas.dense_jacobian(state.dim) / meas.noise_std[:, None]).astype(state.dtype)
        return rw, Hw

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.name!r})"
