"""
Base FilterEngine class that all estimator forms inherit from
"""

import logging
from abc import ABC, abstractmethod
from typing import Any, Dict, Iterable, Optional

import numpy as np

from config import Config
from core.chi2 import chi2_quantile
from core.flops import FlopCounter
from core.sqrt_kernels import precision_dtype
from core.srf_core import LinearizedMeasurement
from core.state import NAV_BLOCK, StateVector

logger = logging.getLogger(__name__)


class FilterEngine(ABC):
    """
    Abstract base class for the covariance representations driven by the
    sliding-window loop

    Every engine exposes the same state-level operations so the loop, the
    Monte Carlo harness and the tests can swap the square-root filter for
    the dense and information-form references.
    """

    def __init__(self, name: str, precision: str = "double"):
        """
        Initialize the engine

        Args:
            name (str): estimator identifier used in reports
            precision (str): "single" or "double" for the covariance representation
        """
        self.name = name
        self.precision = precision
        self.dtype = precision_dtype(precision)
        self.failed_updates = 0

    @property
    @abstractmethod
    def vector(self) -> StateVector:
        """Current estimate and block layout"""
        pass

    @abstractmethod
    def initialize(self, vector: StateVector, U: np.ndarray) -> None:
        """
        Set the estimate and its covariance from an upper triangular factor

        Args:
            vector (StateVector): initial estimate
            U (np.ndarray): factor with U^T U = P
        """
        pass

    @abstractmethod
    def propagate(self, phi: np.ndarray, w_sqrt: np.ndarray, nav_value: np.ndarray,
                  defer_qr: bool = True) -> None:
        pass

    @abstractmethod
    def clone(self, clone_name: str, meta: Optional[Dict[str, Any]] = None) -> None:
        pass

    @abstractmethod
    def transform_block(self, target: str, maps: Dict[str, np.ndarray], new_value: np.ndarray,
                        meta: Optional[Dict[str, Any]] = None) -> None:
        pass

    @abstractmethod
    def marginalize(self, victims: Iterable[str]) -> None:
        """Remove blocks; also restores any deferred factorization"""
        pass

    @abstractmethod
    def mahalanobis(self, meas: LinearizedMeasurement, counter: Optional[FlopCounter] = None) -> float:
        pass

    @abstractmethod
    def append_feature(self, name: str, value: np.ndarray, J_x: np.ndarray, J_f: np.ndarray,
                       residual: Optional[np.ndarray] = None, meta: Optional[Dict[str, Any]] = None) -> None:
        pass

    @abstractmethod
    def _update(self, meas: LinearizedMeasurement, counter: FlopCounter,
                diagnostics: Dict[str, Any]) -> None:
        pass

    @abstractmethod
    def covariance(self) -> np.ndarray:
        """Dense covariance over the error state in double precision"""
        pass

    def conditioning(self) -> Dict[str, float]:
        return {}

    def gate(self, meas: LinearizedMeasurement, confidence: float = Config.CHI2_CONFIDENCE,
             inflation: float = Config.CHI2_INFLATION, counter: Optional[FlopCounter] = None) -> bool:
        """Chi-square test of one measurement block"""
        if meas.m == 0:
            return True
        return self.mahalanobis(meas, counter) <= inflation * chi2_quantile(meas.m, confidence)

    def update(self, meas: LinearizedMeasurement, counter: Optional[FlopCounter] = None,
               diagnostics: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """
        Apply one stacked measurement

        Returns:
            dict: {"success": bool, "flops": float, ...diagnostics, "error": str on failure}
        """
        counter = FlopCounter() if counter is None else counter
        diagnostics = {} if diagnostics is None else diagnostics
        try:
            if meas.m > 0:
                self._update(meas, counter, diagnostics)
            return {"success": True, "flops": counter.total, **diagnostics}
        except Exception as e:
            self.failed_updates += 1
            logger.error(f"Update failed in {self.name} ({self.precision}): {str(e)}")
            return {"success": False, "error": str(e), "flops": counter.total, **diagnostics}

    def marginal_covariance(self, names: Iterable[str]) -> np.ndarray:
        cols = self.vector.err_columns(list(names))
        P = self.covariance()
        return P[np.ix_(cols, cols)]

    def nav_covariance(self) -> np.ndarray:
        return self.marginal_covariance([NAV_BLOCK])

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.name!r}, precision={self.precision!r})"
