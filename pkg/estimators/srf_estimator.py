"""
Square-root filter engine over an upper triangular covariance factor
"""

import logging
from typing import Any, Dict, Iterable, Optional

import numpy as np

from backends import get_backend
from core import srf_core
from core.flops import FlopCounter
from core.srf_core import LinearizedMeasurement, SqrtState
from core.state import NAV_BLOCK, StateVector
from estimators.base_estimator import FilterEngine
from utils.diagnostics_logger import log_operation

logger = logging.getLogger(__name__)


class SrfEngine(FilterEngine):
    """
    Square-root filter with a selectable update backend

    Propagation and cloning skip re-triangularization; the single QR happens
    inside ``marginalize``, which the loop calls before any update.
    """

    def __init__(self, backend: str = "llt", precision: str = "double"):
        super().__init__(backend, precision)
        self.backend = get_backend(backend)
        self.state: Optional[SqrtState] = None

    @property
    def vector(self) -> StateVector:
        return self.state.vector

    def initialize(self, vector: StateVector, U: np.ndarray) -> None:
        self.state = SqrtState(vector, np.triu(np.asarray(U, dtype=np.float64)).astype(self.dtype))

    @log_operation("propagate", "srf")
    def propagate(self, phi: np.ndarray, w_sqrt: np.ndarray, nav_value: np.ndarray,
                  defer_qr: bool = True) -> None:
        vector = self.state.vector.replace_value(NAV_BLOCK, nav_value)
        self.state = srf_core.propagate(self.state, phi, w_sqrt, new_estimate=vector, defer_qr=defer_qr)

    def clone(self, clone_name: str, meta: Optional[Dict[str, Any]] = None) -> None:
        self.state = srf_core.clone(self.state, clone_name, meta=meta)

    def transform_block(self, target: str, maps: Dict[str, np.ndarray], new_value: np.ndarray,
                        meta: Optional[Dict[str, Any]] = None) -> None:
        self.state = srf_core.transform_block(self.state, target, maps, new_value, meta=meta, defer_qr=True)

    @log_operation("marginalize", "srf")
    def marginalize(self, victims: Iterable[str]) -> None:
        self.state = srf_core.marginalize(self.state, victims)

    def mahalanobis(self, meas: LinearizedMeasurement, counter: Optional[FlopCounter] = None) -> float:
        return srf_core.mahalanobis(self.state, meas, counter)

    def append_feature(self, name: str, value: np.ndarray, J_x: np.ndarray, J_f: np.ndarray,
                       residual: Optional[np.ndarray] = None, meta: Optional[Dict[str, Any]] = None) -> None:
        self.state = srf_core.append_feature(self.state, name, value, J_x, J_f, residual=residual, meta=meta)

    @log_operation("update", "srf")
    def _update(self, meas: LinearizedMeasurement, counter: FlopCounter,
                diagnostics: Dict[str, Any]) -> None:
        if not self.state.is_triangular:
            self.state = srf_core.restore_triangular(self.state)
        self.state, _ = self.backend.update(self.state, meas, counter=counter, diagnostics=diagnostics)

    def covariance(self) -> np.ndarray:
        return self.state.covariance()
