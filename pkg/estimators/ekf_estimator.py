"""
Dense covariance EKF with the Joseph-form update, kept as the reference
"""

import logging
from typing import Any, Dict, Iterable, Optional

import numpy as np
import scipy.linalg

from core.errors import NotPositiveDefinite
from core.flops import FlopCounter
from core.srf_core import LinearizedMeasurement
from core.state import NAV_BLOCK, NAV_POSE, StateBlock, StateVector
from estimators.base_estimator import FilterEngine

logger = logging.getLogger(__name__)


class DenseEkfEngine(FilterEngine):
    """Full covariance P in the selected precision"""

    def __init__(self, precision: str = "double"):
        super().__init__("ekf", precision)
        self._vector: Optional[StateVector] = None
        self.P: Optional[np.ndarray] = None

    @property
    def vector(self) -> StateVector:
        return self._vector

    def initialize(self, vector: StateVector, U: np.ndarray) -> None:
        U = np.asarray(U, dtype=np.float64)
        self._vector = vector.copy()
        self.P = (U.T @ U).astype(self.dtype)

    def _symmetrize(self) -> None:
        self.P = 0.5 * (self.P + self.P.T)

    def propagate(self, phi: np.ndarray, w_sqrt: np.ndarray, nav_value: np.ndarray,
                  defer_qr: bool = True) -> None:
        k = phi.shape[0]
        phi = np.asarray(phi, dtype=self.dtype)
        w = np.asarray(w_sqrt, dtype=self.dtype)
        P = self.P.copy()
        P[:k, :] = phi @ self.P[:k, :]
        P[:, :k] = P[:, :k] @ phi.T
        P[:k, :k] += w.T @ w
        self.P = P
        self._symmetrize()
        self._vector = self._vector.replace_value(NAV_BLOCK, nav_value)

    def clone(self, clone_name: str, meta: Optional[Dict[str, Any]] = None) -> None:
        vec = self._vector
        position = vec.insertion_index("pose")
        c0 = sum(b.err_dim for b in vec.blocks[:position])
        src = vec.err_slice(NAV_BLOCK).start + np.arange(NAV_POSE.start, NAV_POSE.stop)
        n = vec.dim
        # Augmentation [I; J] with the clone rows inserted at c0
        T = np.zeros((n + 6, n), dtype=self.dtype)
        T[:c0, :c0] = np.eye(c0)
        T[c0 + np.arange(6), src] = 1.0
        T[c0 + 6:, c0:] = np.eye(n - c0)
        self.P = T @ self.P @ T.T
        block = StateBlock(clone_name, "pose", vec.block(NAV_BLOCK).value[0:7], dict(meta or {}))
        self._vector = vec.with_block(block, position)

    def transform_block(self, target: str, maps: Dict[str, np.ndarray], new_value: np.ndarray,
                        meta: Optional[Dict[str, Any]] = None) -> None:
        vec = self._vector
        tsl = vec.err_slice(target)
        T = np.eye(vec.dim, dtype=self.dtype)
        T[tsl, :] = 0.0
        for name, M in maps.items():
            T[tsl, vec.err_slice(name)] += M
        self.P = T @ self.P @ T.T
        self._symmetrize()
        self._vector = vec.replace_value(target, new_value, meta)

    def marginalize(self, victims: Iterable[str]) -> None:
        victims = list(victims)
        if not victims:
            return
        cols = self._vector.err_columns(victims)
        keep = np.setdiff1d(np.arange(self._vector.dim), cols)
        self.P = self.P[np.ix_(keep, keep)]
        self._vector = self._vector.without(victims)

    def append_feature(self, name: str, value: np.ndarray, J_x: np.ndarray, J_f: np.ndarray,
                       residual: Optional[np.ndarray] = None, meta: Optional[Dict[str, Any]] = None) -> None:
        n = self._vector.dim
        Jx = np.zeros((3, n))
        Jx[:, :J_x.shape[1]] = J_x
        Jf_inv = np.linalg.inv(np.asarray(J_f, dtype=np.float64))
        P = self.P.astype(np.float64)
        A = -Jf_inv @ Jx
        P_xf = P @ A.T
        P_ff = A @ P @ A.T + Jf_inv @ Jf_inv.T
        self.P = np.block([[P, P_xf], [P_xf.T, P_ff]]).astype(self.dtype)
        value = np.asarray(value, dtype=np.float64)
        if residual is not None:
            value = value + Jf_inv @ residual
        self._vector = self._vector.with_block(StateBlock(name, "anchored_feature", value, dict(meta or {})))

    def _innovation(self, meas: LinearizedMeasurement):
        H = meas.dense_jacobian(self._vector.dim).astype(self.dtype)
        R = np.diag(meas.noise_std ** 2).astype(self.dtype)
        PHt = self.P @ H.T
        S = H @ PHt + R
        return H, R, PHt, S

    def mahalanobis(self, meas: LinearizedMeasurement, counter: Optional[FlopCounter] = None) -> float:
        if meas.m == 0:
            return 0.0
        _, _, _, S = self._innovation(meas)
        r = meas.residual.astype(self.dtype)
        try:
            L = scipy.linalg.cholesky(S, lower=True)
        except np.linalg.LinAlgError as e:
            raise NotPositiveDefinite(f"Innovation matrix not positive definite: {e}") from e
        y = scipy.linalg.solve_triangular(L, r, lower=True)
        return float(np.dot(y.astype(np.float64), y.astype(np.float64)))

    def _update(self, meas: LinearizedMeasurement, counter: FlopCounter,
                diagnostics: Dict[str, Any]) -> None:
        H, R, PHt, S = self._innovation(meas)
        try:
            K = scipy.linalg.solve(S, PHt.T, assume_a="pos").T
        except np.linalg.LinAlgError as e:
            raise NotPositiveDefinite(f"Innovation matrix not positive definite: {e}") from e
        n = self._vector.dim
        IKH = np.eye(n, dtype=self.dtype) - K @ H
        self.P = IKH @ self.P @ IKH.T + K @ R @ K.T
        self._symmetrize()
        dx = K @ meas.residual.astype(self.dtype)
        self._vector = self._vector.boxplus(dx.astype(np.float64))
        diagnostics.update({"m": meas.m, "cond_S": float(np.linalg.cond(S.astype(np.float64)))})

    def covariance(self) -> np.ndarray:
        return self.P.astype(np.float64)

    def conditioning(self) -> Dict[str, float]:
        return {"cond_P": float(np.linalg.cond(self.P.astype(np.float64)))}
