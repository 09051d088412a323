"""
Square-root information filter used as the information-form reference.

The factor R satisfies R^T R = P^-1 over the error state. A freshly cloned
pose is held as an alias of the navigation pose until the next propagation,
where the old pose becomes the clone variable instead of being
marginalized; this avoids the singular information of an exact duplicate.
"""

import logging
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
import scipy.linalg

from core.errors import NotPositiveDefinite, StateLayoutError
from core.flops import FlopCounter
from core.sqrt_kernels import qr_triangularize, solve_upper
from core.srf_core import LinearizedMeasurement
from core.state import NAV_BLOCK, NAV_POSE, StateBlock, StateVector
from estimators.base_estimator import FilterEngine

logger = logging.getLogger(__name__)


class SrifEngine(FilterEngine):
    """Information-form square-root filter with stacked-QR updates"""

    def __init__(self, precision: str = "double"):
        super().__init__("srif", precision)
        self._vector: Optional[StateVector] = None
        self.R: Optional[np.ndarray] = None
        self.aliases: List[str] = []

    @property
    def vector(self) -> StateVector:
        return self._vector

    # Layout helpers

    def _factor_columns(self) -> Dict[str, np.ndarray]:
        """Factor column indices of every block, aliases mapped onto the nav pose"""
        cols, offset = {}, 0
        for block in self._vector.blocks:
            if block.name in self.aliases:
                continue
            cols[block.name] = np.arange(offset, offset + block.err_dim)
            offset += block.err_dim
        nav = cols[NAV_BLOCK]
        for name in self.aliases:
            cols[name] = nav[NAV_POSE]
        return cols

    def _embedding(self) -> np.ndarray:
        """E with dx_vector = E dx_factor"""
        cols = self._factor_columns()
        n_fac = self.R.shape[0]
        E = np.zeros((self._vector.dim, n_fac))
        for name, fac in cols.items():
            sl = self._vector.err_slice(name)
            E[np.arange(sl.start, sl.stop), fac] = 1.0
        return E

    def initialize(self, vector: StateVector, U: np.ndarray) -> None:
        U = np.asarray(U, dtype=np.float64)
        V = scipy.linalg.solve_triangular(U, np.eye(U.shape[0]), lower=False, trans=1)
        self._vector = vector.copy()
        self.aliases = []
        self.R = qr_triangularize(V).astype(self.dtype)

    def propagate(self, phi: np.ndarray, w_sqrt: np.ndarray, nav_value: np.ndarray,
                  defer_qr: bool = True) -> None:
        k = phi.shape[0]
        n_fac = self.R.shape[0]
        dtype = self.dtype
        w = np.atleast_2d(np.asarray(w_sqrt, dtype=np.float64))
        if w.shape[0] != k:
            w = qr_triangularize(w)
        R_w = scipy.linalg.solve(w.T, np.eye(k)).astype(dtype)

        # Variables: [new nav | old nav | remaining factor columns]
        top = np.hstack([R_w, -R_w @ np.asarray(phi, dtype=dtype), np.zeros((k, n_fac - k), dtype=dtype)])
        bottom = np.hstack([np.zeros((n_fac, k), dtype=dtype), self.R])
        stacked = np.vstack([top, bottom])

        old_nav = k + np.arange(k)
        kept_pose = old_nav[NAV_POSE] if self.aliases else np.zeros(0, dtype=int)
        eliminate = np.setdiff1d(old_nav, kept_pose)

        cols = self._factor_columns()
        order: List[int] = []
        for block in self._vector.blocks:
            if block.name == NAV_BLOCK:
                order.extend(range(k))
            elif block.name in self.aliases:
                order.extend(kept_pose)
            else:
                order.extend(k + cols[block.name])
        R_full = qr_triangularize(stacked[:, np.concatenate([eliminate, order]).astype(int)])
        e = eliminate.size
        self.R = np.ascontiguousarray(R_full[e:, e:])
        self.aliases = []
        self._vector = self._vector.replace_value(NAV_BLOCK, nav_value)

    def clone(self, clone_name: str, meta: Optional[Dict[str, Any]] = None) -> None:
        if self.aliases:
            raise StateLayoutError("Only one clone may be taken between two propagations")
        vec = self._vector
        block = StateBlock(clone_name, "pose", vec.block(NAV_BLOCK).value[0:7], dict(meta or {}))
        self._vector = vec.with_block(block, vec.insertion_index("pose"))
        self.aliases.append(clone_name)

    def transform_block(self, target: str, maps: Dict[str, np.ndarray], new_value: np.ndarray,
                        meta: Optional[Dict[str, Any]] = None) -> None:
        if target in self.aliases:
            raise StateLayoutError(f"Cannot transform the aliased clone {target}")
        vec = self._vector
        tsl = vec.err_slice(target)
        d = tsl.stop - tsl.start
        T = np.zeros((d, vec.dim))
        for name, M in maps.items():
            T[:, vec.err_slice(name)] += M
        T_fac = T @ self._embedding()
        t = self._factor_columns()[target]
        M_f = T_fac[:, t]
        M_o = T_fac.copy()
        M_o[:, t] = 0.0

        # Substitute f_old = M_f^-1 (f_new - M_o x_other)
        R = self.R.astype(np.float64)
        Rt_inv = R[:, t] @ np.linalg.inv(M_f)
        R_new = R - Rt_inv @ M_o
        R_new[:, t] = Rt_inv
        self.R = qr_triangularize(R_new.astype(self.dtype))
        self._vector = vec.replace_value(target, new_value, meta)

    def marginalize(self, victims: Iterable[str]) -> None:
        victims = list(victims)
        for name in victims:
            self._vector.index(name)
        real = [v for v in victims if v not in self.aliases]
        if real:
            cols = self._factor_columns()
            victim_cols = np.concatenate([cols[v] for v in real])
            keep = np.setdiff1d(np.arange(self.R.shape[0]), victim_cols)
            R_full = qr_triangularize(self.R[:, np.concatenate([victim_cols, keep])])
            v = victim_cols.size
            self.R = np.ascontiguousarray(R_full[v:, v:])
        self.aliases = [a for a in self.aliases if a not in victims]
        self._vector = self._vector.without(victims)

    def _whitened_factor_jacobian(self, meas: LinearizedMeasurement):
        rw = (meas.residual / meas.noise_std).astype(self.dtype)
        Hw = meas.dense_jacobian(self._vector.dim) / meas.noise_std[:, None]
        return rw, (Hw @ self._embedding()).astype(self.dtype)

    def mahalanobis(self, meas: LinearizedMeasurement, counter: Optional[FlopCounter] = None) -> float:
        if meas.m == 0:
            return 0.0
        rw, H = self._whitened_factor_jacobian(meas)
        B = scipy.linalg.solve_triangular(self.R, H.T, lower=False, trans=1)
        S = np.eye(meas.m, dtype=self.dtype) + B.T @ B
        try:
            L = scipy.linalg.cholesky(S, lower=True)
        except np.linalg.LinAlgError as e:
            raise NotPositiveDefinite(f"Innovation matrix not positive definite: {e}") from e
        y = scipy.linalg.solve_triangular(L, rw, lower=True)
        return float(np.dot(y.astype(np.float64), y.astype(np.float64)))

    def append_feature(self, name: str, value: np.ndarray, J_x: np.ndarray, J_f: np.ndarray,
                       residual: Optional[np.ndarray] = None, meta: Optional[Dict[str, Any]] = None) -> None:
        n_vec = self._vector.dim
        n_fac = self.R.shape[0]
        Jx = np.zeros((3, n_vec))
        Jx[:, :J_x.shape[1]] = J_x
        Jx_fac = (Jx @ self._embedding()).astype(self.dtype)
        stacked = np.block([
            [self.R, np.zeros((n_fac, 3), dtype=self.dtype)],
            [Jx_fac, np.asarray(J_f, dtype=self.dtype)],
        ])
        self.R = qr_triangularize(stacked)
        value = np.asarray(value, dtype=np.float64)
        if residual is not None:
            value = value + np.linalg.solve(np.asarray(J_f, dtype=np.float64), residual)
        self._vector = self._vector.with_block(StateBlock(name, "anchored_feature", value, dict(meta or {})))

    def _update(self, meas: LinearizedMeasurement, counter: FlopCounter,
                diagnostics: Dict[str, Any]) -> None:
        rw, H = self._whitened_factor_jacobian(meas)
        n_fac = self.R.shape[0]
        stacked = np.block([
            [self.R, np.zeros((n_fac, 1), dtype=self.dtype)],
            [H, rw[:, None]],
        ])
        R_full = qr_triangularize(stacked)
        R_new = R_full[:n_fac, :n_fac]
        z = R_full[:n_fac, n_fac]
        dx_fac = solve_upper(R_new, z)
        self.R = np.ascontiguousarray(R_new)
        dx = self._embedding() @ dx_fac.astype(np.float64)
        self._vector = self._vector.boxplus(dx)
        diagnostics.update({"m": meas.m, "cond_R": float(np.linalg.cond(R_new.astype(np.float64)))})

    def covariance(self) -> np.ndarray:
        R = self.R.astype(np.float64)
        R_inv = scipy.linalg.solve_triangular(R, np.eye(R.shape[0]), lower=False)
        E = self._embedding()
        return E @ (R_inv @ R_inv.T) @ E.T

    def conditioning(self) -> Dict[str, float]:
        return {"cond_R": float(np.linalg.cond(self.R.astype(np.float64)))}
