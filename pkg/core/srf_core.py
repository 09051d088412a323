"""
Square-root filter engine.

The covariance is carried as an upper triangular factor U with U^T U = P over
the ordered error state. Propagation stacks the process noise under U Phi^T and
re-triangularizes by QR; the measurement update factors
C = I + U H^T R^-1 H U^T = F^T F with F lower triangular and sets U' = F^-T U.
Cloning duplicates factor columns and marginalization deletes them, running a
QR only on the trailing sub-block that lost its triangular shape.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, Optional, Tuple

import numpy as np
import scipy.linalg

from config import Config
from core.chi2 import chi2_quantile
from core.errors import DimensionMismatch, NotPositiveDefinite, StateLayoutError
from core.flops import (
    FlopCounter,
    count,
    gram_flops,
    mean_update_flops,
    trapezoid_solve_flops,
    triangular_product_flops,
)
from core.sqrt_kernels import (
    is_upper_triangular,
    precision_dtype,
    qr_triangularize,
    reverse_cholesky,
    solve_lower,
    solve_upper,
)
from core.state import NAV_BLOCK, NAV_POSE, StateBlock, StateVector

logger = logging.getLogger(__name__)

_factor_ids = itertools.count()


def _next_factor_id() -> int:
    return next(_factor_ids)


@dataclass
class SqrtState:
    """
    Estimate, block layout and square-root covariance factor

    ``U`` may temporarily hold more rows than columns (deferred QR) or lose
    its triangular shape from column ``dirty_from`` onward; ``marginalize``
    restores it. ``factor_id`` identifies the numeric content of U so that
    cached products can be reused.
    """
    vector: StateVector
    U: np.ndarray
    dirty_from: Optional[int] = None
    factor_id: int = field(default_factory=_next_factor_id)

    def __post_init__(self):
        if self.U.ndim != 2 or self.U.shape[1] != self.vector.dim:
            raise DimensionMismatch(f"Factor shape {self.U.shape} does not match state dimension {self.vector.dim}")
        if self.U.shape[0] < self.U.shape[1]:
            raise DimensionMismatch(f"Factor has fewer rows than columns: {self.U.shape}")
        if self.U.shape[0] > self.U.shape[1] and self.dirty_from is None:
            self.dirty_from = 0

    @classmethod
    def from_covariance(cls, vector: StateVector, P: np.ndarray, precision: str = "double") -> "SqrtState":
        dtype = precision_dtype(precision)
        U = scipy.linalg.cholesky(np.asarray(P, dtype=np.float64), lower=False)
        return cls(vector, np.triu(U).astype(dtype))

    @classmethod
    def from_std(cls, vector: StateVector, std: np.ndarray, precision: str = "double") -> "SqrtState":
        dtype = precision_dtype(precision)
        return cls(vector, np.diag(np.asarray(std, dtype=np.float64)).astype(dtype))

    @property
    def dim(self) -> int:
        return self.vector.dim

    @property
    def dtype(self) -> np.dtype:
        return self.U.dtype

    @property
    def is_triangular(self) -> bool:
        return self.dirty_from is None and self.U.shape[0] == self.U.shape[1]

    def covariance(self) -> np.ndarray:
        U = self.U.astype(np.float64)
        return U.T @ U

    def marginal_covariance(self, name: str) -> np.ndarray:
        cols = self.U[:, self.vector.err_slice(name)].astype(np.float64)
        return cols.T @ cols


@dataclass
class LinearizedMeasurement:
    """
    Residual, Jacobian over the error state and per-row noise

    ``columns`` records every structurally nonzero Jacobian column. The
    Jacobian may be narrower than the state when trailing blocks were
    appended after it was formed; missing columns are zero.
    """
    residual: np.ndarray
    jacobian: np.ndarray
    noise_std: np.ndarray
    columns: Optional[np.ndarray] = None
    label: str = ""
    _cross: Optional[Tuple[Any, np.ndarray]] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.residual = np.asarray(self.residual, dtype=np.float64).reshape(-1)
        self.jacobian = np.atleast_2d(np.asarray(self.jacobian, dtype=np.float64))
        m = self.residual.size
        if self.jacobian.shape[0] != m:
            if m == 0:
                self.jacobian = np.zeros((0, self.jacobian.shape[1]))
            else:
                raise DimensionMismatch(f"Jacobian rows {self.jacobian.shape[0]} != residual length {m}")
        self.noise_std = np.broadcast_to(np.asarray(self.noise_std, dtype=np.float64), (m,)).copy()
        if np.any(self.noise_std <= 0):
            raise ValueError("noise standard deviations must be positive")

        nonzero = np.flatnonzero(np.any(self.jacobian != 0, axis=0))
        if self.columns is None:
            self.columns = nonzero
        else:
            self.columns = np.unique(np.asarray(self.columns, dtype=int))
            if np.setdiff1d(nonzero, self.columns).size:
                raise ValueError(f"Recorded columns miss structurally nonzero columns in {self.label or 'measurement'}")

    @property
    def m(self) -> int:
        return self.residual.size

    @property
    def width(self) -> int:
        return self.jacobian.shape[1]

    @classmethod
    def empty(cls, n: int) -> "LinearizedMeasurement":
        return cls(np.zeros(0), np.zeros((0, n)), np.zeros(0))

    def whitened(self, dtype=np.float64) -> Tuple[np.ndarray, np.ndarray]:
        """Unit-noise residual and Jacobian restricted to the recorded columns"""
        rw = (self.residual / self.noise_std).astype(dtype)
        Hw = (self.jacobian[:, self.columns] / self.noise_std[:, None]).astype(dtype)
        return rw, Hw

    def dense_jacobian(self, n: int) -> np.ndarray:
        if self.width > n:
            raise DimensionMismatch(f"Jacobian width {self.width} exceeds state dimension {n}")
        H = np.zeros((self.m, n))
        H[:, :self.width] = self.jacobian
        return H


def _require_triangular(state: SqrtState) -> None:
    if not state.is_triangular:
        raise StateLayoutError("Operation requires a triangular factor; restore it with marginalize first")


def _check_columns(state: SqrtState, meas: LinearizedMeasurement) -> None:
    if meas.width > state.dim or (meas.columns.size and meas.columns[-1] >= state.dim):
        raise DimensionMismatch(f"Measurement width {meas.width} exceeds state dimension {state.dim}")


def whitened_cross(state: SqrtState, meas: LinearizedMeasurement,
                   counter: Optional[FlopCounter] = None) -> Tuple[int, np.ndarray]:
    """
    A = U[:k] H^T R^-1/2 over the touched columns, k = last touched column + 1

    The product is cached on the measurement and reused as long as the factor
    content is unchanged.
    """
    cols = meas.columns
    if cols.size == 0:
        return 0, np.zeros((0, meas.m), dtype=state.dtype)
    k = int(cols[-1]) + 1
    key = (state.factor_id, k, state.dtype.str)
    if meas._cross is not None and meas._cross[0] == key:
        return k, meas._cross[1]

    _, Hw = meas.whitened(state.dtype)
    A = state.U[:k][:, cols] @ Hw.T
    count(counter, "cross", triangular_product_flops(cols, meas.m))
    meas._cross = (key, A)
    return k, A


def apply_update_factor(state: SqrtState, meas: LinearizedMeasurement, k: int, F: np.ndarray,
                        counter: Optional[FlopCounter] = None) -> SqrtState:
    """
    Given C = F^T F over the first k rows, set U' = F^-T U and correct the mean

    Shared by the Cholesky and permuted-QR update forms.
    """
    U = state.U
    n = state.dim
    cols = meas.columns
    rw, Hw = meas.whitened(state.dtype)

    top = solve_upper(F.T, U[:k])
    count(counter, "solve", trapezoid_solve_flops(k, n))
    U_new = U.copy()
    U_new[:k] = np.triu(top)

    g = Hw.T @ rw
    w = U_new[:k][:, cols] @ g
    dx = U_new[:k].T @ w
    count(counter, "mean", mean_update_flops(meas.m, cols.size, k, n))

    return SqrtState(state.vector.boxplus(dx.astype(np.float64)), U_new)


def update_llt(state: SqrtState, meas: LinearizedMeasurement, counter: Optional[FlopCounter] = None,
               eps: Optional[float] = None, diagnostics: Optional[Dict[str, Any]] = None) -> SqrtState:
    """
    Cholesky-form square-root update

    Args:
        state (SqrtState): prior, factor must be triangular
        meas (LinearizedMeasurement): linearized measurement
        counter (FlopCounter, optional): flop accounting
        eps (float, optional): pivot tolerance override
        diagnostics (dict, optional): receives k, m and cond_C

    Returns:
        SqrtState: posterior

    Raises:
        NotPositiveDefinite: the update is aborted and the prior is left untouched
    """
    _require_triangular(state)
    _check_columns(state, meas)
    if meas.m == 0 or meas.columns.size == 0:
        if diagnostics is not None:
            diagnostics.update({"k": 0, "m": meas.m, "cond_C": 1.0})
        return state

    k, A = whitened_cross(state, meas, counter)
    C = np.eye(k, dtype=state.dtype) + A @ A.T
    count(counter, "gram", gram_flops(k, meas.m))
    if diagnostics is not None:
        diagnostics.update({"k": k, "m": meas.m, "cond_C": float(np.linalg.cond(C.astype(np.float64)))})

    try:
        F = reverse_cholesky(C, eps=eps, counter=counter)
    except NotPositiveDefinite as e:
        logger.error(f"Update aborted ({meas.label or 'measurement'}, m={meas.m}, k={k}): {e}")
        raise
    return apply_update_factor(state, meas, k, F, counter)


def propagate(state: SqrtState, phi: np.ndarray, w_sqrt: np.ndarray,
              new_estimate: Optional[StateVector] = None, defer_qr: bool = False,
              counter: Optional[FlopCounter] = None) -> SqrtState:
    """
    QR propagation U'^T U' = Phi P Phi^T + W

    ``phi`` acts on the leading block of the error state (the full state when
    square over its dimension); the rest is left unchanged. With ``defer_qr``
    the stacked factor is returned untriangularized and flagged dirty.
    """
    dtype = state.dtype
    n = state.dim
    phi = np.asarray(phi, dtype=dtype)
    w_sqrt = np.atleast_2d(np.asarray(w_sqrt, dtype=dtype))
    k = phi.shape[0]
    if phi.shape != (k, k) or k > n:
        raise DimensionMismatch(f"Transition of shape {phi.shape} for state dimension {n}")
    if w_sqrt.shape[1] != k:
        raise DimensionMismatch(f"Noise factor of shape {w_sqrt.shape} for transition of size {k}")
    vector = state.vector if new_estimate is None else new_estimate
    if vector.dim != n:
        raise DimensionMismatch("Propagated estimate changes the state dimension")

    U_phi = state.U.copy()
    U_phi[:, :k] = state.U[:, :k] @ phi.T
    W = np.zeros((w_sqrt.shape[0], n), dtype=dtype)
    W[:, :k] = w_sqrt
    stacked = np.vstack([U_phi, W])

    if defer_qr:
        return SqrtState(vector, stacked, dirty_from=0)
    return SqrtState(vector, qr_triangularize(stacked, counter, "propagate"))


def clone(state: SqrtState, clone_name: str, source: str = NAV_BLOCK,
          meta: Optional[Dict[str, Any]] = None) -> SqrtState:
    """
    Stochastic cloning of the pose of ``source`` into a new newest clone

    The duplicated factor columns go in front of the existing clones together
    with the same number of zero rows, which keeps a triangular factor
    triangular without any factorization.
    """
    vec = state.vector
    src = vec.block(source)
    if src.kind not in ("imu", "pose"):
        raise StateLayoutError(f"Block {source} carries no pose")

    position = vec.insertion_index("pose")
    c0 = sum(b.err_dim for b in vec.blocks[:position])
    src_start = vec.err_slice(source).start
    src_cols = np.arange(src_start + NAV_POSE.start, src_start + NAV_POSE.stop)

    U = state.U
    d = src_cols.size
    with_cols = np.hstack([U[:, :c0], U[:, src_cols], U[:, c0:]])
    U_new = np.vstack([with_cols[:c0], np.zeros((d, with_cols.shape[1]), dtype=U.dtype), with_cols[c0:]])

    block = StateBlock(clone_name, "pose", src.value[0:7], dict(meta or {}))
    new_vector = vec.with_block(block, position)

    dirty = state.dirty_from
    if dirty is not None and dirty >= c0:
        dirty += d
    return SqrtState(new_vector, U_new, dirty_from=dirty)


def marginalize(state: SqrtState, victims: Iterable[str],
                counter: Optional[FlopCounter] = None) -> SqrtState:
    """
    Remove blocks and restore a square upper triangular factor

    Trailing victims of a triangular factor need only column and row deletion;
    otherwise one QR runs on the sub-block from the first disturbed column.

    Raises:
        UnknownBlock: a victim is not part of the state
    """
    victims = list(victims)
    vec = state.vector
    for name in victims:
        vec.index(name)
    if not victims and state.is_triangular:
        return state

    n = state.dim
    victim_cols = vec.err_columns(victims)
    keep = np.setdiff1d(np.arange(n), victim_cols)
    n_new = keep.size
    U_keep = state.U[:, keep]
    trailing = np.array_equal(np.sort(victim_cols), np.arange(n_new, n))

    if state.is_triangular and trailing:
        U_new = np.ascontiguousarray(U_keep[:n_new])
        logger.debug(f"Marginalized trailing blocks {victims} without factorization")
    else:
        k = int(victim_cols.min()) if victim_cols.size else n_new
        if state.dirty_from is not None:
            k = min(k, state.dirty_from)
        k = min(k, n_new)
        U_new = np.zeros((n_new, n_new), dtype=state.dtype)
        U_new[:k] = U_keep[:k]
        U_new[k:, k:] = qr_triangularize(U_keep[k:, k:], counter, "marginalize")

    return SqrtState(vec.without(victims), U_new)


def restore_triangular(state: SqrtState, counter: Optional[FlopCounter] = None) -> SqrtState:
    return marginalize(state, [], counter)


def mahalanobis(state: SqrtState, meas: LinearizedMeasurement,
                counter: Optional[FlopCounter] = None) -> float:
    """
    r^T (H U^T U H^T + R)^-1 r using the cached U H^T over the touched rows

    Raises:
        NotPositiveDefinite: the innovation matrix cannot be factored
    """
    _require_triangular(state)
    _check_columns(state, meas)
    if meas.m == 0:
        return 0.0
    rw, _ = meas.whitened(state.dtype)
    _, A = whitened_cross(state, meas, counter)
    S = np.eye(meas.m, dtype=state.dtype) + A.T @ A
    try:
        L = scipy.linalg.cholesky(S, lower=True, check_finite=False)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefinite(f"Innovation matrix not positive definite: {e}") from e
    y = scipy.linalg.solve_triangular(L, rw, lower=True, check_finite=False)
    return float(np.dot(y.astype(np.float64), y.astype(np.float64)))


def gate(meas: LinearizedMeasurement, state: SqrtState, confidence: float = Config.CHI2_CONFIDENCE,
         inflation: float = Config.CHI2_INFLATION) -> bool:
    """Chi-square test of a measurement block against the current covariance"""
    if meas.m == 0:
        return True
    return mahalanobis(state, meas) <= inflation * chi2_quantile(meas.m, confidence)


def append_feature(state: SqrtState, name: str, value: np.ndarray, J_x: np.ndarray, J_f: np.ndarray,
                   residual: Optional[np.ndarray] = None, kind: str = "anchored_feature",
                   meta: Optional[Dict[str, Any]] = None) -> SqrtState:
    """
    Append a feature determined by the unit-noise system J_x dx + J_f df = residual

    With J_f lower triangular the augmented factor stays upper triangular:
    U' = [[U, -U J_x^T J_f^-T], [0, J_f^-T]].
    """
    if not state.is_triangular:
        state = restore_triangular(state)
    dtype = state.dtype
    n = state.dim
    J_f = np.asarray(J_f, dtype=dtype)
    J_x_full = np.zeros((3, n), dtype=dtype)
    J_x = np.asarray(J_x, dtype=dtype)
    J_x_full[:, :J_x.shape[1]] = J_x

    B = state.U @ J_x_full.T
    top = -solve_lower(J_f, B.T).T
    J_f_inv_T = np.triu(solve_upper(J_f.T, np.eye(3, dtype=dtype)))

    U_new = np.zeros((n + 3, n + 3), dtype=dtype)
    U_new[:n, :n] = state.U
    U_new[:n, n:] = top
    U_new[n:, n:] = J_f_inv_T

    value = np.asarray(value, dtype=np.float64)
    if residual is not None:
        value = value + solve_lower(J_f.astype(np.float64), np.asarray(residual, dtype=np.float64))
    new_vector = state.vector.with_block(StateBlock(name, kind, value, dict(meta or {})))
    # U[:n, :n] is untouched, so products cached against the old factor stay valid
    return SqrtState(new_vector, U_new, factor_id=state.factor_id)


def transform_block(state: SqrtState, target: str, maps: Dict[str, np.ndarray], new_value: np.ndarray,
                    meta: Optional[Dict[str, Any]] = None, defer_qr: bool = False,
                    counter: Optional[FlopCounter] = None) -> SqrtState:
    """
    Replace the error of ``target`` by the linear map sum_b M_b dx_b

    Only the target's factor columns change; triangularity is lost from the
    target's first column and restored by QR unless deferred.
    """
    vec = state.vector
    tsl = vec.err_slice(target)
    d = tsl.stop - tsl.start
    new_cols = np.zeros((state.U.shape[0], d), dtype=state.dtype)
    for name, M in maps.items():
        M = np.asarray(M, dtype=state.dtype)
        sl = vec.err_slice(name)
        if M.shape != (d, sl.stop - sl.start):
            raise DimensionMismatch(f"Map for {name} has shape {M.shape}")
        new_cols += state.U[:, sl] @ M.T

    U_new = state.U.copy()
    U_new[:, tsl] = new_cols
    dirty = tsl.start if state.dirty_from is None else min(state.dirty_from, tsl.start)
    result = SqrtState(vec.replace_value(target, new_value, meta), U_new, dirty_from=dirty)
    return result if defer_qr else restore_triangular(result, counter)
