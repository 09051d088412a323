"""
Precision-generic dense triangular kernels.

Every factor returned here is written with exact zeros outside its triangle
and a non-negative diagonal, so results are comparable across backends and
precision modes. Kernels are pure functions; the optional ``counter`` records
analytic flop counts.
"""

import logging
from typing import Optional, Tuple, Union

import numpy as np
import scipy.linalg

from config import Config
from core.errors import DimensionMismatch, NotPositiveDefinite, RankDeficient, SingularFactor
from core.flops import (
    FlopCounter,
    cholesky_flops,
    count,
    householder_qr_flops,
    triangular_solve_flops,
)

logger = logging.getLogger(__name__)

PrecisionLike = Union[str, np.dtype, type]


def precision_dtype(mode: PrecisionLike) -> np.dtype:
    """
    Map a precision selector to a numpy floating point type

    Args:
        mode: "single", "double" or a numpy float dtype

    Returns:
        np.dtype: float32 or float64
    """
    if isinstance(mode, str):
        if mode == "single":
            return np.dtype(np.float32)
        if mode == "double":
            return np.dtype(np.float64)
        raise ValueError(f"Unknown precision mode: {mode}")
    dtype = np.dtype(mode)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"Unsupported dtype: {dtype}")
    return dtype


def precision_name(dtype: PrecisionLike) -> str:
    return "single" if precision_dtype(dtype) == np.float32 else "double"


def scaled_tolerance(dtype: np.dtype, scale: float, eps: Optional[float] = None) -> float:
    """Precision-dependent tolerance scaled by the magnitude of the input"""
    base = Config.pivot_eps(dtype) if eps is None else eps
    return base * max(float(scale), 1.0)


def _as_float(a, dtype=None) -> np.ndarray:
    arr = np.asarray(a)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype not in (np.float32, np.float64):
        return arr.astype(np.float64)
    return arr


def _reversed(a: np.ndarray) -> np.ndarray:
    """Row and column reversal, J a J with J the exchange matrix"""
    return np.ascontiguousarray(a[::-1, ::-1])


def enforce_upper(R: np.ndarray) -> np.ndarray:
    """Zero the strict lower triangle and flip rows to a non-negative diagonal"""
    R = np.triu(R)
    k = min(R.shape)
    signs = np.ones(R.shape[0], dtype=R.dtype)
    signs[:k] = np.where(np.diagonal(R)[:k] < 0, -1, 1)
    return R * signs[:, None]


def is_upper_triangular(U: np.ndarray) -> bool:
    return U.ndim == 2 and U.shape[0] == U.shape[1] and not np.any(np.tril(U, -1))


def qr_triangularize(stacked: np.ndarray, counter: Optional[FlopCounter] = None,
                     bucket: str = "qr") -> np.ndarray:
    """
    Upper triangular factor of a tall stack, R^T R = stacked^T stacked

    Args:
        stacked: rows x cols array with rows >= cols
        counter: optional flop counter
        bucket: counter bucket name

    Returns:
        np.ndarray: cols x cols upper triangular factor with non-negative diagonal
    """
    A = _as_float(stacked)
    if A.ndim != 2:
        raise DimensionMismatch(f"qr_triangularize expects a matrix, got shape {A.shape}")
    rows, cols = A.shape
    if rows < cols:
        raise DimensionMismatch(f"qr_triangularize needs rows >= cols, got {rows}x{cols}")
    if cols == 0:
        return np.zeros((0, 0), dtype=A.dtype)

    R = scipy.linalg.qr(A, mode="r", check_finite=False)[0][:cols, :cols]
    count(counter, bucket, householder_qr_flops(rows, cols))
    return np.ascontiguousarray(enforce_upper(R).astype(A.dtype, copy=False))


def reverse_cholesky(C: np.ndarray, eps: Optional[float] = None,
                     counter: Optional[FlopCounter] = None) -> np.ndarray:
    """
    Lower triangular F with C = F^T F

    The exchange-permuted matrix J C J is factored by a standard lower
    Cholesky L L^T and F = J L^T J.

    Args:
        C: symmetric positive-definite matrix
        eps: relative pivot tolerance, defaults to the precision mode's

    Returns:
        np.ndarray: lower triangular factor with strictly positive diagonal

    Raises:
        NotPositiveDefinite: a pivot falls below tolerance
    """
    C = _as_float(C)
    n = C.shape[0]
    if C.shape != (n, n):
        raise DimensionMismatch(f"reverse_cholesky expects a square matrix, got {C.shape}")
    if n == 0:
        return np.zeros((0, 0), dtype=C.dtype)

    try:
        L = scipy.linalg.cholesky(_reversed(C), lower=True, check_finite=False)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefinite(f"Cholesky failed: {e}") from e
    count(counter, "cholesky", cholesky_flops(n))

    F = np.tril(_reversed(L.T))
    tol = scaled_tolerance(C.dtype, np.max(np.abs(np.diagonal(C))), eps)
    pivots = np.diagonal(F) ** 2
    if np.any(pivots < tol):
        raise NotPositiveDefinite(f"pivot {pivots.min():.3e} below tolerance {tol:.3e}")
    return np.ascontiguousarray(F)


def permuted_qr_lower(H: np.ndarray, eps: Optional[float] = None,
                      counter: Optional[FlopCounter] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Split a tall Jacobian into its left nullspace and a lower triangular range part

    Returns Q1, Q2, J with [Q1 Q2]^T H = [0; J] and J lower triangular with a
    positive diagonal.

    Raises:
        RankDeficient: a diagonal entry of J is below tolerance
    """
    H = _as_float(H)
    rows, cols = H.shape
    if rows < cols:
        raise DimensionMismatch(f"permuted_qr_lower needs rows >= cols, got {rows}x{cols}")

    Q, R = scipy.linalg.qr(_reversed(H), mode="full", check_finite=False)
    count(counter, "pqr", householder_qr_flops(rows, cols))

    J = np.tril(_reversed(R[:cols, :cols]))
    Qt = _reversed(Q)
    Q1 = np.ascontiguousarray(Qt[:, :rows - cols])
    Q2 = np.ascontiguousarray(Qt[:, rows - cols:])

    signs = np.where(np.diagonal(J) < 0, -1, 1).astype(H.dtype)
    J = J * signs[:, None]
    Q2 = Q2 * signs[None, :]

    tol = scaled_tolerance(H.dtype, np.linalg.norm(H), eps)
    if np.any(np.abs(np.diagonal(J)) < tol):
        raise RankDeficient(f"|J_ii| min {np.abs(np.diagonal(J)).min():.3e} below tolerance {tol:.3e}")
    return Q1.astype(H.dtype, copy=False), Q2.astype(H.dtype, copy=False), J.astype(H.dtype, copy=False)


def _check_diagonal(T: np.ndarray, eps: Optional[float]) -> None:
    diag = np.abs(np.diagonal(T))
    scale = np.max(np.abs(T)) if T.size else 1.0
    tol = scaled_tolerance(T.dtype, scale, eps)
    if diag.size and diag.min() < tol:
        raise SingularFactor(f"diagonal entry {diag.min():.3e} below tolerance {tol:.3e}")


def solve_upper(U: np.ndarray, B: np.ndarray, trans: bool = False, eps: Optional[float] = None,
                counter: Optional[FlopCounter] = None, rhs_triangular: bool = False) -> np.ndarray:
    """
    Back substitution U X = B (or U^T X = B when ``trans``)

    Raises:
        SingularFactor: a diagonal entry of U is below tolerance
    """
    U = _as_float(U)
    B = _as_float(B, U.dtype)
    _check_diagonal(U, eps)
    X = scipy.linalg.solve_triangular(U, B, lower=False, trans=1 if trans else 0, check_finite=False)
    rhs_cols = 1 if B.ndim == 1 else B.shape[1]
    count(counter, "solve", triangular_solve_flops(U.shape[0], rhs_cols, rhs_triangular))
    return X.astype(U.dtype, copy=False)


def solve_lower(L: np.ndarray, B: np.ndarray, trans: bool = False, eps: Optional[float] = None,
                counter: Optional[FlopCounter] = None) -> np.ndarray:
    """Forward substitution L X = B (or L^T X = B when ``trans``)"""
    L = _as_float(L)
    B = _as_float(B, L.dtype)
    _check_diagonal(L, eps)
    X = scipy.linalg.solve_triangular(L, B, lower=True, trans=1 if trans else 0, check_finite=False)
    rhs_cols = 1 if B.ndim == 1 else B.shape[1]
    count(counter, "solve", triangular_solve_flops(L.shape[0], rhs_cols))
    return X.astype(L.dtype, copy=False)


def eig3_symmetric(M: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Eigen-decomposition of a symmetric 3x3 matrix

    Returns:
        tuple: ascending eigenvalues (3,) and unit eigenvectors as columns (3, 3),
        each vector signed so its largest-magnitude component is positive
    """
    M = _as_float(M)
    if M.shape != (3, 3):
        raise DimensionMismatch(f"eig3_symmetric expects 3x3, got {M.shape}")
    values, vectors = np.linalg.eigh(0.5 * (M + M.T))
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(3)])
    signs[signs == 0] = 1
    return values, vectors * signs[None, :]
