"""
Carlson's triangular sequential update

Works on the exchange-permuted factor S = J U^T J, which is upper triangular
with J P J = S S^T, so the column sweep keeps S triangular without any QR.
"""

import logging
from typing import Any, Dict

import numpy as np

from backends.base_backend import UpdateBackend
from core.flops import FlopCounter, count, triangular_product_flops
from core.sqrt_kernels import enforce_upper
from core.srf_core import LinearizedMeasurement, SqrtState

logger = logging.getLogger(__name__)


def carlson_row(S: np.ndarray, h: np.ndarray, counter: FlopCounter = None):
    """
    One unit-variance scalar update of an upper triangular S with P = S S^T

    Args:
        S: upper triangular factor, modified in place
        h: measurement row in the coordinates of S

    Returns:
        tuple: (P h^T, alpha) with alpha = h P h^T + 1
    """
    n = S.shape[0]
    f = S.T @ h
    count(counter, "carlson", triangular_product_flops(range(n), 1))
    K = np.zeros(n, dtype=S.dtype)
    alpha = 1.0
    for j in range(n):
        alpha_prev = alpha
        alpha = alpha_prev + f[j] * f[j]
        scale = np.sqrt(alpha_prev / alpha)
        shear = f[j] / np.sqrt(alpha_prev * alpha)
        col = S[:j + 1, j].copy()
        S[:j + 1, j] = scale * col - shear * K[:j + 1]
        K[:j + 1] += f[j] * col
        # K[j] is still zero, so the shear costs 2 j; scaling and the gain cost 3 (j + 1)
        count(counter, "carlson", (j + 1) + 2.0 * j + 2.0 * (j + 1) + 7.0)
    return K, alpha


class CarlsonBackend(UpdateBackend):
    """Sequential rows, factor stays triangular throughout"""

    def __init__(self):
        super().__init__("carlson", sequential=True)

    def _apply(self, state: SqrtState, meas: LinearizedMeasurement,
               counter: FlopCounter, diagnostics: Dict[str, Any]) -> SqrtState:
        n = state.dim
        rw, Hw = self._dense_whitened(state, meas)
        S = np.ascontiguousarray(state.U.T[::-1, ::-1])
        dx_rev = np.zeros(n, dtype=state.dtype)

        for h, r in zip(Hw[:, ::-1], rw):
            nu = r - h @ dx_rev
            K, alpha = carlson_row(S, h, counter)
            dx_rev += K * (nu / alpha)

        U_new = enforce_upper(np.ascontiguousarray(S.T[::-1, ::-1]))
        return SqrtState(state.vector.boxplus(dx_rev[::-1].astype(np.float64)), U_new)
