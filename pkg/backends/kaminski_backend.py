"""
Array-form square-root update by one QR of the whitened pre-array

    [[I_m,    0],        [[X, Y ],
     [U H^T,  U]]   ->    [0, U']]

with X^T X = I + H P H^T, X^T Y = H P and U'^T U' = P - Y^T Y.
"""

import logging
from typing import Any, Dict

import numpy as np

from backends.base_backend import UpdateBackend
from core.flops import FlopCounter, count, householder_qr_flops, triangular_product_flops
from core.sqrt_kernels import enforce_upper, qr_triangularize, solve_upper
from core.srf_core import LinearizedMeasurement, SqrtState

logger = logging.getLogger(__name__)


def kaminski_qr_flops(m: int, n: int) -> float:
    """Householder sweep exploiting the identity block, then the dense n x n tail"""
    sweep = 4.0 * (n + 1) * (m * (m + n) - m * (m - 1) / 2.0)
    return sweep + householder_qr_flops(n, n)


class KaminskiBackend(UpdateBackend):
    """Whitened stacked-QR update over all rows at once"""

    def __init__(self):
        super().__init__("kaminski")

    def _apply(self, state: SqrtState, meas: LinearizedMeasurement,
               counter: FlopCounter, diagnostics: Dict[str, Any]) -> SqrtState:
        n, m = state.dim, meas.m
        dtype = state.dtype
        rw, Hw = self._dense_whitened(state, meas)

        A = state.U @ Hw.T
        count(counter, "cross", triangular_product_flops(range(n), m))
        pre = np.zeros((m + n, m + n), dtype=dtype)
        pre[:m, :m] = np.eye(m, dtype=dtype)
        pre[m:, :m] = A
        pre[m:, m:] = state.U

        post = enforce_upper(qr_triangularize(pre))
        count(counter, "kaminski", kaminski_qr_flops(m, n))
        X = post[:m, :m]
        Y = post[:m, m:]
        U_new = np.ascontiguousarray(post[m:, m:])

        z = solve_upper(X, rw, trans=True, counter=counter)
        dx = Y.T @ z
        count(counter, "mean", 2.0 * m * n)
        return SqrtState(state.vector.boxplus(dx.astype(np.float64)), U_new)
