"""
Potter's sequential square-root update for scalar measurement rows
"""

import logging
from typing import Any, Dict

import numpy as np

from backends.base_backend import UpdateBackend
from core.flops import FlopCounter, count, gemm_flops
from core.sqrt_kernels import qr_triangularize
from core.srf_core import LinearizedMeasurement, SqrtState

logger = logging.getLogger(__name__)


class PotterBackend(UpdateBackend):
    """
    Rank-one factor modification per whitened row

    Each row replaces U by (I - gamma f f^T) U, which fills the factor in;
    a closing QR restores the triangular shape and is booked outside the
    update total.
    """

    def __init__(self):
        super().__init__("potter", sequential=True)

    def _apply(self, state: SqrtState, meas: LinearizedMeasurement,
               counter: FlopCounter, diagnostics: Dict[str, Any]) -> SqrtState:
        n = state.dim
        rw, Hw = self._dense_whitened(state, meas)
        U = state.U.copy()
        dx = np.zeros(n, dtype=state.dtype)

        rows, cols = U.shape
        for h, r in zip(Hw, rw):
            nu = r - h @ dx
            count(counter, "potter", 2.0 * cols)
            f = U @ h
            count(counter, "potter", gemm_flops(rows, cols, 1))
            alpha = f @ f + 1.0
            gamma = 1.0 / (alpha + np.sqrt(alpha))
            count(counter, "potter", 2.0 * rows + 4.0)
            g = U.T @ f
            count(counter, "potter", gemm_flops(cols, rows, 1))
            dx += g * (nu / alpha)
            count(counter, "potter", 2.0 * cols + 1.0)
            U -= np.outer(gamma * f, g)
            count(counter, "potter", rows + 2.0 * rows * cols)

        U_new = qr_triangularize(U, counter, "retriangularize")
        return SqrtState(state.vector.boxplus(dx.astype(np.float64)), U_new)
