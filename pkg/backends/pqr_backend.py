"""
Permuted-QR update: the lower triangular F of C = F^T F comes from a QR of
the stacked pre-array [A^T; I] instead of a Cholesky factorization of C
"""

import logging
from typing import Any, Dict

import numpy as np

from backends.base_backend import UpdateBackend
from core.flops import FlopCounter, count, stacked_qr_flops
from core.sqrt_kernels import qr_triangularize
from core.srf_core import LinearizedMeasurement, SqrtState, apply_update_factor, whitened_cross

logger = logging.getLogger(__name__)


class PqrBackend(UpdateBackend):
    """QR-based square-root update sharing the LLT back substitution"""

    def __init__(self):
        super().__init__("pqr")

    def _apply(self, state: SqrtState, meas: LinearizedMeasurement,
               counter: FlopCounter, diagnostics: Dict[str, Any]) -> SqrtState:
        k, A = whitened_cross(state, meas, counter)
        pre = np.vstack([A.T, np.eye(k, dtype=state.dtype)])

        # Column reversal turns the upper R of the QR into a lower F = J R J
        R = qr_triangularize(pre[:, ::-1])
        count(counter, "pqr", stacked_qr_flops(meas.m, k))
        F = np.ascontiguousarray(np.tril(R[::-1, ::-1]))

        diagnostics.update({"k": k, "m": meas.m})
        return apply_update_factor(state, meas, k, F, counter)
