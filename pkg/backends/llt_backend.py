"""
Cholesky-form (LLT) update: factor C = I + A A^T once and back-substitute
"""

import logging
from typing import Any, Dict

from backends.base_backend import UpdateBackend
from core.flops import FlopCounter
from core.srf_core import LinearizedMeasurement, SqrtState, update_llt

logger = logging.getLogger(__name__)


class LltBackend(UpdateBackend):
    """Proposed update form, restricted to the touched leading block of C"""

    def __init__(self):
        super().__init__("llt")

    def _apply(self, state: SqrtState, meas: LinearizedMeasurement,
               counter: FlopCounter, diagnostics: Dict[str, Any]) -> SqrtState:
        return update_llt(state, meas, counter=counter, diagnostics=diagnostics)
