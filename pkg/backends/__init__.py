"""
Square-root measurement update backends
"""

from typing import Dict, Optional, Tuple, Type

from backends.base_backend import UpdateBackend
from backends.carlson_backend import CarlsonBackend
from backends.kaminski_backend import KaminskiBackend
from backends.llt_backend import LltBackend
from backends.potter_backend import PotterBackend
from backends.pqr_backend import PqrBackend
from core.flops import FlopCounter
from core.srf_core import LinearizedMeasurement, SqrtState

BACKEND_REGISTRY: Dict[str, Type[UpdateBackend]] = {
    "llt": LltBackend,
    "pqr": PqrBackend,
    "potter": PotterBackend,
    "carlson": CarlsonBackend,
    "kaminski": KaminskiBackend,
}


def get_backend(name: str) -> UpdateBackend:
    """Instantiate a backend by identifier"""
    try:
        return BACKEND_REGISTRY[name.lower()]()
    except KeyError:
        raise ValueError(f"Unknown update backend: {name}. Choose from {sorted(BACKEND_REGISTRY)}") from None


def update_backend(state: SqrtState, meas: LinearizedMeasurement, backend: str,
                   counter: Optional[FlopCounter] = None,
                   diagnostics: Optional[dict] = None) -> Tuple[SqrtState, FlopCounter]:
    """Apply one measurement with the named backend and return the flop counter"""
    return get_backend(backend).update(state, meas, counter=counter, diagnostics=diagnostics)


__all__ = [
    "UpdateBackend",
    "LltBackend",
    "PqrBackend",
    "PotterBackend",
    "CarlsonBackend",
    "KaminskiBackend",
    "BACKEND_REGISTRY",
    "get_backend",
    "update_backend",
]
