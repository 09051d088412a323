"""
Estimator engines driven by the sliding-window loop
"""

from config import Config
from estimators.base_estimator import FilterEngine
from estimators.ekf_estimator import DenseEkfEngine
from estimators.srf_estimator import SrfEngine
from estimators.srif_estimator import SrifEngine


def make_engine(estimator: str, precision: str = "double") -> FilterEngine:
    """
    Build an engine from its identifier

    Args:
        estimator (str): "ekf", "srif" or one of the square-root update backends
        precision (str): "single" or "double"

    Returns:
        FilterEngine: a fresh, uninitialized engine
    """
    if precision not in Config.PRECISION_MODES:
        raise ValueError(f"Unknown precision: {precision}. Available: {Config.PRECISION_MODES}")
    if estimator == "ekf":
        return DenseEkfEngine(precision)
    if estimator == "srif":
        return SrifEngine(precision)
    if estimator in Config.BACKENDS:
        return SrfEngine(estimator, precision)
    raise ValueError(f"Unknown estimator: {estimator}. Available: {Config.ESTIMATORS}")


__all__ = ["FilterEngine", "DenseEkfEngine", "SrfEngine", "SrifEngine", "make_engine"]
