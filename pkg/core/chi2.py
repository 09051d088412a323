"""
Chi-square quantiles for measurement gating
"""

from functools import lru_cache

import numpy as np
from scipy.stats import chi2, norm

from config import Config


@lru_cache(maxsize=16)
def _quantile_table(confidence: float) -> np.ndarray:
    dofs = np.arange(1, Config.CHI2_TABLE_MAX_DOF + 1)
    return chi2.ppf(confidence, dofs)


def wilson_hilferty(dof: int, confidence: float) -> float:
    """Cube-root normal approximation of the chi-square quantile"""
    z = norm.ppf(confidence)
    c = 2.0 / (9.0 * dof)
    return float(dof * (1.0 - c + z * np.sqrt(c)) ** 3)


def chi2_quantile(dof: int, confidence: float) -> float:
    """
    Chi-square quantile, tabulated up to CHI2_TABLE_MAX_DOF degrees of freedom

    Args:
        dof (int): degrees of freedom (>= 1)
        confidence (float): probability in (0, 1)

    Returns:
        float: threshold
    """
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must lie in (0, 1), got {confidence}")
    if dof < 1:
        raise ValueError(f"dof must be positive, got {dof}")
    if dof <= Config.CHI2_TABLE_MAX_DOF:
        return float(_quantile_table(float(confidence))[dof - 1])
    return wilson_hilferty(dof, confidence)
