"""
Error metrics: navigation errors, RMSE, NEES, trajectory alignment and the
initialization error measures.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from core.quaternion import angle_deg, quat_to_rot
from core.state import StateBlock

logger = logging.getLogger(__name__)


def nav_error(truth: np.ndarray, estimate: np.ndarray) -> np.ndarray:
    """15-dim error dx with truth = estimate (+) dx"""
    return StateBlock("truth", "imu", truth).boxminus(StateBlock("estimate", "imu", estimate))


def nees(error: np.ndarray, P: np.ndarray) -> float:
    """Normalized estimation error squared"""
    try:
        L = np.linalg.cholesky(0.5 * (P + P.T))
    except np.linalg.LinAlgError:
        return float("nan")
    y = np.linalg.solve(L, error)
    return float(y @ y)


def rmse(errors: np.ndarray) -> float:
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        return float("nan")
    return float(np.sqrt(np.mean(errors ** 2)))


def umeyama(source: np.ndarray, target: np.ndarray, with_scale: bool = False) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    Least-squares similarity with target ~ s R source + t

    Args:
        source: (N, 3) estimated positions
        target: (N, 3) reference positions
        with_scale: solve for s (Sim(3)) instead of fixing s = 1 (SE(3))

    Returns:
        tuple: rotation, translation, scale
    """
    X = np.asarray(source, dtype=np.float64)
    Y = np.asarray(target, dtype=np.float64)
    if X.shape != Y.shape or X.shape[0] < 3:
        raise ValueError(f"Alignment needs matching (N>=3, 3) arrays, got {X.shape} and {Y.shape}")
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - mx, Y - my
    Sigma = Yc.T @ Xc / X.shape[0]
    U, D, Vt = np.linalg.svd(Sigma)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    s = 1.0
    if with_scale:
        var = np.mean(np.sum(Xc ** 2, axis=1))
        s = float(np.trace(np.diag(D) @ S) / var) if var > 0 else 1.0
    t = my - s * R @ mx
    return R, t, s


def scale_error_percent(s: float) -> float:
    """100 (max(s, 1/s) - 1)"""
    return 100.0 * (max(s, 1.0 / s) - 1.0)


def absolute_trajectory_error(estimate: np.ndarray, truth: np.ndarray, with_scale: bool = False) -> Dict[str, float]:
    """ATE RMSE after SE(3) or Sim(3) alignment of the estimate onto the truth"""
    R, t, s = umeyama(estimate, truth, with_scale)
    aligned = s * np.asarray(estimate) @ R.T + t
    err = np.linalg.norm(aligned - np.asarray(truth), axis=1)
    result = {"ate": rmse(err), "scale": s}
    if with_scale:
        result["scale_error_pct"] = scale_error_percent(s)
    return result


def gravity_error_deg(g_estimate: np.ndarray, g_truth: np.ndarray) -> float:
    a = np.asarray(g_estimate, dtype=np.float64)
    b = np.asarray(g_truth, dtype=np.float64)
    c = np.clip(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)), -1.0, 1.0)
    return float(np.degrees(np.arccos(c)))


RUN_METRIC_FIELDS = ["frame", "t", "orientation_error_deg", "position_error_m", "nees", "cond", "flops", "m"]


@dataclass
class RunMetrics:
    """Per-frame errors of one filter run and their aggregates"""
    estimator: str
    precision: str
    rows: List[Dict[str, Any]] = field(default_factory=list)

    def add(self, frame: int, t: float, truth: np.ndarray, estimate: np.ndarray,
            P: Optional[np.ndarray], cond: float, flops: float, m: int) -> Dict[str, Any]:
        err = nav_error(truth, estimate)
        row = {
            "frame": int(frame),
            "t": float(t),
            "orientation_error_deg": angle_deg(quat_to_rot(truth[0:4]), quat_to_rot(estimate[0:4])),
            "position_error_m": float(np.linalg.norm(err[3:6])),
            "nees": nees(err, P) if P is not None else float("nan"),
            "cond": float(cond),
            "flops": float(flops),
            "m": int(m),
        }
        self.rows.append(row)
        return row

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    @property
    def rmse_orientation_deg(self) -> float:
        return rmse(self.column("orientation_error_deg"))

    @property
    def rmse_position_m(self) -> float:
        return rmse(self.column("position_error_m"))

    @property
    def mean_nees(self) -> float:
        values = self.column("nees")
        values = values[np.isfinite(values)]
        return float(np.mean(values)) if values.size else float("nan")

    @property
    def max_cond(self) -> float:
        values = self.column("cond")
        values = values[np.isfinite(values)]
        return float(np.max(values)) if values.size else float("nan")

    def summary(self) -> Dict[str, Any]:
        return {
            "estimator": self.estimator,
            "precision": self.precision,
            "frames": len(self.rows),
            "rmse_orientation_deg": self.rmse_orientation_deg,
            "rmse_position_m": self.rmse_position_m,
            "mean_nees": self.mean_nees,
            "max_cond": self.max_cond,
        }
