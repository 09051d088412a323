"""
Keyframe selection over an initialization window by equalized parallax
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import InsufficientData
from sensors.imu import ImuBuffer

logger = logging.getLogger(__name__)

Frame = Tuple[float, Dict[int, np.ndarray]]


def default_keyframe_count(window: float) -> int:
    """Three keyframes for short windows, five from half a second on"""
    return 3 if window < 0.5 else 5


def average_parallax(prev: Dict[int, np.ndarray], curr: Dict[int, np.ndarray]) -> float:
    """Mean pixel displacement of the features seen in both frames"""
    common = sorted(set(prev) & set(curr))
    if not common:
        return 0.0
    return float(np.mean([np.linalg.norm(np.asarray(curr[f]) - np.asarray(prev[f])) for f in common]))


def cumulative_parallax(frames: Sequence[Frame]) -> np.ndarray:
    steps = [average_parallax(frames[i - 1][1], frames[i][1]) for i in range(1, len(frames))]
    return np.concatenate([[0.0], np.cumsum(steps)])


def equalization_cost(cum: np.ndarray, indices: Sequence[int]) -> float:
    """Squared deviation of the per-gap parallax from the even share"""
    target = (cum[indices[-1]] - cum[indices[0]]) / (len(indices) - 1)
    gaps = np.diff(cum[list(indices)])
    return float(np.sum((gaps - target) ** 2))


def _best_subset(cum: np.ndarray, count: int) -> List[int]:
    """Dynamic program over (keyframes placed, last index) with both ends fixed"""
    N = cum.size
    target = (cum[-1] - cum[0]) / (count - 1)
    cost = np.full((count, N), np.inf)
    parent = np.full((count, N), -1, dtype=int)
    cost[0, 0] = 0.0
    for j in range(1, count):
        for i in range(j, N):
            prev = np.arange(j - 1, i)
            cand = cost[j - 1, prev] + (cum[i] - cum[prev] - target) ** 2
            best = int(np.argmin(cand))
            cost[j, i] = cand[best]
            parent[j, i] = prev[best]
    indices = [N - 1]
    for j in range(count - 1, 0, -1):
        indices.append(int(parent[j, indices[-1]]))
    return indices[::-1]


def select_keyframes(frames: Sequence[Frame], count: int, window: Optional[float] = None,
                     imu: Optional[ImuBuffer] = None) -> List[int]:
    """
    Pick keyframes so each gap carries about the same average parallax

    Args:
        frames: time-ordered (timestamp, {feature id: pixel}) pairs
        count: number of keyframes, first and last frame included
        window: only frames within this many seconds of the first are used
        imu: when given, must cover the selected span

    Returns:
        list: indices into ``frames``

    Raises:
        InsufficientData: fewer frames than keyframes, or IMU not covering the window
    """
    if window is not None and frames:
        t_first = frames[0][0]
        frames = [f for f in frames if f[0] <= t_first + window + 1e-9]
    N = len(frames)
    if count < 2 or N < count:
        raise InsufficientData(f"Need {count} keyframes from {N} frames")
    if imu is not None and (len(imu) == 0 or imu.t[0] > frames[0][0] + 1e-9 or imu.t[-1] < frames[-1][0] - 1e-9):
        raise InsufficientData("IMU stream does not cover the initialization window")
    if N == count:
        return list(range(N))

    cum = cumulative_parallax(frames)
    if cum[-1] <= 1e-9:
        # No parallax at all: fall back to even spacing in time
        cum = np.array([f[0] for f in frames], dtype=np.float64)
        logger.debug("No image motion in window; selecting keyframes evenly in time")
    return _best_subset(cum, count)
