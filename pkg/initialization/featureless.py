"""
Closed-form inertial-visual initialization without feature depths.

Epipolar normals of bearing pairs, rotated into the first keyframe with
gyro-only preintegration, are all orthogonal to the camera translation. The
translation direction is the smallest eigenvector of their scatter matrix;
projecting the inertial translation model onto its complement removes the
unknown scale and leaves a linear system in the first velocity and gravity,
solved with the gravity magnitude held fixed.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import Config
from core.errors import DegenerateGeometry, IllConditioned, InsufficientData
from core.quaternion import skew
from core.sqrt_kernels import eig3_symmetric
from sensors.camera import CameraModel
from sensors.imu import Preintegration

logger = logging.getLogger(__name__)


@dataclass
class MinimalInitState:
    """First-keyframe velocity and gravity direction, both in the first IMU frame"""
    v0: np.ndarray
    alpha: float
    beta: float
    gravity_magnitude: float = Config.GRAVITY_MAGNITUDE
    diagnostics: Dict[str, float] = field(default_factory=dict)

    @property
    def gravity(self) -> np.ndarray:
        a, b = self.alpha, self.beta
        return self.gravity_magnitude * np.array([np.cos(a) * np.sin(b), np.sin(a) * np.sin(b), np.cos(b)])

    @classmethod
    def from_gravity(cls, v0: np.ndarray, g: np.ndarray, magnitude: float = Config.GRAVITY_MAGNITUDE,
                     diagnostics: Optional[Dict[str, float]] = None) -> "MinimalInitState":
        g = np.asarray(g, dtype=np.float64)
        beta = float(np.arccos(np.clip(g[2] / np.linalg.norm(g), -1.0, 1.0)))
        alpha = float(np.arctan2(g[1], g[0]))
        return cls(np.asarray(v0, dtype=np.float64), alpha, beta, magnitude, dict(diagnostics or {}))


@dataclass
class EpipolarAccumulator:
    """
    Scatter M = sum n n^T of epipolar normals

    ``cheirality`` sums b2 x n over the pairs; a translation d between the two
    views puts the features in front of both cameras when d . cheirality > 0.
    """
    M: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    count: int = 0
    cheirality: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def add(self, b1: np.ndarray, b2: np.ndarray) -> np.ndarray:
        """Add the normal of one bearing pair expressed in a common frame"""
        b2 = np.asarray(b2, dtype=np.float64)
        n = skew(np.asarray(b1, dtype=np.float64)) @ b2
        self.M += np.outer(n, n)
        self.cheirality += np.cross(b2, n)
        self.count += 1
        return n

    def merge(self, other: "EpipolarAccumulator") -> "EpipolarAccumulator":
        return EpipolarAccumulator(self.M + other.M, self.count + other.count,
                                   self.cheirality + other.cheirality)

    @property
    def trace(self) -> float:
        return float(np.trace(self.M))

    @property
    def is_static(self) -> bool:
        """Shared features whose normals all vanish: no parallax between the two views"""
        return self.count > 0 and self.trace / self.count < Config.STATIC_NORMAL_FLOOR


@dataclass
class RelativeDirection:
    t: np.ndarray
    e: np.ndarray
    eigenvalues: np.ndarray

    @property
    def gap(self) -> float:
        """Largest over smallest eigenvalue"""
        lo = self.eigenvalues[0]
        return float(self.eigenvalues[2] / lo) if lo > 0 else float("inf")


def relative_direction(acc: EpipolarAccumulator, ratio: float = Config.DEGENERACY_RATIO) -> RelativeDirection:
    """
    Translation direction between two views from accumulated epipolar normals

    The sign of ``t`` is not resolved; the scale-free system downstream only
    uses its orthogonal complement ``e``.

    Raises:
        DegenerateGeometry: normals do not span a plane (pure rotation,
            features on one plane through the baseline)
    """
    if acc.count < 2 or acc.trace <= 0.0:
        raise DegenerateGeometry(f"Epipolar scatter is empty ({acc.count} pairs)")
    values, vectors = eig3_symmetric(acc.M)
    lo, mid = max(values[0], 0.0), values[1]
    if mid <= ratio * lo or mid <= 1e-12 * values[2]:
        raise DegenerateGeometry(f"Eigenvalue ratio {mid / lo if lo > 0 else float('inf'):.3g} "
                                 f"with spectrum {values}")
    return RelativeDirection(vectors[:, 0], vectors[:, 1:3], values)


def rotate_bearing(cam: CameraModel, uv: np.ndarray, R_k0: np.ndarray) -> np.ndarray:
    """Unit bearing of a pixel expressed in the first IMU frame (R_k0 maps frame 0 into frame k)"""
    return R_k0.T @ (cam.R_IC @ cam.bearing(uv))


def accumulate_pairs(keyframe_obs: Sequence[Dict[int, np.ndarray]], rotations: Sequence[np.ndarray],
                     cam: CameraModel) -> Dict[Tuple[int, int], EpipolarAccumulator]:
    """
    Epipolar scatter for every keyframe pair i < j over their common features

    Args:
        keyframe_obs: per keyframe {feature id: pixel}
        rotations: per keyframe rotation from the first IMU frame into the keyframe's
        cam: camera model
    """
    K = len(keyframe_obs)
    pairs = {}
    for i in range(K):
        for j in range(i + 1, K):
            acc = EpipolarAccumulator()
            for fid in sorted(set(keyframe_obs[i]) & set(keyframe_obs[j])):
                acc.add(rotate_bearing(cam, keyframe_obs[i][fid], rotations[i]),
                        rotate_bearing(cam, keyframe_obs[j][fid], rotations[j]))
            pairs[(i, j)] = acc
    return pairs


def pair_system(pre_i: Optional[Preintegration], pre_j: Preintegration,
                p_CinI: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Camera displacement model d = b - A x between keyframes i and j, x = [v0; g]

    ``pre_i`` is None for the first keyframe itself. ``d`` is the camera
    translation from i to j in the first IMU frame.
    """
    if pre_i is None:
        T_i, a_i, R_i = 0.0, np.zeros(3), np.eye(3)
    else:
        T_i, a_i, R_i = pre_i.dT, pre_i.alpha, pre_i.delta_R
    T_j, a_j, R_j = pre_j.dT, pre_j.alpha, pre_j.delta_R
    A = -np.hstack([(T_j - T_i) * np.eye(3), 0.5 * (T_j ** 2 - T_i ** 2) * np.eye(3)])
    b = a_j - a_i + (R_j.T - R_i.T) @ p_CinI
    return A, b


def dominant_normal(acc: EpipolarAccumulator, ratio: float = Config.DEGENERACY_RATIO) -> Optional[np.ndarray]:
    """
    The one reliable constraint direction of a scatter whose normals span a line

    Returns None when even the largest eigenvalue is at the noise level.
    """
    if acc.count == 0 or acc.trace <= 0.0:
        return None
    values, vectors = eig3_symmetric(acc.M)
    if values[2] <= ratio * max(values[0], 0.0):
        return None
    return vectors[:, 2:3]


@dataclass
class _PairModel:
    A: np.ndarray
    b: np.ndarray
    cheirality: np.ndarray
    static: bool


def _tangent_basis(g: np.ndarray) -> np.ndarray:
    """Two unit columns orthogonal to g"""
    u = g / np.linalg.norm(g)
    helper = np.eye(3)[int(np.argmin(np.abs(u)))]
    t1 = np.cross(u, helper)
    t1 /= np.linalg.norm(t1)
    return np.column_stack([t1, np.cross(u, t1)])


def _constrained_refine(A: np.ndarray, b: np.ndarray, x: np.ndarray, magnitude: float,
                        iterations: int) -> Tuple[np.ndarray, float]:
    """
    Gauss-Newton on |A x - b|^2 over v0 and the gravity direction with |g| held at magnitude

    Returns:
        tuple: refined x and its squared residual
    """
    v0, g = x[0:3].copy(), x[3:6].copy()
    g = magnitude * g / np.linalg.norm(g)
    for _ in range(iterations):
        r = A[:, 0:3] @ v0 + A[:, 3:6] @ g - b
        B = _tangent_basis(g)
        J = np.hstack([A[:, 0:3], A[:, 3:6] @ B])
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        v0 = v0 + step[0:3]
        g = g + B @ step[3:5]
        g = magnitude * g / np.linalg.norm(g)
        if np.linalg.norm(step) <= 1e-12 * (1.0 + np.linalg.norm(v0) + magnitude):
            break
    x = np.concatenate([v0, g])
    return x, float(np.sum((A @ x - b) ** 2))


def _seeds(A_scaled: np.ndarray, scale: np.ndarray, b: np.ndarray, Vt: np.ndarray,
           magnitude: float) -> List[np.ndarray]:
    """
    Starting points on the gravity sphere

    The least-squares solution, plus the points where the line through it
    along the weakest direction meets |g| = magnitude.
    """
    y, *_ = np.linalg.lstsq(A_scaled, b, rcond=None)
    x_ls = y / scale
    n = Vt[-1] / scale
    seeds = []
    if np.linalg.norm(x_ls[3:6]) > 1e-9:
        seeds.append(x_ls)

    g_p, n_g = x_ls[3:6], n[3:6]
    a = float(n_g @ n_g)
    if a <= 1e-18 * float(n @ n):
        return seeds
    half_b = float(g_p @ n_g)
    c = float(g_p @ g_p) - magnitude ** 2
    disc = half_b ** 2 - a * c
    if disc < 0.0:
        seeds.append(x_ls - (half_b / a) * n)
    else:
        root = np.sqrt(disc)
        seeds.extend([x_ls + ((-half_b + root) / a) * n, x_ls + ((-half_b - root) / a) * n])
    return [s for s in seeds if np.linalg.norm(s[3:6]) > 1e-9]


def _positive_depth_pairs(x: np.ndarray, models: Sequence[_PairModel]) -> int:
    """Moving pairs whose implied translation puts the common features in front of both views"""
    votes = 0
    for m in models:
        if m.static:
            continue
        d = m.b - m.A @ x
        if float(d @ m.cheirality) > 0.0:
            votes += 1
    return votes


def featureless_solve(cumulative: Sequence[Optional[Preintegration]],
                      pairs: Dict[Tuple[int, int], EpipolarAccumulator],
                      p_CinI: np.ndarray,
                      gravity_magnitude: float = Config.GRAVITY_MAGNITUDE,
                      ratio: float = Config.DEGENERACY_RATIO,
                      max_condition: float = Config.INIT_MAX_NORMAL_COND) -> MinimalInitState:
    """
    Recover v0 and gravity from the scale-eliminated constraints of all keyframe pairs

    The gravity magnitude is imposed inside the solve. With three keyframes the
    stacked rows have rank five, so the constraint |g| = G is what fixes the last
    direction; it meets the line of least-squares solutions twice. Candidates are
    ranked by residual, then by how many pairs see their features in front of the
    camera, then by the smaller mean acceleration over the window.

    Args:
        cumulative: per keyframe, integrals from the first keyframe (None for the first)
        pairs: epipolar scatter per keyframe pair
        p_CinI: camera position in the IMU frame
        gravity_magnitude: fixed norm imposed on the recovered gravity
        ratio: eigenvalue ratio below which a pair's translation direction is degenerate
        max_condition: limit on the column-scaled normal matrix condition

    Returns:
        MinimalInitState: velocity and gravity angles in the first IMU frame

    Raises:
        InsufficientData: fewer than three keyframes or too few usable pairs
        DegenerateGeometry: too few constraints remain because some pairs are degenerate
        IllConditioned: more than one direction of [v0; g] is unconstrained
    """
    if len(cumulative) < 3:
        raise InsufficientData(f"Featureless solve needs 3 keyframes, got {len(cumulative)}")

    rows, rhs, gaps, models = [], [], [], []
    static_pairs, partial, degenerate = 0, [], []
    for (i, j), acc in sorted(pairs.items()):
        static = acc.is_static
        if static:
            e = np.eye(3)
            static_pairs += 1
        else:
            try:
                direction = relative_direction(acc, ratio)
                e = direction.e
                gaps.append(direction.gap)
            except DegenerateGeometry as err:
                e = dominant_normal(acc, ratio)
                if e is None:
                    logger.warning(f"Keyframe pair ({i}, {j}) gives no constraint: {err}")
                    degenerate.append((i, j))
                    continue
                logger.warning(f"Keyframe pair ({i}, {j}) keeps one constraint row: {err}")
                partial.append((i, j))
        A_full, b_full = pair_system(cumulative[i], cumulative[j], p_CinI)
        rows.append(e.T @ A_full)
        rhs.append(e.T @ b_full)
        models.append(_PairModel(A_full, b_full, acc.cheirality, static))

    weak = degenerate + partial
    row_count = sum(r.shape[0] for r in rows)
    if row_count < 5:
        if weak:
            raise DegenerateGeometry(f"Only {row_count} constraints left; degenerate pairs {degenerate}, "
                                     f"single-row pairs {partial}")
        raise InsufficientData("Too few constraints for velocity and gravity")
    A = np.vstack(rows)
    b = np.concatenate(rhs)

    scale = np.linalg.norm(A, axis=0)
    if np.any(scale <= 0.0):
        raise IllConditioned("A velocity or gravity component is absent from every constraint")
    A_scaled = A / scale
    # full V so the weakest direction exists even with exactly five rows
    _, sv, Vt = np.linalg.svd(A_scaled, full_matrices=True)
    condition = float((sv[0] / sv[4]) ** 2) if sv[4] > 0 else float("inf")
    if not np.isfinite(condition) or condition > max_condition:
        message = f"Scaled normal matrix condition {condition:.3e} over the constrained directions"
        if weak:
            raise DegenerateGeometry(f"{message}; degenerate pairs {degenerate}, single-row pairs {partial}")
        raise IllConditioned(message)

    seeds = _seeds(A_scaled, scale, b, Vt, gravity_magnitude)
    if not seeds:
        raise IllConditioned("Gravity is unobservable: the weakest direction only moves the velocity")

    candidates = [_constrained_refine(A, b, x0, gravity_magnitude, Config.INIT_GN_ITERATIONS) for x0 in seeds]
    best_cost = min(cost for _, cost in candidates)
    gate = 4.0 * best_cost + row_count * Config.INIT_AMBIGUITY_RESIDUAL ** 2
    near = [(x, cost) for x, cost in candidates if cost <= gate]

    beta_K, T_K = cumulative[-1].beta, cumulative[-1].dT

    def rank(item):
        x, cost = item
        mean_accel = float(np.linalg.norm(x[3:6] + beta_K / T_K))
        return (-_positive_depth_pairs(x, models), mean_accel, cost)

    x, cost = min(near, key=rank)
    v0, g = x[0:3], x[3:6]

    diagnostics = {
        "condition": condition,
        "eigen_gap": float(min(gaps)) if gaps else float("inf"),
        "pairs": len(rows),
        "static_pairs": static_pairs,
        "partial_pairs": len(partial),
        "degenerate_pairs": len(degenerate),
        "candidates": len(near),
        "positive_depth_pairs": _positive_depth_pairs(x, models),
        "residual": float(np.sqrt(cost)),
    }
    logger.debug(f"Featureless solve: |v0|={np.linalg.norm(v0):.3f}, condition {condition:.2e}, "
                 f"{len(near)} candidate(s)")
    return MinimalInitState.from_gravity(v0, g, gravity_magnitude, diagnostics)
