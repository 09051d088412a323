"""
Visual measurement formation: feature linearization, MSCKF nullspace
projection, delayed SLAM initialization, SLAM re-observation, anchor change
and assembly of the single stacked update.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import BehindCamera, DimensionMismatch, RankDeficient, UnknownClone
from core.quaternion import quat_to_rot, skew
from core.sqrt_kernels import permuted_qr_lower
from core.srf_core import LinearizedMeasurement, SqrtState, append_feature, transform_block
from core.state import CALIB_BLOCK, StateVector
from sensors.camera import CameraModel, project_with_jacobian
from vision.tracks import AnchoredFeature, Observation

logger = logging.getLogger(__name__)

# Two observations already leave one row after the 3-column nullspace projection,
# so two-view tracks are used rather than requiring five rows
MIN_MSCKF_ROWS = 4


@dataclass
class FeatureSystem:
    """
    Linearized observations of one feature

    ``H_x`` spans the state error layout it was built against, ``H_f`` the
    three feature coordinates. Observations that could not be projected are
    listed in ``dropped``.
    """
    residual: np.ndarray
    H_x: np.ndarray
    H_f: np.ndarray
    noise_std: np.ndarray
    dropped: List[str] = field(default_factory=list)

    @property
    def m(self) -> int:
        return self.residual.size

    def whitened(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        s = self.noise_std
        return self.residual / s, self.H_x / s[:, None], self.H_f / s[:, None]


def _extrinsics(vector: StateVector, cam: CameraModel):
    if CALIB_BLOCK in vector:
        block = vector.block(CALIB_BLOCK)
        return block.rotation, block.value[4:7], vector.err_slice(CALIB_BLOCK)
    return cam.R_CI, cam.p_IinC, None


def _pose(vector: StateVector, name: str):
    if name not in vector:
        raise UnknownClone(f"Clone {name} is not in the window")
    block = vector.block(name)
    start = vector.err_slice(name).start
    # Pose columns only; keyframe states carry velocity and biases after them
    return block.rotation, block.position, slice(start, start + 6)


def linearize(observations: Sequence[Observation], vector: StateVector, cam: CameraModel,
              f_G: Optional[np.ndarray] = None, feature: Optional[AnchoredFeature] = None) -> FeatureSystem:
    """
    Residuals and Jacobians of a feature's observations

    Exactly one of ``f_G`` (global point) or ``feature`` (anchored point)
    gives the feature; ``H_f`` is taken with respect to that parameterization.
    Observations behind the camera are dropped and logged.
    """
    if (f_G is None) == (feature is None):
        raise ValueError("Provide exactly one of f_G or feature")
    n = vector.dim
    R_CI, p_IinC, calib_sl = _extrinsics(vector, cam)

    if feature is not None:
        R_A, p_A, anchor_sl = _pose(vector, feature.anchor)
        point = feature.to_global(R_A, p_A)
        J_anchor_pose, J_anchor_f = AnchoredFeature.global_jacobians(feature.f_A, R_A)
    else:
        point = np.asarray(f_G, dtype=np.float64)

    rows_r, rows_Hx, rows_Hf, sigmas, dropped = [], [], [], [], []
    for obs in observations:
        R_j, p_j, pose_sl = _pose(vector, obs.clone)
        f_I = R_j @ (point - p_j)
        f_C = R_CI @ f_I + p_IinC
        try:
            uv, J_proj = project_with_jacobian(f_C, cam)
        except BehindCamera as e:
            logger.debug(f"Dropped observation on {obs.clone}: {e}")
            dropped.append(obs.clone)
            continue

        J_I = J_proj @ R_CI
        H_x = np.zeros((2, n))
        H_x[:, pose_sl.start:pose_sl.start + 3] += J_I @ skew(f_I)
        H_x[:, pose_sl.start + 3:pose_sl.stop] += -J_I @ R_j
        J_G = J_I @ R_j
        if feature is not None:
            H_x[:, anchor_sl] += J_G @ J_anchor_pose
            H_f = J_G @ J_anchor_f
        else:
            H_f = J_G
        if calib_sl is not None:
            H_x[:, calib_sl.start:calib_sl.start + 3] += J_proj @ skew(R_CI @ f_I)
            H_x[:, calib_sl.start + 3:calib_sl.stop] += J_proj

        rows_r.append(obs.uv - uv)
        rows_Hx.append(H_x)
        rows_Hf.append(H_f)
        sigmas.extend([obs.sigma, obs.sigma])

    if not rows_r:
        return FeatureSystem(np.zeros(0), np.zeros((0, n)), np.zeros((0, 3)), np.zeros(0), dropped)
    return FeatureSystem(np.concatenate(rows_r), np.vstack(rows_Hx), np.vstack(rows_Hf),
                         np.asarray(sigmas, dtype=np.float64), dropped)


def msckf_project(system: FeatureSystem, label: str = "msckf") -> LinearizedMeasurement:
    """
    Remove the feature from its linearized system by left-nullspace projection

    The rows are whitened first, so the projected measurement has unit noise.

    Raises:
        RankDeficient: the feature Jacobian lacks full column rank or too few rows remain
    """
    if system.m < MIN_MSCKF_ROWS:
        raise RankDeficient(f"MSCKF projection needs at least {MIN_MSCKF_ROWS} rows, got {system.m}")
    rw, Hx, Hf = system.whitened()
    Q1, _, _ = permuted_qr_lower(Hf)
    return LinearizedMeasurement(Q1.T @ rw, Q1.T @ Hx, np.ones(Q1.shape[1]), label=label)


@dataclass
class FeatureSplit:
    """Whitened feature system split into its nullspace and range parts"""
    nullspace: LinearizedMeasurement
    J_x: np.ndarray
    J_f: np.ndarray
    residual: np.ndarray


def split_feature_system(system: FeatureSystem, label: str = "slam_init") -> FeatureSplit:
    """
    Separate the rows that constrain only the state from the rows that fix the feature

    Raises:
        RankDeficient: the feature is not fully constrained
    """
    if system.m < 3:
        raise RankDeficient(f"Feature needs at least 3 rows, got {system.m}")
    rw, Hx, Hf = system.whitened()
    Q1, Q2, J = permuted_qr_lower(Hf)
    nullspace = LinearizedMeasurement(Q1.T @ rw, Q1.T @ Hx, np.ones(Q1.shape[1]), label=label)
    return FeatureSplit(nullspace, Q2.T @ Hx, J, Q2.T @ rw)


def slam_delayed_init(state: SqrtState, name: str, value: np.ndarray, system: FeatureSystem,
                      meta: Optional[Dict] = None,
                      kind: str = "anchored_feature") -> Tuple[SqrtState, LinearizedMeasurement]:
    """
    Append a new SLAM feature from its delayed-initialization system

    Returns:
        tuple: state with the feature appended and the nullspace measurement
        left for the stacked update
    """
    split = split_feature_system(system)
    new_state = append_feature(state, name, value, split.J_x, split.J_f,
                               residual=split.residual, kind=kind, meta=meta)
    return new_state, split.nullspace


def slam_reobservation(obs: Observation, vector: StateVector, cam: CameraModel,
                       feature_name: str) -> LinearizedMeasurement:
    """Linearized re-observation of a feature that is part of the state"""
    block = vector.block(feature_name)
    feature = AnchoredFeature(block.meta.get("fid", -1), block.meta["anchor"], block.value)
    system = linearize([obs], vector, cam, feature=feature)
    if system.m == 0:
        raise BehindCamera(f"Re-observation of {feature_name} is behind the camera")
    H = system.H_x.copy()
    H[:, vector.err_slice(feature_name)] += system.H_f
    return LinearizedMeasurement(system.residual, H, system.noise_std, label="slam")


def anchor_maps(vector: StateVector, feature_name: str,
                new_anchor: str) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """
    Linear maps and new value for re-expressing an anchored feature in another clone

    Raises:
        UnknownClone: either anchor is outside the window
    """
    block = vector.block(feature_name)
    old_anchor = block.meta["anchor"]
    R_A, p_A, _ = _pose(vector, old_anchor)
    R_B, p_B, _ = _pose(vector, new_anchor)
    f_A = block.value
    f_G = R_A.T @ f_A + p_A
    f_B = R_B @ (f_G - p_B)

    J_A_pose, J_A_f = AnchoredFeature.global_jacobians(f_A, R_A)
    maps = {
        feature_name: R_B @ J_A_f,
        old_anchor: R_B @ J_A_pose,
    }
    J_B = np.hstack([skew(f_B), -R_B])
    if new_anchor == old_anchor:
        maps[old_anchor] = maps[old_anchor] + J_B
    else:
        maps[new_anchor] = J_B
    return maps, f_B


def anchor_change(state: SqrtState, feature_name: str, new_anchor: str,
                  defer_qr: bool = False, counter=None) -> SqrtState:
    """Re-anchor a SLAM feature; the implied global covariance is preserved"""
    block = state.vector.block(feature_name)
    if block.meta.get("anchor") == new_anchor:
        return state
    maps, f_B = anchor_maps(state.vector, feature_name, new_anchor)
    meta = dict(block.meta, anchor=new_anchor)
    return transform_block(state, feature_name, maps, f_B, meta=meta, defer_qr=defer_qr, counter=counter)


def assemble_update(blocks: Sequence[LinearizedMeasurement], n: int) -> LinearizedMeasurement:
    """
    Stack gated measurement blocks into one measurement

    Products U H^T cached on the blocks during gating are combined so the
    stacked update does not recompute them.
    """
    blocks = [b for b in blocks if b.m > 0]
    if not blocks:
        return LinearizedMeasurement.empty(n)
    width = max(b.width for b in blocks)
    if width > n:
        raise DimensionMismatch(f"Block width {width} exceeds state dimension {n}")

    H = np.zeros((sum(b.m for b in blocks), width))
    row = 0
    for b in blocks:
        H[row:row + b.m, :b.width] = b.jacobian
        row += b.m
    columns = np.unique(np.concatenate([b.columns for b in blocks]))
    stacked = LinearizedMeasurement(
        np.concatenate([b.residual for b in blocks]),
        H,
        np.concatenate([b.noise_std for b in blocks]),
        columns=columns,
        label="stacked",
    )

    caches = [b._cross for b in blocks]
    if columns.size and all(c is not None for c in caches):
        ids = {(c[0][0], c[0][2]) for c in caches}
        if len(ids) == 1:
            factor_id, dtype_str = ids.pop()
            k = int(columns[-1]) + 1
            A = np.zeros((k, stacked.m), dtype=np.dtype(dtype_str))
            row = 0
            for b, (key, A_b) in zip(blocks, caches):
                A[:key[1], row:row + b.m] = A_b
                row += b.m
            stacked._cross = ((factor_id, k, dtype_str), A)
    return stacked
