"""
ASL-style sequences: IMU, feature-track and ground-truth CSV files plus a
calibration document.

Layout of a sequence root::

    imu0/data.csv                         t_ns,wx,wy,wz,ax,ay,az
    cam0/data.csv                         t_ns              (optional frame list)
    tracks0/data.csv                      t_ns,fid,u,v
    state_groundtruth_estimate0/data.csv  t_ns,px,py,pz,qw,qx,qy,qz,vx,vy,vz  (optional)
    calibration.json5

Files written here use exactly these headers. Files whose header starts with
``#`` (EuRoC exports) are read positionally. Values are written with 17
significant digits so a write/load cycle reproduces every double.
"""

import logging
import os
import re
from dataclasses import dataclass, field
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.errors import MalformedRow, MissingFile, NonMonotonicTimestamps, UnitsAmbiguous
from sensors.imu import ImuBuffer
from dataset.calibration import Calibration, load_calibration, write_calibration

logger = logging.getLogger(__name__)

IMU_FILE = os.path.join("imu0", "data.csv")
CAM_FILE = os.path.join("cam0", "data.csv")
TRACK_FILE = os.path.join("tracks0", "data.csv")
TRUTH_FILE = os.path.join("state_groundtruth_estimate0", "data.csv")
CALIBRATION_FILE = "calibration.json5"

FLOAT_FORMAT = "%.17g"
GAP_FACTOR = 3.0

_INTEGER = re.compile(r"[+-]?\d+")


class AslImuRecord(NamedTuple):
    t_ns: int
    wx: float
    wy: float
    wz: float
    ax: float
    ay: float
    az: float


class TrackFileRecord(NamedTuple):
    t_ns: int
    fid: int
    u: float
    v: float


class TruthRecord(NamedTuple):
    t_ns: int
    px: float
    py: float
    pz: float
    qw: float
    qx: float
    qy: float
    qz: float
    vx: float
    vy: float
    vz: float


IMU_COLUMNS = list(AslImuRecord._fields)
TRACK_COLUMNS = list(TrackFileRecord._fields)
UNDISTORTED_TRACK_COLUMNS = ["t_ns", "fid", "u_undist", "v_undist"]
TRUTH_COLUMNS = list(TruthRecord._fields)


@dataclass
class GroundTruth:
    """Poses and velocities; ``q`` holds JPL global-to-IMU quaternions [x, y, z, w]"""
    t_ns: np.ndarray
    p: np.ndarray
    q: np.ndarray
    v: np.ndarray

    def positions_at(self, t_ns: Sequence[int]) -> np.ndarray:
        """Positions linearly interpolated at the given timestamps"""
        t = np.asarray(t_ns, dtype=np.int64)
        if t.size and (t.min() < self.t_ns[0] or t.max() > self.t_ns[-1]):
            raise ValueError("requested times fall outside the ground truth")
        x = (t - self.t_ns[0]).astype(np.float64)
        xp = (self.t_ns - self.t_ns[0]).astype(np.float64)
        return np.column_stack([np.interp(x, xp, self.p[:, i]) for i in range(3)])


@dataclass
class AslSequence:
    """Synchronized streams of one recording"""
    imu_t_ns: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray
    frame_t_ns: np.ndarray
    frames: List[Dict[int, np.ndarray]]
    calibration: Calibration
    truth: Optional[GroundTruth] = None
    summary: Dict[str, Any] = field(default_factory=dict)

    @property
    def imu(self) -> ImuBuffer:
        return ImuBuffer(self.imu_t_ns * 1e-9, self.gyro, self.accel)

    def frame_list(self) -> List[Tuple[float, Dict[int, np.ndarray]]]:
        """Frames on the IMU clock"""
        offset = self.calibration.camera.time_offset
        return [(t * 1e-9 + offset, obs) for t, obs in zip(self.frame_t_ns, self.frames)]


# Parsing

def _read_table(path: str, columns: List[str], alternatives: Sequence[List[str]] = ()) -> Tuple[pd.DataFrame, List[str]]:
    """
    Read a CSV as strings and check its header

    Returns:
        tuple: table with the matched column names and the header that matched
    """
    if not os.path.isfile(path):
        raise MissingFile(f"Required file not found: {path}")
    try:
        raw = pd.read_csv(path, header=None, dtype=str, keep_default_na=False, skipinitialspace=True,
                          skip_blank_lines=True)
    except pd.errors.EmptyDataError:
        raise MalformedRow("file is empty", 1, path) from None
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise MalformedRow(f"wrong number of fields ({e})", int(match.group(1)) if match else None, path) from None
    if raw.empty:
        raise MalformedRow("file has no header", 1, path)
    header = [str(h).strip() for h in raw.iloc[0].tolist()]
    body = raw.iloc[1:].reset_index(drop=True)

    for candidate in (columns, *alternatives):
        if header == candidate:
            return body.set_axis(candidate, axis=1), candidate
    if header and header[0].startswith("#") and len(header) >= len(columns):
        return body.iloc[:, :len(columns)].set_axis(columns, axis=1), columns
    raise MalformedRow(f"unexpected header {header}, expected {columns}", 1, path)


def _bad_line(values: np.ndarray, ok, path: str) -> MalformedRow:
    for i, value in enumerate(values):
        if not ok(value):
            return MalformedRow(f"cannot parse {value!r}", i + 2, path)
    return MalformedRow("unparseable value", None, path)


def _float_ok(value: str) -> bool:
    try:
        float(value)
        return True
    except ValueError:
        return False


def _int_column(table: pd.DataFrame, name: str, path: str) -> np.ndarray:
    values = table[name].to_numpy(dtype=str)
    ok = np.array([bool(_INTEGER.fullmatch(v.strip())) for v in values], dtype=bool)
    if not ok.all():
        raise _bad_line(values, lambda v: bool(_INTEGER.fullmatch(v.strip())), path)
    return values.astype(np.int64)


def _float_columns(table: pd.DataFrame, names: Sequence[str], path: str) -> np.ndarray:
    out = np.empty((len(table), len(names)))
    for j, name in enumerate(names):
        values = table[name].to_numpy(dtype=str)
        try:
            col = values.astype(np.float64)
        except ValueError:
            raise _bad_line(values, _float_ok, path) from None
        if not np.all(np.isfinite(col)):
            raise _bad_line(values, lambda v: np.isfinite(float(v)), path)
        out[:, j] = col
    return out


def _check_increasing(t_ns: np.ndarray, path: str, strict: bool = True) -> None:
    step = np.diff(t_ns)
    bad = np.flatnonzero(step <= 0 if strict else step < 0)
    if bad.size:
        line = int(bad[0]) + 3
        raise NonMonotonicTimestamps(f"{path}:{line}: timestamp {int(t_ns[bad[0] + 1])} does not increase")


def load_imu(path: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    table, _ = _read_table(path, IMU_COLUMNS)
    t_ns = _int_column(table, "t_ns", path)
    values = _float_columns(table, IMU_COLUMNS[1:], path)
    _check_increasing(t_ns, path)
    return t_ns, values[:, 0:3], values[:, 3:6]


def load_tracks(path: str) -> Tuple[pd.DataFrame, bool]:
    """
    Feature observations sorted by time

    Returns:
        tuple: table with t_ns, fid, u, v and whether the pixels are undistorted
    """
    table, header = _read_table(path, TRACK_COLUMNS, [UNDISTORTED_TRACK_COLUMNS])
    undistorted = header == UNDISTORTED_TRACK_COLUMNS
    if undistorted:
        table = table.rename(columns={"u_undist": "u", "v_undist": "v"})
    t_ns = _int_column(table, "t_ns", path)
    fid = _int_column(table, "fid", path)
    uv = _float_columns(table, ["u", "v"], path)
    _check_increasing(t_ns, path, strict=False)
    keys = pd.DataFrame({"t_ns": t_ns, "fid": fid})
    dup = keys.duplicated()
    if dup.any():
        i = int(np.flatnonzero(dup.to_numpy())[0])
        raise MalformedRow(f"duplicate observation of feature {fid[i]} at {t_ns[i]}", i + 2, path)
    return pd.DataFrame({"t_ns": t_ns, "fid": fid, "u": uv[:, 0], "v": uv[:, 1]}), undistorted


def load_truth(path: str) -> GroundTruth:
    table, _ = _read_table(path, TRUTH_COLUMNS)
    t_ns = _int_column(table, "t_ns", path)
    values = _float_columns(table, TRUTH_COLUMNS[1:], path)
    _check_increasing(t_ns, path)
    # The JPL global-to-IMU quaternion has the components of the Hamilton IMU-to-global one
    q = np.column_stack([values[:, 4], values[:, 5], values[:, 6], values[:, 3]])
    return GroundTruth(t_ns, values[:, 0:3], q, values[:, 7:10])


def _redistort(uv: np.ndarray, calibration: Calibration) -> np.ndarray:
    """Undistorted pixels to the raw pixels the camera model predicts"""
    cam = calibration.camera
    out = np.empty_like(uv)
    for i, (u, v) in enumerate(uv):
        xd, _ = cam.distort(np.array([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy]))
        out[i] = [cam.fx * xd[0] + cam.cx, cam.fy * xd[1] + cam.cy]
    return out


def count_gaps(t_ns: np.ndarray, factor: float = GAP_FACTOR) -> int:
    """Intervals longer than ``factor`` times the median period"""
    if t_ns.size < 3:
        return 0
    dt = np.diff(t_ns)
    return int(np.count_nonzero(dt > factor * np.median(dt)))


def load_sequence(root: str, calibration_path: Optional[str] = None) -> AslSequence:
    """
    Load and synchronize one recorded sequence

    Args:
        root (str): sequence directory
        calibration_path (str): calibration document, defaults to ``root/calibration.json5``

    Returns:
        AslSequence: streams in SI units with a summary (duration, rates, dropouts)

    Raises:
        MissingFile: a required file is absent
        MalformedRow: a row does not parse (line number in the message)
        NonMonotonicTimestamps: timestamps go backwards
        UnitsAmbiguous: pixel convention or calibration units conflict
    """
    calibration = load_calibration(calibration_path or os.path.join(root, CALIBRATION_FILE))
    imu_t_ns, gyro, accel = load_imu(os.path.join(root, IMU_FILE))
    tracks, undistorted = load_tracks(os.path.join(root, TRACK_FILE))
    if calibration.tracks_undistorted and not undistorted:
        raise UnitsAmbiguous("calibration declares undistorted tracks but the track file header is raw")
    uv = tracks[["u", "v"]].to_numpy()
    if undistorted:
        uv = _redistort(uv, calibration)

    cam_path = os.path.join(root, CAM_FILE)
    if os.path.isfile(cam_path):
        cam_table, _ = _read_table(cam_path, ["t_ns"])
        frame_t_ns = _int_column(cam_table, "t_ns", cam_path)
        _check_increasing(frame_t_ns, cam_path)
        unknown = np.setdiff1d(tracks["t_ns"].to_numpy(), frame_t_ns)
        if unknown.size:
            raise MalformedRow(f"track timestamp {int(unknown[0])} is not a listed frame", None,
                               os.path.join(root, TRACK_FILE))
    else:
        frame_t_ns = np.unique(tracks["t_ns"].to_numpy())

    index = {int(t): k for k, t in enumerate(frame_t_ns)}
    frames: List[Dict[int, np.ndarray]] = [{} for _ in frame_t_ns]
    for t, fid, u, v in zip(tracks["t_ns"].to_numpy(), tracks["fid"].to_numpy(), uv[:, 0], uv[:, 1]):
        frames[index[int(t)]][int(fid)] = np.array([u, v])

    truth_path = os.path.join(root, TRUTH_FILE)
    truth = load_truth(truth_path) if os.path.isfile(truth_path) else None
    if truth is None:
        logger.info(f"No ground truth in {root}")

    duration = (imu_t_ns[-1] - imu_t_ns[0]) * 1e-9 if imu_t_ns.size > 1 else 0.0
    summary = {
        "duration_s": float(duration),
        "imu_rate_hz": float((imu_t_ns.size - 1) / duration) if duration > 0 else 0.0,
        "camera_rate_hz": float((frame_t_ns.size - 1) / ((frame_t_ns[-1] - frame_t_ns[0]) * 1e-9))
        if frame_t_ns.size > 1 else 0.0,
        "imu_dropouts": count_gaps(imu_t_ns),
        "frame_dropouts": count_gaps(frame_t_ns),
        "frames": int(frame_t_ns.size),
        "observations": int(len(tracks)),
        "tracks": int(tracks["fid"].nunique()),
        "ground_truth": truth is not None,
    }
    if summary["imu_dropouts"]:
        logger.warning(f"{summary['imu_dropouts']} IMU gaps longer than {GAP_FACTOR:g}x the nominal period")
    logger.info(f"Loaded {root}: {summary['duration_s']:.2f} s, {summary['frames']} frames, "
                f"{summary['tracks']} tracks")
    return AslSequence(imu_t_ns, gyro, accel, frame_t_ns, frames, calibration, truth, summary)


# Writing

def _write_csv(path: str, table: pd.DataFrame) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    table.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_sequence(root: str, imu_t_ns: np.ndarray, gyro: np.ndarray, accel: np.ndarray,
                   frame_t_ns: np.ndarray, frames: Sequence[Dict[int, np.ndarray]],
                   calibration: Calibration, truth: Optional[GroundTruth] = None) -> None:
    """Write a sequence in the layout ``load_sequence`` reads"""
    imu = pd.DataFrame(np.column_stack([gyro, accel]), columns=IMU_COLUMNS[1:])
    imu.insert(0, "t_ns", np.asarray(imu_t_ns, dtype=np.int64))
    _write_csv(os.path.join(root, IMU_FILE), imu)
    _write_csv(os.path.join(root, CAM_FILE), pd.DataFrame({"t_ns": np.asarray(frame_t_ns, dtype=np.int64)}))

    rows = [(int(t), int(fid), float(uv[0]), float(uv[1]))
            for t, obs in zip(frame_t_ns, frames) for fid, uv in sorted(obs.items())]
    tracks = pd.DataFrame(rows, columns=TRACK_COLUMNS).astype({"t_ns": np.int64, "fid": np.int64})
    _write_csv(os.path.join(root, TRACK_FILE), tracks)

    if truth is not None:
        gt = pd.DataFrame({
            "t_ns": np.asarray(truth.t_ns, dtype=np.int64),
            "px": truth.p[:, 0], "py": truth.p[:, 1], "pz": truth.p[:, 2],
            "qw": truth.q[:, 3], "qx": truth.q[:, 0], "qy": truth.q[:, 1], "qz": truth.q[:, 2],
            "vx": truth.v[:, 0], "vy": truth.v[:, 1], "vz": truth.v[:, 2],
        })
        _write_csv(os.path.join(root, TRUTH_FILE), gt)
    write_calibration(os.path.join(root, CALIBRATION_FILE), calibration)
    logger.info(f"Wrote sequence to {root}")


def export_run(run, root: str) -> None:
    """Write a synthetic run (``sim.world.SimulatedRun``) as a sequence"""
    cfg = run.cfg
    # The filter-side noise model is exported so a replay assumes what the simulation assumed
    calibration = Calibration(camera=run.cam, noise=cfg.filter_noise, gravity_magnitude=cfg.gravity_magnitude,
                              imu_rate_hz=float(cfg.imu_rate_hz), camera_rate_hz=float(cfg.camera_rate_hz),
                              pixel_noise=cfg.filter_pixel_sigma)
    truth = GroundTruth(run.truth.t_ns, run.truth.p, run.truth.q, run.truth.v)
    write_sequence(root, run.imu_t_ns, run.gyro, run.accel, run.frame_t_ns, run.frames, calibration, truth)
