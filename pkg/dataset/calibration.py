"""
Calibration documents: intrinsics, extrinsics, IMU noise and gravity as a
JSON5 key-value file with explicit unit suffixes.

Every numeric quantity is named ``<quantity>_<unit>``. A quantity without a
unit suffix, or given twice in different units, is rejected.

Example::

    {
      camera: {model: "radtan", fx_px: 458.654, fy_px: 457.296, cx_px: 367.215, cy_px: 248.375,
               coeffs: [-0.283, 0.074, 0.0002, 0.00002], width_px: 752, height_px: 480,
               time_offset_s: 0.0},
      extrinsics: {R_CI: [[0, -1, 0], [0, 0, -1], [1, 0, 0]], p_IinC_m: [0.0, 0.02, -0.05]},
      imu: {gyro_noise_rad_s_sqrthz: 2e-4, gyro_walk_rad_s2_sqrthz: 2e-5,
            accel_noise_m_s2_sqrthz: 5e-4, accel_walk_m_s3_sqrthz: 4e-4, rate_hz: 400},
      gravity_m_s2: 9.81,
      tracks_undistorted: false,
    }
"""

import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import json5
import numpy as np

from config import Config
from core.errors import DataError, MissingFile, UnitsAmbiguous
from core.quaternion import quat_to_rot
from sensors.camera import CameraModel
from sensors.imu import NoiseSpec

logger = logging.getLogger(__name__)

# quantity -> accepted unit suffixes and their factor to SI
UNITS: Dict[str, Dict[str, float]] = {
    "fx": {"px": 1.0},
    "fy": {"px": 1.0},
    "cx": {"px": 1.0},
    "cy": {"px": 1.0},
    "width": {"px": 1.0},
    "height": {"px": 1.0},
    "time_offset": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9},
    "p_IinC": {"m": 1.0, "mm": 1e-3, "cm": 1e-2},
    "gyro_noise": {"rad_s_sqrthz": 1.0, "deg_s_sqrthz": np.pi / 180.0},
    "gyro_walk": {"rad_s2_sqrthz": 1.0, "deg_s2_sqrthz": np.pi / 180.0},
    "accel_noise": {"m_s2_sqrthz": 1.0, "mg_sqrthz": 9.80665e-3},
    "accel_walk": {"m_s3_sqrthz": 1.0},
    "rate": {"hz": 1.0},
    "pixel_noise": {"px": 1.0},
    "gravity": {"m_s2": 1.0},
}

# Keys that carry no unit
UNITLESS = {"model", "coeffs", "R_CI", "q_CI", "tracks_undistorted"}


@dataclass(frozen=True)
class Calibration:
    """Parsed calibration in SI units"""
    camera: CameraModel
    noise: NoiseSpec
    gravity_magnitude: float = Config.GRAVITY_MAGNITUDE
    imu_rate_hz: Optional[float] = None
    camera_rate_hz: Optional[float] = None
    tracks_undistorted: bool = False
    pixel_noise: float = Config.PIXEL_NOISE


def _split_key(key: str) -> Tuple[Optional[str], Optional[str]]:
    """(quantity, unit) of a suffixed key, longest quantity name first"""
    for quantity in sorted(UNITS, key=len, reverse=True):
        if key == quantity:
            return quantity, None
        if key.startswith(quantity + "_"):
            return quantity, key[len(quantity) + 1:]
    return None, None


def read_section(section: Dict[str, Any], name: str) -> Dict[str, Any]:
    """
    Convert one section's suffixed keys to SI values keyed by quantity

    Raises:
        UnitsAmbiguous: missing or unknown unit, or a quantity given twice
    """
    values: Dict[str, Any] = {}
    for key, raw in section.items():
        if key in UNITLESS:
            values[key] = raw
            continue
        quantity, unit = _split_key(key)
        if quantity is None:
            logger.warning(f"Ignoring unknown calibration key {name}.{key}")
            continue
        if unit is None:
            raise UnitsAmbiguous(f"{name}.{key} has no unit suffix; use one of "
                                 f"{[quantity + '_' + u for u in UNITS[quantity]]}")
        if unit not in UNITS[quantity]:
            raise UnitsAmbiguous(f"{name}.{key}: unknown unit '{unit}' for {quantity}")
        if quantity in values:
            raise UnitsAmbiguous(f"{name}: {quantity} given more than once")
        factor = UNITS[quantity][unit]
        values[quantity] = (np.asarray(raw, dtype=np.float64) * factor if isinstance(raw, list)
                            else float(raw) * factor)
    return values


def _require(values: Dict[str, Any], name: str, *keys: str) -> None:
    missing = [k for k in keys if k not in values]
    if missing:
        raise DataError(f"Calibration section '{name}' is missing {missing}")


def calibration_from_dict(doc: Dict[str, Any]) -> Calibration:
    """Build a Calibration from a parsed document"""
    for section in ("camera", "extrinsics", "imu"):
        if not isinstance(doc.get(section), dict):
            raise DataError(f"Calibration document has no '{section}' section")
    cam = read_section(doc["camera"], "camera")
    ext = read_section(doc["extrinsics"], "extrinsics")
    imu = read_section(doc["imu"], "imu")
    top = read_section({k: v for k, v in doc.items() if not isinstance(v, dict)}, "calibration")

    _require(cam, "camera", "fx", "fy", "cx", "cy")
    _require(imu, "imu", "gyro_noise", "gyro_walk", "accel_noise", "accel_walk")
    _require(ext, "extrinsics", "p_IinC")
    if ("R_CI" in ext) == ("q_CI" in ext):
        raise UnitsAmbiguous("extrinsics must give exactly one of R_CI or q_CI")
    if "R_CI" in ext:
        R_CI = np.asarray(ext["R_CI"], dtype=np.float64).reshape(3, 3)
    else:
        R_CI = quat_to_rot(np.asarray(ext["q_CI"], dtype=np.float64))
    if not np.allclose(R_CI @ R_CI.T, np.eye(3), atol=1e-6):
        raise DataError("extrinsics.R_CI is not a rotation matrix")

    camera = CameraModel(
        fx=cam["fx"], fy=cam["fy"], cx=cam["cx"], cy=cam["cy"],
        distortion=cam.get("model", "radtan"),
        coeffs=tuple(cam.get("coeffs", (0.0, 0.0, 0.0, 0.0))),
        R_CI=R_CI,
        p_IinC=np.asarray(ext["p_IinC"], dtype=np.float64),
        width=int(cam.get("width", 752)),
        height=int(cam.get("height", 480)),
        time_offset=float(cam.get("time_offset", 0.0)),
    )
    noise = NoiseSpec(imu["gyro_noise"], imu["accel_noise"], imu["gyro_walk"], imu["accel_walk"])
    return Calibration(
        camera=camera,
        noise=noise,
        gravity_magnitude=float(top.get("gravity", Config.GRAVITY_MAGNITUDE)),
        imu_rate_hz=imu.get("rate"),
        camera_rate_hz=cam.get("rate"),
        tracks_undistorted=bool(top.get("tracks_undistorted", False)),
        pixel_noise=float(cam.get("pixel_noise", Config.PIXEL_NOISE)),
    )


def load_calibration(path: str) -> Calibration:
    """
    Parse a calibration document

    Raises:
        MissingFile: path does not exist
        DataError: the document does not parse or misses a section
        UnitsAmbiguous: a quantity without or with conflicting units
    """
    if not os.path.isfile(path):
        raise MissingFile(f"Calibration file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json5.load(f)
        except ValueError as e:
            raise DataError(f"{path}: {e}") from e
    calibration = calibration_from_dict(doc)
    logger.info(f"Loaded calibration from {path}")
    return calibration


def calibration_to_dict(calibration: Calibration) -> Dict[str, Any]:
    """Document form with SI unit suffixes; floats keep full precision"""
    cam = calibration.camera
    noise = calibration.noise
    camera: Dict[str, Any] = {
        "model": cam.distortion,
        "fx_px": cam.fx, "fy_px": cam.fy, "cx_px": cam.cx, "cy_px": cam.cy,
        "coeffs": [float(c) for c in cam.coeffs],
        "width_px": int(cam.width), "height_px": int(cam.height),
        "time_offset_s": float(cam.time_offset),
        "pixel_noise_px": float(calibration.pixel_noise),
    }
    if calibration.camera_rate_hz is not None:
        camera["rate_hz"] = float(calibration.camera_rate_hz)
    imu: Dict[str, Any] = {
        "gyro_noise_rad_s_sqrthz": noise.sigma_g,
        "gyro_walk_rad_s2_sqrthz": noise.sigma_wg,
        "accel_noise_m_s2_sqrthz": noise.sigma_a,
        "accel_walk_m_s3_sqrthz": noise.sigma_wa,
    }
    if calibration.imu_rate_hz is not None:
        imu["rate_hz"] = float(calibration.imu_rate_hz)
    return {
        "camera": camera,
        "extrinsics": {"R_CI": cam.R_CI.tolist(), "p_IinC_m": cam.p_IinC.tolist()},
        "imu": imu,
        "gravity_m_s2": float(calibration.gravity_magnitude),
        "tracks_undistorted": bool(calibration.tracks_undistorted),
    }


def write_calibration(path: str, calibration: Calibration) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(json5.dumps(calibration_to_dict(calibration), indent=2))
        f.write("\n")
