"""
Initialization study: success rates of the dynamic initializer over window
sizes, with and without iterative refinement.

A trial initializes on a short window of a synthetic excited run, scores
gravity, velocity and scale, then hands the solution to a square-root filter
and tracks for a fixed horizon. Success at a threshold means the
initializer returned a converged solution and the post-initialization
trajectory error stayed below it.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import Config
from core.errors import SqrtVinsError
from core.quaternion import quat_to_rot
from initialization import DynamicInitializer, InitSolution
from sensors.imu import gravity_vector
from sim.metrics import absolute_trajectory_error, gravity_error_deg, scale_error_percent, umeyama
from sim.monte_carlo import build_orchestrator
from sim.world import NS_PER_S, SimConfig, SimulatedRun, TrajectorySpec, synthesize

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class InitOptions:
    """Sweep settings of the initialization study"""
    windows: Tuple[float, ...] = tuple(Config.INIT_WINDOWS)
    ate_thresholds: Tuple[float, ...] = tuple(Config.INIT_ATE_THRESHOLDS)
    gravity_threshold_deg: float = Config.INIT_GRAVITY_THRESHOLD_DEG
    velocity_threshold: float = Config.INIT_VELOCITY_THRESHOLD
    horizon: float = Config.INIT_TRACKING_HORIZON
    refine: bool = True
    compare_no_refine: bool = True
    trials: int = 20
    camera_rate_hz: int = 20
    start_spread: float = 2.0
    track: bool = True


def variant_name(refine: bool) -> str:
    return "refined" if refine else "no_refine"


def _ns(t: float) -> int:
    return int(round(t * NS_PER_S))


def _local_gravity_and_velocity(value: np.ndarray, g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Gravity and velocity expressed in the IMU frame of a navigation value"""
    R = quat_to_rot(value[0:4])
    return R @ g, R @ value[7:10]


def score_solution(solution: InitSolution, run: SimulatedRun) -> Dict[str, Any]:
    """
    Gravity, velocity and scale errors of an initialization against the truth

    Gravity and velocity are compared in the first keyframe's IMU frame,
    which is free of the unobservable yaw and position.
    """
    g = gravity_vector(run.cfg.gravity_magnitude)
    kf0 = solution.keyframe_names[0]
    t0 = _ns(solution.keyframe_times[0])
    g_est, v_est = _local_gravity_and_velocity(solution.vector.block(kf0).value, g)
    g_true, v_true = _local_gravity_and_velocity(run.truth.nav_at(t0), g)

    est_p = np.stack([solution.vector.block(name).position for name in solution.keyframe_names])
    true_p = np.stack([run.truth.nav_at(_ns(t))[4:7] for t in solution.keyframe_times])
    try:
        _, _, s = umeyama(est_p - est_p[0], true_p - true_p[0], with_scale=True)
        scale_error = scale_error_percent(s)
    except (ValueError, np.linalg.LinAlgError, ZeroDivisionError):
        scale_error = float("nan")

    trace = []
    for entry in solution.trace:
        g_it, _ = _local_gravity_and_velocity(entry["kf0"], g)
        trace.append({"iteration": entry["iteration"], "cost": entry["cost"],
                      "gravity_error_deg": gravity_error_deg(g_it, g_true)})
    return {
        "gravity_error_deg": gravity_error_deg(g_est, g_true),
        "velocity_error": float(np.linalg.norm(v_est - v_true)),
        "scale_error_pct": scale_error,
        "iterations": solution.iterations,
        "converged": solution.converged,
        "trace": trace,
    }


def track_after_init(solution: InitSolution, run: SimulatedRun, horizon: float,
                     estimator: str = "llt") -> Dict[str, Any]:
    """Filter from the initialized state over a horizon and return the SE(3)-aligned ATE"""
    vector, U, fids = solution.to_filter_state(run.cfg.max_slam_features)
    orchestrator = build_orchestrator(run, estimator, "double")
    t_start = solution.keyframe_times[-1]
    orchestrator.start(vector, U, t_start)
    for fid in fids:
        orchestrator.tracks.promote(fid)

    est, true = [], []
    imu = run.imu
    for t, obs in run.frame_list():
        if t <= t_start + 1e-9 or t > t_start + horizon + 1e-9:
            continue
        result = orchestrator.process_frame(t, obs, imu)
        est.append(result.nav_value[4:7])
        true.append(run.truth.nav_at(_ns(t))[4:7])
    if len(est) < 3:
        raise SqrtVinsError(f"Tracking horizon produced only {len(est)} frames")
    ate = absolute_trajectory_error(np.array(est), np.array(true), with_scale=False)
    return {"ate": ate["ate"], "tracked_frames": len(est)}


def run_init_trial(spec: TrajectorySpec, cfg: SimConfig, window: float, refine: bool,
                   seed: int, options: Optional[InitOptions] = None, trial: int = 0) -> Dict[str, Any]:
    """
    One initialization attempt and its post-initialization tracking

    Returns:
        dict: trial identifiers, error metrics, per-threshold success flags and
        the per-iteration gravity trace
    """
    options = options or InitOptions()
    base = {"trial": trial, "seed": seed, "window": window, "variant": variant_name(refine)}
    rng = np.random.default_rng(seed)
    run = synthesize(replace(spec, seed=seed), replace(cfg, camera_rate_hz=options.camera_rate_hz))
    frames = run.frame_list()
    start_choices = [k for k, (t, _) in enumerate(frames) if t <= options.start_spread]
    k0 = int(rng.choice(start_choices)) if start_choices else 0
    t0 = frames[k0][0]
    window_frames = [f for f in frames[k0:] if f[0] <= t0 + window + 1e-9]

    truth0 = run.truth.nav_at(int(run.frame_t_ns[k0]))
    initializer = DynamicInitializer(run.cam, cfg.filter_noise, cfg.gravity_magnitude,
                                     window=window, refine=refine)
    outcome = initializer.initialize(window_frames, run.imu, truth0[10:13], truth0[13:16])
    row: Dict[str, Any] = {**base, "initialized": outcome["success"]}
    if not outcome["success"]:
        row.update({"error": outcome["error"], "error_type": outcome["error_type"], "trace": []})
        row.update({f"success_{thr:g}": False for thr in options.ate_thresholds})
        row["gravity_success"] = False
        return row

    solution = outcome["solution"]
    row.update(score_solution(solution, run))
    row["gravity_success"] = bool(row["gravity_error_deg"] < options.gravity_threshold_deg
                                  and row["velocity_error"] < options.velocity_threshold)
    row["ate"] = float("nan")
    if options.track:
        try:
            row.update(track_after_init(solution, run, options.horizon))
        except SqrtVinsError as e:
            logger.error(f"Tracking after initialization failed (trial {trial}, window {window}): {str(e)}")
            row.update({"error": str(e), "error_type": type(e).__name__})
    for thr in options.ate_thresholds:
        row[f"success_{thr:g}"] = bool(row["converged"] and np.isfinite(row["ate"]) and row["ate"] < thr)
    return row


@dataclass
class InitStudyResult:
    trials: pd.DataFrame
    success: pd.DataFrame
    trace: pd.DataFrame
    errors: pd.DataFrame = field(default_factory=pd.DataFrame)


def success_table(trials: pd.DataFrame, thresholds: Sequence[float]) -> pd.DataFrame:
    """Success rates and mean errors per window and variant"""
    columns = {f"success_{thr:g}": (f"success_{thr:g}", "mean") for thr in thresholds}
    table = trials.groupby(["window", "variant"], sort=True).agg(
        trials=("trial", "count"),
        initialized=("initialized", "mean"),
        gravity_success=("gravity_success", "mean"),
        **columns,
    ).reset_index()
    for name in ("gravity_error_deg", "velocity_error", "scale_error_pct"):
        if name in trials:
            table[f"mean_{name}"] = trials.groupby(["window", "variant"], sort=True)[name].mean().to_numpy()
    return table


def run_init_study(spec: TrajectorySpec, cfg: SimConfig, options: Optional[InitOptions] = None,
                   workers: int = 1) -> InitStudyResult:
    """
    Sweep window sizes and the refinement switch over seeded trials

    Trial i of every cell uses seed ``spec.seed + i``, so refined and
    unrefined variants see the same data.
    """
    options = options or InitOptions()
    variants = [options.refine] + ([False] if options.refine and options.compare_no_refine else [])
    tasks = [(w, v, i) for w in options.windows for v in variants for i in range(options.trials)]
    logger.info(f"Initialization study: {len(options.windows)} windows x {len(variants)} variants x "
                f"{options.trials} trials")

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        rows = list(pool.map(
            lambda task: run_init_trial(spec, cfg, task[0], task[1], spec.seed + task[2], options, task[2]),
            tasks))

    trace_rows: List[Dict[str, Any]] = []
    for row in rows:
        for entry in row.pop("trace", []):
            trace_rows.append({"window": row["window"], "variant": row["variant"], "trial": row["trial"], **entry})
    trials = pd.DataFrame(rows).sort_values(["window", "variant", "trial"], kind="stable").reset_index(drop=True)
    errors = trials[~trials["initialized"]] if "initialized" in trials else pd.DataFrame()
    if not errors.empty:
        logger.warning(f"{len(errors)} of {len(trials)} initialization attempts failed")
    trace = pd.DataFrame(trace_rows)
    return InitStudyResult(trials, success_table(trials, options.ate_thresholds), trace, errors)


def mean_trace(trace: pd.DataFrame) -> pd.DataFrame:
    """
    Average gravity error per iteration, window and variant

    A trial that converged early holds its last value for the remaining
    iterations, so every iteration averages over the same trials.
    """
    if trace.empty:
        return trace
    wide = (trace.pivot_table(index=["window", "variant", "trial"], columns="iteration",
                              values="gravity_error_deg", aggfunc="last")
            .sort_index(axis=1).ffill(axis=1))
    return (wide.groupby(level=["window", "variant"], sort=True).mean()
            .stack().rename("gravity_error_deg").reset_index())
