"""
Monte Carlo execution of the sliding-window filter over synthetic runs.

Each trial synthesizes one run and feeds the identical streams to every
requested estimator and precision, so cells of the estimator matrix are
paired. Trials fan out over worker threads; results are re-sorted before
aggregation so the output does not depend on scheduling.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from config import Config
from core.errors import SqrtVinsError
from core.flops import FlopCounter
from estimators import make_engine
from orchestrator import VinsOrchestrator
from sensors.imu import gravity_vector
from sim.metrics import RunMetrics
from sim.world import SimConfig, SimulatedRun, TrajectorySpec, initial_state, synthesize
from vision.tracks import TrackManager

logger = logging.getLogger(__name__)

NAV_DIM = 15


@dataclass(frozen=True)
class FilterOptions:
    """Gating and recording settings shared by every trial"""
    chi2_confidence: float = Config.CHI2_CONFIDENCE
    chi2_inflation: float = Config.CHI2_INFLATION
    perturb_initial: bool = True
    timing: bool = False


@dataclass
class MonteCarloResult:
    """Tables produced by a Monte Carlo study"""
    steps: pd.DataFrame
    runs: pd.DataFrame
    aggregate: pd.DataFrame
    updates: pd.DataFrame
    timing: Optional[pd.DataFrame] = None
    failures: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def build_orchestrator(run: SimulatedRun, estimator: str, precision: str,
                       options: Optional[FilterOptions] = None) -> VinsOrchestrator:
    """Fresh engine and track manager configured from the run's SimConfig"""
    options = options or FilterOptions()
    cfg = run.cfg
    tracks = TrackManager(cfg.max_clones, cfg.max_msckf_features, cfg.max_slam_features)
    return VinsOrchestrator(
        make_engine(estimator, precision),
        run.cam,
        noise=cfg.filter_noise,
        gravity=gravity_vector(cfg.gravity_magnitude),
        tracks=tracks,
        chi2_confidence=options.chi2_confidence,
        chi2_inflation=options.chi2_inflation,
        record_covariance=True,
        pixel_sigma=cfg.filter_pixel_sigma,
    )


def run_trial(run: SimulatedRun, estimator: str, precision: str, seed: int,
              options: Optional[FilterOptions] = None, trial: int = 0) -> Dict[str, Any]:
    """
    Filter one synthetic run from a prior drawn around the truth

    Args:
        run (SimulatedRun): streams and ground truth
        estimator (str): "ekf", "srif" or an update backend
        precision (str): "single" or "double"
        seed (int): seed of the initial-state perturbation
        options (FilterOptions): gating and recording settings
        trial (int): trial index stamped on every row

    Returns:
        dict: success flag, per-frame rows, update records and the run summary
    """
    options = options or FilterOptions()
    base = {"trial": trial, "seed": seed, "estimator": estimator, "precision": precision}
    try:
        perturb = options.perturb_initial and run.cfg.noise_scale > 0
        vector, U = initial_state(run, np.random.default_rng(seed) if perturb else None)
        orchestrator = build_orchestrator(run, estimator, precision, options)
        frames = run.frame_list()
        orchestrator.start(vector, U, frames[0][0])
        imu = run.imu

        metrics = RunMetrics(estimator, precision)
        timing: List[Dict[str, Any]] = []
        for k, (t, obs) in enumerate(frames):
            counter = FlopCounter()
            start = time.perf_counter_ns()
            result = orchestrator.process_frame(t, obs, imu, counter=counter)
            elapsed = time.perf_counter_ns() - start
            record = orchestrator.update_records[-1]
            metrics.add(k, t, run.truth.nav_at(int(run.frame_t_ns[k])), result.nav_value,
                        result.nav_covariance, record["cond_C"], record["flops"], result.m)
            if options.timing:
                timing.append({**base, "frame": k, "wall_ns": int(elapsed)})

        summary = {**orchestrator.summary(), **metrics.summary(), **base}
        summary["nees_ratio"] = summary["mean_nees"] / NAV_DIM
        return {
            **base,
            "success": True,
            "rows": [{**base, **row} for row in metrics.rows],
            "updates": [{**base, **rec} for rec in orchestrator.update_records],
            "timing": timing,
            "summary": summary,
        }
    except SqrtVinsError as e:
        logger.error(f"Trial {trial} ({estimator}/{precision}) failed: {str(e)}")
        return {**base, "success": False, "error": str(e), "error_type": type(e).__name__}


def _trial_run(spec: TrajectorySpec, cfg: SimConfig, trial: int) -> SimulatedRun:
    return synthesize(replace(spec, seed=spec.seed + trial), cfg)


def aggregate_runs(runs: pd.DataFrame) -> pd.DataFrame:
    """Mean errors and consistency per estimator and precision"""
    if runs.empty:
        return pd.DataFrame(columns=["estimator", "precision", "trials", "rmse_orientation_deg",
                                     "rmse_position_m", "mean_nees", "nees_ratio", "max_cond"])
    grouped = runs.groupby(["estimator", "precision"], sort=False)
    table = grouped.agg(
        trials=("trial", "count"),
        rmse_orientation_deg=("rmse_orientation_deg", "mean"),
        rmse_position_m=("rmse_position_m", "mean"),
        mean_nees=("mean_nees", "mean"),
        nees_ratio=("nees_ratio", "mean"),
        max_cond=("max_cond", "max"),
        failed_updates=("failed_updates", "sum"),
    ).reset_index()
    return table


def run_monte_carlo(spec: TrajectorySpec, cfg: SimConfig, trials: Optional[int] = None,
                    estimators: Optional[Sequence[str]] = None,
                    precisions: Optional[Sequence[str]] = None,
                    workers: int = 1,
                    options: Optional[FilterOptions] = None) -> MonteCarloResult:
    """
    Independent seeded trials over an estimator x precision matrix

    Trial i synthesizes with seed ``spec.seed + i`` and perturbs the initial
    state with ``cfg.seed + i``. A failing trial is recorded, never raised.

    Returns:
        MonteCarloResult: per-step, per-run, aggregate and update tables
    """
    trials = cfg.trials if trials is None else trials
    if trials < 1:
        raise ValueError("trials must be at least 1")
    estimators = list(estimators or [cfg.estimator])
    precisions = list(precisions or [cfg.precision])
    options = options or FilterOptions()
    logger.info(f"Monte Carlo: {trials} trials x {len(estimators)} estimators x {len(precisions)} precisions")

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        runs = list(pool.map(lambda i: _trial_run(spec, cfg, i), range(trials)))
        tasks = [(i, est, prec) for i in range(trials) for est in estimators for prec in precisions]
        results = list(pool.map(
            lambda task: run_trial(runs[task[0]], task[1], task[2], cfg.seed + task[0], options, task[0]),
            tasks))

    order = {(i, est, prec): k for k, (i, est, prec) in enumerate(tasks)}
    results.sort(key=lambda r: order[(r["trial"], r["estimator"], r["precision"])])
    ok = [r for r in results if r["success"]]
    failures = [{k: r[k] for k in ("trial", "seed", "estimator", "precision", "error", "error_type")}
                for r in results if not r["success"]]
    if failures:
        logger.warning(f"{len(failures)} of {len(results)} trials failed")

    steps = pd.DataFrame([row for r in ok for row in r["rows"]])
    run_table = pd.DataFrame([r["summary"] for r in ok])
    updates = pd.DataFrame([rec for r in ok for rec in r["updates"]])
    timing = pd.DataFrame([row for r in ok for row in r["timing"]]) if options.timing else None
    return MonteCarloResult(steps, run_table, aggregate_runs(run_table), updates, timing, failures)
