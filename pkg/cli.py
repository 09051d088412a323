"""
Command-line entry point: simulate, bench, init-eval and replay.

Each invocation writes its artifacts into a temporary directory next to the
requested output directory and renames it into place once everything is
written, together with a manifest echoing the effective configuration.
Exit codes: 0 success, 1 runtime failure or failed trials, 2 invalid
configuration.
"""

import argparse
import dataclasses
import logging
import os
import shutil
import sys
import tempfile
from typing import Any, Dict, List, Optional, Sequence, Tuple

import json5
import numpy as np
import pandas as pd

from config import Config
from core.errors import DataError, SqrtVinsError
from core.quaternion import angle_deg, quat_to_rot
from core.state import StateBlock, StateVector, nav_value
from dataset import export_run, load_sequence
from initialization import DynamicInitializer
from orchestrator import VinsOrchestrator
from estimators import make_engine
from sensors.imu import gravity_vector
from sim.bench import bench_updates, ratio_series
from sim.init_study import InitOptions, mean_trace, run_init_study
from sim.metrics import absolute_trajectory_error, rmse
from sim.monte_carlo import FilterOptions, run_monte_carlo
from sim.world import SimConfig, TrajectorySpec, prior_std, synthesize
from utils.report_generator import ReportGenerator
from vision.tracks import TrackManager

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


class ConfigError(ValueError):
    """Invalid command-line or configuration-file settings"""


# Configuration

def _override(instance, values: Dict[str, Any], section: str):
    """dataclasses.replace with unknown-key detection and list-to-tuple coercion"""
    names = {f.name: f for f in dataclasses.fields(instance)}
    unknown = sorted(set(values) - set(names))
    if unknown:
        raise ConfigError(f"Unknown keys in config section '{section}': {unknown}")
    coerced = {}
    for key, value in values.items():
        current = getattr(instance, key)
        coerced[key] = tuple(value) if isinstance(current, tuple) and isinstance(value, list) else value
    return dataclasses.replace(instance, **coerced)


def load_config_file(path: Optional[str]) -> Dict[str, Any]:
    if path is None:
        return {}
    if not os.path.isfile(path):
        raise ConfigError(f"Config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json5.load(f)
        except ValueError as e:
            raise ConfigError(f"{path}: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = sorted(set(doc) - {"sim", "trajectory", "filter", "init", "bench"})
    if unknown:
        raise ConfigError(f"{path}: unknown sections {unknown}")
    return doc


def effective_config(args: argparse.Namespace) -> Dict[str, Any]:
    """
    Defaults, then the config file, then command-line flags

    Returns:
        dict: SimConfig, TrajectorySpec, FilterOptions, InitOptions and bench settings
    """
    doc = load_config_file(getattr(args, "config", None))
    excited = args.command == "init-eval"
    spec = TrajectorySpec.excited() if excited else TrajectorySpec()
    cfg = _override(SimConfig(), doc.get("sim", {}), "sim")
    spec = _override(spec, doc.get("trajectory", {}), "trajectory")
    filter_options = _override(FilterOptions(), doc.get("filter", {}), "filter")
    init_options = _override(InitOptions(), doc.get("init", {}), "init")
    bench = {"n_grid": list(Config.BENCH_N_GRID), "m_grid": list(Config.BENCH_M_GRID),
             "repetitions": Config.BENCH_REPETITIONS, **doc.get("bench", {})}

    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
        spec = dataclasses.replace(spec, seed=args.seed)
    if getattr(args, "trials", None) is not None:
        cfg = dataclasses.replace(cfg, trials=args.trials)
        init_options = dataclasses.replace(init_options, trials=args.trials)
    if getattr(args, "precision", None) is not None:
        cfg = dataclasses.replace(cfg, precision=args.precision)
    if getattr(args, "backend", None) is not None:
        cfg = dataclasses.replace(cfg, estimator=args.backend)
    if getattr(args, "duration", None) is not None:
        spec = dataclasses.replace(spec, duration=args.duration)
    if getattr(args, "high_precision_imu", False):
        cfg = cfg.high_precision()
    if getattr(args, "timing", False):
        filter_options = dataclasses.replace(filter_options, timing=True)
    if getattr(args, "no_refine", False):
        init_options = dataclasses.replace(init_options, refine=False, compare_no_refine=False)
    if getattr(args, "windows", None):
        init_options = dataclasses.replace(init_options, windows=tuple(args.windows))

    try:
        Config.validate_config()
        cfg.validate()
        spec.validate()
    except ValueError as e:
        raise ConfigError(str(e)) from e
    return {"sim": cfg, "trajectory": spec, "filter": filter_options, "init": init_options, "bench": bench}


def _config_dict(config: Dict[str, Any]) -> Dict[str, Any]:
    return {k: dataclasses.asdict(v) if dataclasses.is_dataclass(v) else v for k, v in config.items()}


# Subcommands

def cmd_simulate(args: argparse.Namespace, config: Dict[str, Any], report: ReportGenerator) -> Dict[str, Any]:
    """Monte Carlo filter runs; one estimator or the estimator x precision matrix"""
    cfg, spec = config["sim"], config["trajectory"]
    if args.matrix:
        estimators, precisions = list(Config.MATRIX_ESTIMATORS), list(Config.PRECISION_MODES)
    else:
        estimators, precisions = [cfg.estimator], [cfg.precision]

    result = run_monte_carlo(spec, cfg, cfg.trials, estimators, precisions, args.workers, config["filter"])
    report.write_table("metrics.csv", result.steps)
    report.write_table("runs.csv", result.runs)
    report.write_table("summary.csv", result.aggregate)
    report.write_table("updates.csv", result.updates)
    if result.timing is not None:
        report.write_table("timing.csv", result.timing)
    if not result.steps.empty:
        first = result.steps[result.steps["trial"] == 0]
        for (est, prec), rows in first.groupby(["estimator", "precision"], sort=False):
            report.write_plot("cond_trace", f"cond_{est}_{prec}", rows[["frame", "cond"]])
    if args.export:
        export_run(synthesize(spec, cfg), os.path.join(report.out_dir, args.export))
        report.artifacts.append(args.export + "/")

    info = {"trials": cfg.trials, "duration_s": spec.duration, "seed": cfg.seed,
            "estimators": ", ".join(estimators), "precisions": ", ".join(precisions)}
    report.write_text("summary.md", report.generate_simulation_summary(result.aggregate, info, result.failures))
    return {"failures": result.failures}


def _backend_list(value: str) -> List[str]:
    if value == "all":
        return list(Config.BACKENDS)
    names = [v.strip() for v in value.split(",") if v.strip()]
    unknown = sorted(set(names) - set(Config.BACKENDS))
    if unknown or not names:
        raise ConfigError(f"Unknown backends {unknown}; choose from {Config.BACKENDS} or 'all'")
    return names


def cmd_bench(args: argparse.Namespace, config: Dict[str, Any], report: ReportGenerator) -> Dict[str, Any]:
    """Flop table over the (n, m) grid with backend ratio series"""
    bench = config["bench"]
    backends = _backend_list(args.backends)
    table = bench_updates(bench["n_grid"], bench["m_grid"], backends, bench["repetitions"],
                          config["sim"].seed, timing=args.timing)
    timing = table.pop("median_ns") if "median_ns" in table else None
    report.write_table("bench.csv", table)
    if timing is not None:
        report.write_table("timing.csv", pd.concat([table[["n", "m", "backend"]], timing], axis=1))

    ratios = {}
    for label, num, den in (("LLT over P-QR", "llt", "pqr"), ("Carlson over LLT", "carlson", "llt")):
        series = ratio_series(table, num, den)
        if series.empty:
            continue
        name = f"ratio_{num}_{den}"
        ratios[label] = series
        report.write_table(f"{name}.csv", series)
        report.write_plot("bench_ratio", name, series[["m_over_n", "ratio"]])
    report.write_text("summary.md", report.generate_bench_summary(table, ratios))
    return {"failures": []}


def cmd_init_eval(args: argparse.Namespace, config: Dict[str, Any], report: ReportGenerator) -> Dict[str, Any]:
    """Initialization success rates over window sizes"""
    options = config["init"]
    result = run_init_study(config["trajectory"], config["sim"], options, args.workers)
    report.write_table("init_trials.csv", result.trials)
    report.write_table("init_success.csv", result.success)
    trace = mean_trace(result.trace)
    report.write_table("gravity_trace.csv", trace)
    for variant, rows in result.success.groupby("variant", sort=True):
        report.write_plot("init_success", f"success_{variant}",
                          rows[["window"] + [c for c in rows.columns if c.startswith("success_")]])
    if not trace.empty:
        for (window, variant), rows in trace.groupby(["window", "variant"], sort=True):
            report.write_plot("gravity_trace", f"gravity_{variant}_{window:g}", rows[["iteration", "gravity_error_deg"]])

    info = {"trials": options.trials, "windows": ", ".join(f"{w:g}" for w in options.windows),
            "horizon_s": options.horizon, "seed": config["trajectory"].seed}
    report.write_text("summary.md", report.generate_init_summary(result.success, info))
    failures = [{"trial": int(r.trial), "window": float(r.window), "variant": r.variant, "error": r.error}
                for r in result.errors.itertuples()] if not result.errors.empty else []
    # Failed initializations are part of the measured success rate, not run failures
    return {"failures": [], "init_failures": failures}


def _replay_start(args: argparse.Namespace, sequence, cfg: SimConfig) -> Tuple[StateVector, np.ndarray, float, List[int]]:
    """Initial filter state: ground truth at the first frame or the dynamic initializer"""
    frames = sequence.frame_list()
    if args.init == "truth":
        if sequence.truth is None:
            raise DataError("--init truth needs ground truth in the sequence")
        t_ns = int(sequence.frame_t_ns[0])
        i = int(np.searchsorted(sequence.truth.t_ns, t_ns))
        if i >= sequence.truth.t_ns.size or sequence.truth.t_ns[i] != t_ns:
            raise DataError(f"No ground truth sample at the first frame ({t_ns} ns)")
        value = nav_value(sequence.truth.q[i], sequence.truth.p[i], sequence.truth.v[i])
        return StateVector([StateBlock("nav", "imu", value)]), np.diag(prior_std()), frames[0][0], []

    calibration = sequence.calibration
    initializer = DynamicInitializer(calibration.camera, calibration.noise, calibration.gravity_magnitude,
                                     window=args.window, refine=not args.no_refine)
    window = [f for f in frames if f[0] <= frames[0][0] + args.window + 1e-9]
    outcome = initializer.initialize(window, sequence.imu)
    if not outcome["success"]:
        raise SqrtVinsError(f"Initialization failed: {outcome['error']}")
    solution = outcome["solution"]
    vector, U, fids = solution.to_filter_state(cfg.max_slam_features)
    return vector, U, solution.keyframe_times[-1], fids


def cmd_replay(args: argparse.Namespace, config: Dict[str, Any], report: ReportGenerator) -> Dict[str, Any]:
    """Initialize and filter a recorded sequence; trajectory error when ground truth exists"""
    cfg = config["sim"]
    sequence = load_sequence(args.dataset, args.calibration)
    calibration = sequence.calibration
    vector, U, t_start, fids = _replay_start(args, sequence, cfg)

    orchestrator = VinsOrchestrator(
        make_engine(cfg.estimator, cfg.precision),
        calibration.camera,
        noise=calibration.noise,
        gravity=gravity_vector(calibration.gravity_magnitude),
        tracks=TrackManager(cfg.max_clones, cfg.max_msckf_features, cfg.max_slam_features),
        chi2_confidence=config["filter"].chi2_confidence,
        chi2_inflation=config["filter"].chi2_inflation,
        pixel_sigma=calibration.pixel_noise,
    )
    orchestrator.start(vector, U, t_start)
    for fid in fids:
        orchestrator.tracks.promote(fid)

    imu = sequence.imu
    # the initializer already consumed its last keyframe
    first_inclusive = args.init == "truth"
    rows = []
    for t_ns, (t, obs) in zip(sequence.frame_t_ns, sequence.frame_list()):
        if t < t_start - 1e-9 or (not first_inclusive and t <= t_start + 1e-9):
            continue
        result = orchestrator.process_frame(t, obs, imu)
        q, p, v = result.nav_value[0:4], result.nav_value[4:7], result.nav_value[7:10]
        rows.append({"t_ns": int(t_ns), "px": p[0], "py": p[1], "pz": p[2],
                     "qw": q[3], "qx": q[0], "qy": q[1], "qz": q[2], "vx": v[0], "vy": v[1], "vz": v[2]})
    trajectory = pd.DataFrame(rows)
    report.write_table("trajectory.csv", trajectory)
    report.write_table("updates.csv", pd.DataFrame(orchestrator.update_records))
    if not trajectory.empty:
        report.write_plot("trajectory", "trajectory", trajectory[["px", "py", "pz"]])

    metrics = None
    if sequence.truth is None:
        logger.warning("Sequence has no ground truth; trajectory error omitted")
    elif len(trajectory) >= 3:
        truth = sequence.truth
        est_p = trajectory[["px", "py", "pz"]].to_numpy()
        true_p = truth.positions_at(trajectory["t_ns"].to_numpy())
        se3 = absolute_trajectory_error(est_p, true_p, with_scale=False)
        sim3 = absolute_trajectory_error(est_p, true_p, with_scale=True)
        idx = np.clip(np.searchsorted(truth.t_ns, trajectory["t_ns"].to_numpy()), 0, truth.t_ns.size - 1)
        est_q = trajectory[["qx", "qy", "qz", "qw"]].to_numpy()
        orientation = [angle_deg(quat_to_rot(truth.q[i]), quat_to_rot(q)) for i, q in zip(idx, est_q)]
        metrics = {
            "ate_se3_m": se3["ate"],
            "ate_sim3_m": sim3["ate"],
            "scale": sim3["scale"],
            "scale_error_pct": sim3["scale_error_pct"],
            "rmse_position_m": rmse(np.linalg.norm(est_p - true_p, axis=1)),
            "rmse_orientation_deg": rmse(np.array(orientation)),
            "frames": int(len(trajectory)),
        }
        report.export_to_json(metrics, "replay_metrics.json")
    report.write_text("summary.md", report.generate_replay_summary(sequence.summary, metrics))
    return {"failures": [], "sequence": sequence.summary}


COMMANDS = {
    "simulate": cmd_simulate,
    "bench": cmd_bench,
    "init-eval": cmd_init_eval,
    "replay": cmd_replay,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sqrtvins", description="Square-root visual-inertial estimation toolkit")
    parser.add_argument("--log-level", default=None, help="logging level (default from SQRTVINS_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON5 configuration file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory (default: $SQRTVINS_OUTPUT_ROOT/<command>)")
        p.add_argument("--precision", choices=Config.PRECISION_MODES)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--timing", action="store_true", help="also write wall-clock timing.csv")

    p = sub.add_parser("simulate", help="Monte Carlo filter runs on synthetic data")
    common(p)
    p.add_argument("--trials", type=int)
    p.add_argument("--backend", choices=Config.ESTIMATORS)
    p.add_argument("--matrix", action="store_true", help="estimator x precision matrix")
    p.add_argument("--duration", type=float)
    p.add_argument("--high-precision-imu", action="store_true")
    p.add_argument("--export", help="also write trial 0 as a sequence under this subdirectory")

    p = sub.add_parser("bench", help="update flop counts and timing")
    common(p)
    p.add_argument("--backends", default="llt,pqr", help="comma-separated backends or 'all'")

    p = sub.add_parser("init-eval", help="initialization success-rate study")
    common(p)
    p.add_argument("--trials", type=int)
    p.add_argument("--windows", type=float, nargs="+")
    p.add_argument("--no-refine", action="store_true", help="closed-form solution only")

    p = sub.add_parser("replay", help="initialize and filter a recorded sequence")
    common(p)
    p.add_argument("dataset", help="sequence root directory")
    p.add_argument("--calibration", help="calibration document (default: <dataset>/calibration.json5)")
    p.add_argument("--backend", choices=Config.ESTIMATORS)
    p.add_argument("--init", choices=["dynamic", "truth"], default="dynamic")
    p.add_argument("--window", type=float, default=0.5)
    p.add_argument("--no-refine", action="store_true")
    return parser


def _manifest(args: argparse.Namespace, config: Dict[str, Any], out_dir: str) -> Dict[str, Any]:
    cfg = config["sim"]
    return {
        "subcommand": args.command,
        "config_path": getattr(args, "config", None),
        "seed": cfg.seed,
        "output_dir": out_dir,
        "precision": cfg.precision,
        "backend": cfg.estimator,
        "arguments": {k: v for k, v in sorted(vars(args).items()) if k not in ("command",)},
        "effective_config": _config_dict(config),
    }


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse arguments, run one subcommand and publish its output directory

    Returns:
        int: process exit code
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=(args.log_level or Config.LOG_LEVEL).upper(), format=Config.LOG_FORMAT)

    try:
        config = effective_config(args)
        if args.command == "bench":
            _backend_list(args.backends)
    except ConfigError as e:
        logger.error(f"Invalid configuration: {str(e)}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = os.path.abspath(args.out or os.path.join(Config.OUTPUT_ROOT, args.command))
    parent = os.path.dirname(out_dir)
    os.makedirs(parent, exist_ok=True)
    staging = tempfile.mkdtemp(prefix=f".{os.path.basename(out_dir)}.", dir=parent)
    report = ReportGenerator(staging)
    manifest = _manifest(args, config, args.out or os.path.join(Config.OUTPUT_ROOT, args.command))

    try:
        outcome = COMMANDS[args.command](args, config, report)
    except ConfigError as e:
        shutil.rmtree(staging, ignore_errors=True)
        logger.error(f"Invalid configuration: {str(e)}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (SqrtVinsError, ValueError, OSError) as e:
        shutil.rmtree(staging, ignore_errors=True)
        logger.error(f"{args.command} failed: {type(e).__name__}: {str(e)}")
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME

    manifest["failures"] = outcome.get("failures", [])
    manifest.update({k: v for k, v in outcome.items() if k != "failures"})
    manifest["status"] = "failed_trials" if manifest["failures"] else "ok"
    manifest["artifacts"] = sorted(report.artifacts) + ["manifest.json"]
    report.export_to_json(manifest, "manifest.json")

    if os.path.exists(out_dir):
        shutil.rmtree(out_dir)
    os.replace(staging, out_dir)
    logger.info(f"Wrote {len(report.artifacts)} artifacts to {out_dir}")
    return EXIT_RUNTIME if manifest["failures"] else EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
