"""
Square-root VINS toolkit - simulation, metrics and studies
"""

from sim.bench import bench_updates, crossover, ratio_series
from sim.init_study import InitOptions, InitStudyResult, run_init_study, run_init_trial
from sim.metrics import (
    RunMetrics,
    absolute_trajectory_error,
    gravity_error_deg,
    nav_error,
    nees,
    rmse,
    scale_error_percent,
    umeyama,
)
from sim.monte_carlo import FilterOptions, MonteCarloResult, run_monte_carlo, run_trial
from sim.world import SimConfig, SimulatedRun, TrajectorySpec, default_camera, initial_state, synthesize

__all__ = [
    'bench_updates',
    'crossover',
    'ratio_series',
    'InitOptions',
    'InitStudyResult',
    'run_init_study',
    'run_init_trial',
    'RunMetrics',
    'absolute_trajectory_error',
    'gravity_error_deg',
    'nav_error',
    'nees',
    'rmse',
    'scale_error_percent',
    'umeyama',
    'FilterOptions',
    'MonteCarloResult',
    'run_monte_carlo',
    'run_trial',
    'SimConfig',
    'SimulatedRun',
    'TrajectorySpec',
    'default_camera',
    'initial_state',
    'synthesize'
]
