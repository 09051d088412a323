"""
Update benchmark: instrumented flop counts and optional wall time of every
update backend over an (n, m) grid, next to the leading-order predictions.
"""

import logging
import statistics
import time
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from config import Config
from backends import update_backend
from core.flops import FlopCounter, predicted_update_flops
from core.quaternion import rot_to_quat
from core.sqrt_kernels import qr_triangularize
from core.srf_core import LinearizedMeasurement, SqrtState
from core.state import NAV_BLOCK, StateBlock, StateVector, nav_value

logger = logging.getLogger(__name__)

BENCH_COLUMNS = ["n", "m", "backend", "flops", "predicted", "deviation"]


def bench_dimension(n: int) -> int:
    """Smallest navigation-plus-features layout with at least n error states"""
    return 15 + 3 * max(0, int(np.ceil((n - 15) / 3)))


def bench_state(n: int, rng: np.random.Generator) -> SqrtState:
    """Random well-conditioned prior over a navigation block and point features"""
    dim = bench_dimension(n)
    blocks = [StateBlock(NAV_BLOCK, "imu", nav_value(rot_to_quat(np.eye(3)), np.zeros(3), np.zeros(3)))]
    for j in range((dim - 15) // 3):
        blocks.append(StateBlock(f"feat_{j}", "feature", rng.standard_normal(3)))
    A = rng.standard_normal((dim, dim)) / np.sqrt(dim) + np.eye(dim)
    return SqrtState(StateVector(blocks), 0.1 * qr_triangularize(A))


def bench_updates(n_grid: Sequence[int] = tuple(Config.BENCH_N_GRID),
                  m_grid: Sequence[int] = tuple(Config.BENCH_M_GRID),
                  backends: Sequence[str] = ("llt", "pqr"),
                  repetitions: int = Config.BENCH_REPETITIONS,
                  seed: int = Config.SIM_SEED,
                  timing: bool = False) -> pd.DataFrame:
    """
    Count and optionally time one dense update per (n, m, backend)

    Every backend sees the same prior and a freshly built measurement, so no
    cached product is shared between backends.

    Args:
        n_grid: state dimensions (rounded up to a representable layout)
        m_grid: measurement rows
        backends: update backend identifiers
        repetitions: timed repetitions per cell (median reported)
        seed: seed of the random problems
        timing: add a ``median_ns`` column

    Returns:
        pd.DataFrame: one row per (n, m, backend)
    """
    if not n_grid or not m_grid or not backends:
        raise ValueError("benchmark grids must be non-empty")
    rng = np.random.default_rng(seed)
    rows: List[Dict[str, float]] = []
    for n_req in n_grid:
        for m in m_grid:
            state = bench_state(n_req, rng)
            n = state.dim
            r, H = rng.standard_normal(m), rng.standard_normal((m, n))
            for backend in backends:
                counter = FlopCounter()
                update_backend(state, LinearizedMeasurement(r, H, np.ones(m), label="bench"), backend, counter)
                predicted = predicted_update_flops(backend, m, n)
                row = {
                    "n": n,
                    "m": m,
                    "backend": backend,
                    "flops": counter.total,
                    "predicted": predicted,
                    "deviation": abs(counter.total - predicted) / predicted,
                }
                if timing:
                    samples = []
                    for _ in range(max(1, repetitions)):
                        meas = LinearizedMeasurement(r, H, np.ones(m), label="bench")
                        start = time.perf_counter_ns()
                        update_backend(state, meas, backend)
                        samples.append(time.perf_counter_ns() - start)
                    row["median_ns"] = int(statistics.median(samples))
                rows.append(row)
            logger.debug(f"Benchmarked n={n}, m={m}")
    logger.info(f"Benchmarked {len(rows)} cells")
    return pd.DataFrame(rows)


def ratio_series(table: pd.DataFrame, numerator: str, denominator: str,
                 column: str = "flops") -> pd.DataFrame:
    """Per (n, m) ratio of one backend's cost to another's"""
    if column not in table:
        raise KeyError(f"Benchmark table has no {column} column")
    wide = table.pivot_table(index=["n", "m"], columns="backend", values=column, aggfunc="first")
    if numerator not in wide or denominator not in wide:
        return pd.DataFrame(columns=["n", "m", "ratio"])
    out = (wide[numerator] / wide[denominator]).rename("ratio").reset_index()
    out["m_over_n"] = out["m"] / out["n"]
    return out


def crossover(table: pd.DataFrame, cheaper: str, other: str, n: Optional[int] = None) -> Optional[int]:
    """Smallest m from which ``cheaper`` stays below ``other`` in flops; None if never"""
    if n is not None:
        table = table[table["n"] == n]
    series = ratio_series(table, cheaper, other)
    if series.empty:
        return None
    below = series["ratio"].to_numpy() < 1.0
    for i in range(below.size):
        if below[i:].all():
            return int(series["m"].iloc[i])
    return None
