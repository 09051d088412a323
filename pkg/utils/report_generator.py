"""
Report Generator for run artifacts: CSV tables, JSON documents, markdown
summaries and plot data with gnuplot script stubs
"""

import json
import logging
import os
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.17g"


def _markdown_table(table: pd.DataFrame, float_format: str = "{:.4g}") -> str:
    """Plain pipe table; floats through ``float_format``"""
    if table.empty:
        return "_no rows_\n"
    header = "| " + " | ".join(str(c) for c in table.columns) + " |\n"
    rule = "|" + "|".join("---" for _ in table.columns) + "|\n"
    lines = []
    for row in table.itertuples(index=False):
        cells = [float_format.format(v) if isinstance(v, (float, np.floating)) else str(v) for v in row]
        lines.append("| " + " | ".join(cells) + " |\n")
    return header + rule + "".join(lines)


class ReportGenerator:
    """
    Writes the artifacts of one CLI run into an output directory

    Every written path is recorded so the manifest can list them. Nothing
    written here carries a wall-clock value.
    """

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        self.artifacts: List[str] = []
        self.plot_templates = {
            "cond_trace": self._cond_trace_template,
            "bench_ratio": self._bench_ratio_template,
            "init_success": self._init_success_template,
            "gravity_trace": self._gravity_trace_template,
            "trajectory": self._trajectory_template,
        }

    def _path(self, name: str) -> str:
        path = os.path.join(self.out_dir, name)
        os.makedirs(os.path.dirname(path) or self.out_dir, exist_ok=True)
        return path

    def _record(self, name: str) -> None:
        if name not in self.artifacts:
            self.artifacts.append(name)

    def write_table(self, name: str, table: pd.DataFrame) -> str:
        """
        Write a DataFrame as CSV

        Args:
            name (str): file name relative to the output directory
            table (pd.DataFrame): rows to write

        Returns:
            str: written path
        """
        path = self._path(name)
        table.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
        self._record(name)
        logger.debug(f"Wrote {len(table)} rows to {path}")
        return path

    def export_to_json(self, data: Dict[str, Any], name: str) -> str:
        """Write a JSON document with sorted keys"""
        path = self._path(name)
        with open(path, "w", encoding="utf-8") as f:
            f.write(json.dumps(_jsonable(data), indent=2, sort_keys=True, ensure_ascii=False))
            f.write("\n")
        self._record(name)
        return path

    def write_text(self, name: str, text: str) -> str:
        path = self._path(name)
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
        self._record(name)
        return path

    def write_plot(self, kind: str, name: str, table: pd.DataFrame) -> str:
        """
        Plot data plus a gnuplot stub that renders it

        Args:
            kind (str): one of the plot templates
            name (str): base file name (without extension)
            table (pd.DataFrame): columns the template refers to
        """
        if kind not in self.plot_templates:
            raise ValueError(f"Unknown plot kind: {kind}. Available: {sorted(self.plot_templates)}")
        data_name = f"plots/{name}.dat"
        path = self._path(data_name)
        table.to_csv(path, index=False, sep=" ", float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
        self._record(data_name)
        self.write_text(f"plots/{name}.gp", self.plot_templates[kind](f"{name}.dat", list(table.columns)))
        return path

    # Markdown summaries

    def generate_simulation_summary(self, aggregate: pd.DataFrame, info: Dict[str, Any],
                                    failures: Sequence[Dict[str, Any]] = ()) -> str:
        """RMSE and consistency per estimator and precision"""
        report = "# Simulation Summary\n\n"
        report += "".join(f"- **{k}:** {v}\n" for k, v in sorted(info.items()))
        report += "\n## RMSE and Consistency\n\n"
        report += _markdown_table(aggregate)
        if failures:
            report += "\n## Failed Trials\n\n"
            for failure in failures:
                report += (f"- trial {failure['trial']} {failure['estimator']}/{failure['precision']}: "
                           f"{failure['error_type']}: {failure['error']}\n")
        return report

    def generate_bench_summary(self, table: pd.DataFrame, ratios: Dict[str, pd.DataFrame]) -> str:
        """Counted versus predicted flops and the backend ratio series"""
        report = "# Update Benchmark\n\n## Flop Counts\n\n"
        report += _markdown_table(table)
        for label, series in ratios.items():
            report += f"\n## {label}\n\n"
            report += _markdown_table(series)
        return report

    def generate_init_summary(self, success: pd.DataFrame, info: Dict[str, Any]) -> str:
        report = "# Initialization Study\n\n"
        report += "".join(f"- **{k}:** {v}\n" for k, v in sorted(info.items()))
        report += "\n## Success Rates\n\n"
        report += _markdown_table(success)
        return report

    def generate_replay_summary(self, sequence_summary: Dict[str, Any], metrics: Optional[Dict[str, Any]]) -> str:
        report = "# Replay Summary\n\n## Sequence\n\n"
        report += "".join(f"- **{k}:** {v}\n" for k, v in sorted(sequence_summary.items()))
        report += "\n## Trajectory Error\n\n"
        if metrics is None:
            report += "No ground truth in the sequence; trajectory error omitted.\n"
        else:
            report += "".join(f"- **{k}:** {v:.6g}\n" if isinstance(v, float) else f"- **{k}:** {v}\n"
                              for k, v in sorted(metrics.items()))
        return report

    def create_summary_statistics(self, values: Sequence[float]) -> Dict[str, Any]:
        """
        Summary statistics of a metric over trials

        Returns:
            dict: count, mean, median, std, min, max (finite values only)
        """
        arr = np.asarray(values, dtype=np.float64)
        arr = arr[np.isfinite(arr)]
        if arr.size == 0:
            return {"error": "No finite values"}
        return {
            "count": int(arr.size),
            "mean": float(np.mean(arr)),
            "median": float(np.median(arr)),
            "std": float(np.std(arr)),
            "min": float(np.min(arr)),
            "max": float(np.max(arr)),
        }

    # Gnuplot stubs

    def _cond_trace_template(self, data: str, columns: List[str]) -> str:
        return (f"# condition number of each update\nset logscale y\nset xlabel 'frame'\nset ylabel 'cond'\n"
                f"plot '{data}' using 1:2 with lines title '{columns[1] if len(columns) > 1 else ''}'\n")

    def _bench_ratio_template(self, data: str, columns: List[str]) -> str:
        return (f"# flop ratio over m/n\nset xlabel 'm/n'\nset ylabel 'ratio'\nset logscale x\n"
                f"plot '{data}' using {columns.index('m_over_n') + 1}:{columns.index('ratio') + 1} "
                f"with linespoints title 'ratio', 2.0/3.0 title '2/3'\n")

    def _init_success_template(self, data: str, columns: List[str]) -> str:
        rate = next((i + 1 for i, c in enumerate(columns) if c.startswith("success_")), 2)
        return (f"# success rate over window size\nset xlabel 'window [s]'\nset ylabel 'success rate'\n"
                f"set yrange [0:1]\nplot '{data}' using 1:{rate} with linespoints title '{columns[rate - 1]}'\n")

    def _gravity_trace_template(self, data: str, columns: List[str]) -> str:
        return (f"# mean gravity error per refinement iteration\nset xlabel 'iteration'\n"
                f"set ylabel 'gravity error [deg]'\nplot '{data}' using "
                f"{columns.index('iteration') + 1}:{columns.index('gravity_error_deg') + 1} with linespoints\n")

    def _trajectory_template(self, data: str, columns: List[str]) -> str:
        return (f"# estimated trajectory, top view\nset size ratio -1\nset xlabel 'x [m]'\nset ylabel 'y [m]'\n"
                f"plot '{data}' using {columns.index('px') + 1}:{columns.index('py') + 1} with lines title 'estimate'\n")


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        value = float(value)
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value
