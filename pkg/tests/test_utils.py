import json

import numpy as np
import pandas as pd
import pytest

from utils.diagnostics_logger import DiagnosticsLogger, diagnostics_logger_instance, log_operation
from utils.report_generator import ReportGenerator


class Test_ReportGenerator:
    @pytest.fixture
    def report(self, tmp_path):
        return ReportGenerator(str(tmp_path))

    def test_write_table_records_artifact(self, report, tmp_path):
        report.write_table("runs.csv", pd.DataFrame({"a": [1, 2], "b": [0.1, 1.0 / 3.0]}))
        assert report.artifacts == ["runs.csv"]
        text = (tmp_path / "runs.csv").read_text()
        assert text.splitlines()[0] == "a,b"
        assert float(text.splitlines()[2].split(",")[1]) == 1.0 / 3.0

    def test_json_sanitized(self, report, tmp_path):
        report.export_to_json({"b": np.float64(np.nan), "a": np.arange(3), "c": np.int64(4)}, "doc.json")
        doc = json.loads((tmp_path / "doc.json").read_text())
        assert doc == {"a": [0, 1, 2], "b": None, "c": 4}
        assert list(doc) == ["a", "b", "c"]

    def test_plot_files(self, report, tmp_path):
        report.write_plot("bench_ratio", "ratio_llt_pqr", pd.DataFrame({"m_over_n": [0.1, 1.0], "ratio": [1.2, 0.7]}))
        assert report.artifacts == ["plots/ratio_llt_pqr.dat", "plots/ratio_llt_pqr.gp"]
        assert "ratio_llt_pqr.dat" in (tmp_path / "plots" / "ratio_llt_pqr.gp").read_text()

    def test_unknown_plot(self, report):
        with pytest.raises(ValueError):
            report.write_plot("histogram", "x", pd.DataFrame())

    def test_summary_statistics(self, report):
        stats = report.create_summary_statistics([1.0, 2.0, 3.0, float("nan")])
        assert stats["count"] == 3
        assert stats["mean"] == pytest.approx(2.0)
        assert "error" in report.create_summary_statistics([])

    def test_replay_summary_without_truth(self, report):
        text = report.generate_replay_summary({"frames": 10}, None)
        assert "- **frames:** 10" in text
        assert "trajectory error omitted" in text

    def test_empty_table(self, report):
        assert "_no rows_" in report.generate_bench_summary(pd.DataFrame(), {})


class Test_diagnostics:
    def test_operation_metrics(self):
        diagnostics = DiagnosticsLogger()
        diagnostics.log_operation("update", "llt", 0.002, True, details={"H": np.zeros((3, 4))})
        diagnostics.log_operation("update", "llt", 0.004, False, error="NotPositiveDefinite")
        metrics = diagnostics.performance_metrics["update"]
        assert metrics["total_calls"] == 2
        assert metrics["failed_calls"] == 1
        assert metrics["average_execution_time"] == pytest.approx(0.003)
        assert diagnostics.call_history[0]["details"] == {"H": "array(3, 4)"}
        assert diagnostics.get_operation_summary("update")["common_errors"] == {"NotPositiveDefinite": 1}
        assert "error" in diagnostics.get_operation_summary("propagate")

    def test_update_records(self):
        diagnostics = DiagnosticsLogger()
        record = diagnostics.record_update(3, "pqr", 12, 40, 5.0, 1e4, 6, 1)
        assert record["timestep"] == 3
        assert diagnostics.get_performance_report()["summary"]["updates_recorded"] == 1
        diagnostics.reset()
        assert diagnostics.update_records == []

    def test_decorator(self):
        class Engine:
            name = "toy"

            @log_operation("step", "engine")
            def step(self, fail=False):
                if fail:
                    raise ValueError("boom")
                return 1

        diagnostics_logger_instance.reset()
        engine = Engine()
        assert engine.step() == 1
        with pytest.raises(ValueError):
            engine.step(fail=True)
        calls = diagnostics_logger_instance.call_history
        assert [c["success"] for c in calls] == [True, False]
        assert calls[0]["component"] == "toy"
        assert calls[1]["error"] == "boom"
        diagnostics_logger_instance.reset()
