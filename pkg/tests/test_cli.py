import json
import os
import shutil

import pytest

from cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, run
from dataset import export_run
from sim.world import SimConfig, TrajectorySpec, synthesize

BENCH_CONFIG = """{
  bench: {n_grid: [15, 30], m_grid: [5, 10, 40], repetitions: 1},
}
"""

SIMULATE_CONFIG = """{
  sim: {trials: 1},
  trajectory: {duration: 1.0, feature_count: 800},
}
"""


def _config(tmp_path, text, name="config.json5"):
    path = os.path.join(str(tmp_path), name)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    return path


def _read(path):
    with open(path, "r", encoding="utf-8") as f:
        return f.read()


def _manifest(out):
    return json.loads(_read(os.path.join(out, "manifest.json")))


class Test_configuration_errors:
    def test_unknown_section(self, tmp_path):
        config = _config(tmp_path, "{plots: {}}")
        assert run(["bench", "--config", config, "--out", str(tmp_path / "out")]) == EXIT_CONFIG
        assert not os.path.exists(tmp_path / "out")

    def test_unknown_key(self, tmp_path):
        config = _config(tmp_path, "{sim: {camera_fps: 30}}")
        assert run(["simulate", "--config", config, "--out", str(tmp_path / "out")]) == EXIT_CONFIG

    def test_unparseable_config(self, tmp_path):
        config = _config(tmp_path, "{sim: ")
        assert run(["simulate", "--config", config, "--out", str(tmp_path / "out")]) == EXIT_CONFIG

    def test_missing_config(self, tmp_path):
        missing = os.path.join(str(tmp_path), "missing.json5")
        assert run(["bench", "--config", missing, "--out", str(tmp_path / "out")]) == EXIT_CONFIG

    def test_unknown_backend(self, tmp_path):
        assert run(["bench", "--backends", "llt,givens", "--out", str(tmp_path / "out")]) == EXIT_CONFIG

    def test_invalid_duration(self, tmp_path):
        assert run(["simulate", "--duration", "-1", "--out", str(tmp_path / "out")]) == EXIT_CONFIG


class Test_bench:
    @pytest.fixture
    def bench_out(self, tmp_path):
        config = _config(tmp_path, BENCH_CONFIG)
        out = str(tmp_path / "bench")
        assert run(["bench", "--config", config, "--backends", "llt,pqr,carlson", "--seed", "7",
                    "--out", out]) == EXIT_OK
        return out, config

    def test_artifacts(self, bench_out):
        out, _ = bench_out
        manifest = _manifest(out)
        assert manifest["subcommand"] == "bench"
        assert manifest["status"] == "ok"
        assert manifest["seed"] == 7
        assert manifest["failures"] == []
        assert manifest["effective_config"]["bench"]["m_grid"] == [5, 10, 40]
        for name in ("bench.csv", "ratio_llt_pqr.csv", "ratio_carlson_llt.csv", "summary.md", "manifest.json"):
            assert name in manifest["artifacts"]
            assert os.path.isfile(os.path.join(out, name))
        assert "timing.csv" not in manifest["artifacts"]
        assert _read(os.path.join(out, "bench.csv")).startswith("n,m,backend,flops,predicted,deviation\n")

    def test_no_staging_left(self, bench_out, tmp_path):
        assert sorted(os.listdir(str(tmp_path))) == ["bench", "config.json5"]

    def test_deterministic(self, bench_out, tmp_path):
        out, config = bench_out
        again = str(tmp_path / "bench_again")
        assert run(["bench", "--config", config, "--backends", "llt,pqr,carlson", "--seed", "7",
                    "--out", again]) == EXIT_OK
        assert _read(os.path.join(out, "bench.csv")) == _read(os.path.join(again, "bench.csv"))
        assert _read(os.path.join(out, "summary.md")) == _read(os.path.join(again, "summary.md"))

    def test_timing_separate(self, tmp_path):
        config = _config(tmp_path, BENCH_CONFIG)
        out = str(tmp_path / "timed")
        assert run(["bench", "--config", config, "--timing", "--out", out]) == EXIT_OK
        assert "median_ns" not in _read(os.path.join(out, "bench.csv"))
        assert "median_ns" in _read(os.path.join(out, "timing.csv"))


def test__simulate(tmp_path):
    config = _config(tmp_path, SIMULATE_CONFIG)
    out = str(tmp_path / "sim")
    assert run(["simulate", "--config", config, "--backend", "llt", "--out", out]) == EXIT_OK
    manifest = _manifest(out)
    assert manifest["backend"] == "llt"
    assert manifest["effective_config"]["trajectory"]["duration"] == 1.0
    for name in ("metrics.csv", "runs.csv", "summary.csv", "updates.csv", "summary.md"):
        assert os.path.isfile(os.path.join(out, name))
    assert os.path.isfile(os.path.join(out, "plots", "cond_llt_double.dat"))
    assert "wall_ns" not in _read(os.path.join(out, "metrics.csv"))


class Test_replay:
    @pytest.fixture(scope="class")
    def clean_sequence(self, tmp_path_factory):
        root = str(tmp_path_factory.mktemp("replay") / "seq")
        run_ = synthesize(TrajectorySpec(duration=3.0, feature_count=800),
                          SimConfig(noise_scale=0.0, pixel_noise=0.0, track_drop_prob=0.0))
        export_run(run_, root)
        return root

    def test_truth_initialized(self, clean_sequence, tmp_path):
        out = str(tmp_path / "replay")
        assert run(["replay", clean_sequence, "--init", "truth", "--backend", "llt", "--out", out]) == EXIT_OK
        metrics = json.loads(_read(os.path.join(out, "replay_metrics.json")))
        assert metrics["rmse_position_m"] < 0.05
        assert metrics["rmse_orientation_deg"] < 0.1
        manifest = _manifest(out)
        assert manifest["sequence"]["ground_truth"] is True
        trajectory = _read(os.path.join(out, "trajectory.csv")).splitlines()
        assert trajectory[0] == "t_ns,px,py,pz,qw,qx,qy,qz,vx,vy,vz"
        assert len(trajectory) - 1 == manifest["sequence"]["frames"]

    def test_corrupt_row(self, clean_sequence, tmp_path):
        root = str(tmp_path / "corrupt")
        shutil.copytree(clean_sequence, root)
        imu_path = os.path.join(root, "imu0", "data.csv")
        lines = _read(imu_path).splitlines()
        lines[5] = lines[5].split(",")[0] + ",x,0,0,0,0,0"
        with open(imu_path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
        out = str(tmp_path / "replay")
        assert run(["replay", root, "--init", "truth", "--out", out]) == EXIT_RUNTIME
        assert not os.path.exists(out)

    def test_missing_dataset(self, tmp_path):
        assert run(["replay", str(tmp_path / "nothing"), "--out", str(tmp_path / "replay")]) == EXIT_RUNTIME

    @pytest.mark.slow
    def test_dynamic_without_truth(self, tmp_path):
        root = str(tmp_path / "seq")
        run_ = synthesize(TrajectorySpec.excited(duration=2.0),
                          SimConfig(noise_scale=0.0, pixel_noise=0.0, track_drop_prob=0.0, camera_rate_hz=20))
        export_run(run_, root)
        os.remove(os.path.join(root, "state_groundtruth_estimate0", "data.csv"))
        out = str(tmp_path / "replay")
        assert run(["replay", root, "--init", "dynamic", "--window", "0.5", "--out", out]) == EXIT_OK
        assert not os.path.exists(os.path.join(out, "replay_metrics.json"))
        assert "trajectory error omitted" in _read(os.path.join(out, "summary.md"))
        assert _manifest(out)["sequence"]["ground_truth"] is False
