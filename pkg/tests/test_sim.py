import numpy as np
import pandas as pd
import pytest

from core.quaternion import exp_so3, quat_to_rot
from sim.init_study import InitOptions, mean_trace, run_init_study, success_table
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
from sim.monte_carlo import FilterOptions, aggregate_runs, run_monte_carlo
from sim.world import SimConfig, TrajectorySpec, initial_state, prior_std, synthesize


class Test_synthesize:
    def test_deterministic(self):
        spec = TrajectorySpec(duration=0.5, feature_count=300)
        first, second = synthesize(spec, SimConfig()), synthesize(spec, SimConfig())
        np.testing.assert_array_equal(first.gyro, second.gyro)
        np.testing.assert_array_equal(first.accel, second.accel)
        assert first.frames[-1].keys() == second.frames[-1].keys()
        for fid in first.frames[-1]:
            np.testing.assert_array_equal(first.frames[-1][fid], second.frames[-1][fid])

    def test_seed_changes_data(self):
        a = synthesize(TrajectorySpec(duration=0.5, feature_count=300, seed=1), SimConfig())
        b = synthesize(TrajectorySpec(duration=0.5, feature_count=300, seed=2), SimConfig())
        assert not np.allclose(a.accel, b.accel)

    def test_static_accelerometer(self):
        run = synthesize(TrajectorySpec.static(duration=1.0, feature_count=300),
                         SimConfig(noise_scale=0.0, pixel_noise=0.0))
        expected = quat_to_rot(run.truth.q[0]) @ np.array([0.0, 0.0, 9.81])
        np.testing.assert_array_almost_equal(run.accel.mean(axis=0), expected, decimal=10)
        np.testing.assert_array_almost_equal(run.gyro, np.zeros_like(run.gyro), decimal=12)
        np.testing.assert_array_almost_equal(run.truth.v, np.zeros_like(run.truth.v), decimal=12)

    def test_frames_follow_camera_rate(self):
        cfg = SimConfig(camera_rate_hz=20)
        run = synthesize(TrajectorySpec(duration=1.0, feature_count=300), cfg)
        assert len(run.frames) == 21
        assert np.all(np.diff(run.frame_t_ns) == 50_000_000)
        assert all(len(obs) <= cfg.max_tracked_features for obs in run.frames)

    def test_observations_match_landmarks(self):
        run = synthesize(TrajectorySpec(duration=0.5, feature_count=300),
                         SimConfig(noise_scale=0.0, pixel_noise=0.0))
        assert set(run.frames[0]) <= set(run.landmarks)

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            synthesize(TrajectorySpec(duration=0.0), SimConfig())


def test__initial_state_prior():
    run = synthesize(TrajectorySpec(duration=0.5, feature_count=300), SimConfig())
    vector, U = initial_state(run)
    np.testing.assert_array_equal(vector.block("nav").value, run.truth.nav_at(int(run.frame_t_ns[0])))
    np.testing.assert_array_equal(np.diag(U), prior_std())
    perturbed, _ = initial_state(run, np.random.default_rng(0))
    assert not np.allclose(perturbed.block("nav").value, vector.block("nav").value)


class Test_metrics:
    def test_rmse(self):
        assert rmse(np.array([3.0, 4.0])) == pytest.approx(np.sqrt(12.5))
        assert np.isnan(rmse(np.array([])))

    def test_scale_error_symmetric(self):
        assert scale_error_percent(2.0) == pytest.approx(100.0)
        assert scale_error_percent(0.5) == pytest.approx(100.0)
        assert scale_error_percent(1.0) == 0.0

    def test_umeyama_recovers_similarity(self, rng):
        source = rng.standard_normal((20, 3))
        R = exp_so3(np.array([0.2, -0.4, 1.0]))
        t = np.array([1.0, -2.0, 0.5])
        target = 1.7 * source @ R.T + t
        R_est, t_est, s_est = umeyama(source, target, with_scale=True)
        np.testing.assert_array_almost_equal(R_est, R, decimal=12)
        np.testing.assert_array_almost_equal(t_est, t, decimal=12)
        assert s_est == pytest.approx(1.7)

    def test_umeyama_too_few_points(self):
        with pytest.raises(ValueError):
            umeyama(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_ate_identical(self, rng):
        p = rng.standard_normal((10, 3))
        result = absolute_trajectory_error(p, p, with_scale=True)
        assert result["ate"] == pytest.approx(0.0, abs=1e-12)
        assert result["scale"] == pytest.approx(1.0)
        assert result["scale_error_pct"] == pytest.approx(0.0, abs=1e-9)

    def test_ate_ignores_rigid_motion(self, rng):
        p = rng.standard_normal((10, 3))
        moved = p @ exp_so3(np.array([0.0, 0.0, 0.7])).T + np.array([3.0, 0.0, 0.0])
        assert absolute_trajectory_error(moved, p)["ate"] == pytest.approx(0.0, abs=1e-12)

    def test_gravity_error(self):
        assert gravity_error_deg(np.array([0.0, 0.0, -9.81]), np.array([0.0, 0.0, -1.0])) == pytest.approx(0.0)
        assert gravity_error_deg(np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, -1.0])) == pytest.approx(90.0)

    def test_nees(self):
        P = np.diag([4.0, 1.0])
        assert nees(np.array([2.0, 1.0]), P) == pytest.approx(2.0)
        assert np.isnan(nees(np.ones(2), -np.eye(2)))

    def test_run_metrics(self):
        run = synthesize(TrajectorySpec(duration=0.5, feature_count=300), SimConfig())
        truth = run.truth.nav_at(int(run.frame_t_ns[0]))
        metrics = RunMetrics("llt", "double")
        row = metrics.add(0, 0.0, truth, truth, np.eye(15), 1.0, 10.0, 4)
        assert row["orientation_error_deg"] == pytest.approx(0.0, abs=1e-9)
        assert row["nees"] == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_array_almost_equal(nav_error(truth, truth), np.zeros(15))
        assert metrics.rmse_position_m == pytest.approx(0.0, abs=1e-12)


class Test_monte_carlo:
    @pytest.fixture(scope="class")
    def result(self):
        return run_monte_carlo(TrajectorySpec(duration=1.0, feature_count=800), SimConfig(), trials=2,
                               estimators=["llt", "ekf"], workers=2, options=FilterOptions(timing=True))

    def test_tables(self, result):
        assert result.ok
        assert len(result.runs) == 4
        assert list(result.aggregate["estimator"]) == ["llt", "ekf"]
        assert set(result.steps["trial"]) == {0, 1}
        assert len(result.timing) == len(result.steps)
        assert {"cond_C", "flops"} <= set(result.updates.columns)

    def test_paired_cells_agree(self, result):
        steps = result.steps
        llt = steps[steps["estimator"] == "llt"]["position_error_m"].to_numpy()
        ekf = steps[steps["estimator"] == "ekf"]["position_error_m"].to_numpy()
        np.testing.assert_allclose(llt, ekf, atol=1e-6)

    def test_order_independent_of_workers(self, result):
        serial = run_monte_carlo(TrajectorySpec(duration=1.0, feature_count=800), SimConfig(), trials=2,
                                 estimators=["llt", "ekf"], workers=1)
        pd.testing.assert_frame_equal(serial.runs, result.runs)

    def test_invalid_trials(self):
        with pytest.raises(ValueError):
            run_monte_carlo(TrajectorySpec(duration=1.0), SimConfig(), trials=0)

    @pytest.mark.slow
    def test_full_matrix(self):
        estimators = ["ekf", "srif", "llt", "pqr", "potter", "carlson"]
        result = run_monte_carlo(TrajectorySpec(duration=2.0, feature_count=800), SimConfig(), trials=1,
                                 estimators=estimators, precisions=["double", "single"])
        assert len(result.runs) + len(result.failures) == 12
        assert set(result.aggregate["estimator"]) <= set(estimators)


def test__aggregate_empty():
    table = aggregate_runs(pd.DataFrame())
    assert table.empty
    assert "nees_ratio" in table.columns


class Test_init_study:
    @pytest.fixture(scope="class")
    def study(self):
        options = InitOptions(windows=(0.5,), trials=2, track=False, start_spread=0.5)
        cfg = SimConfig(noise_scale=0.0, pixel_noise=0.0, track_drop_prob=0.0)
        return run_init_study(TrajectorySpec.excited(duration=2.0), cfg, options), options

    def test_success_table(self, study):
        result, options = study
        assert list(result.success["variant"]) == ["no_refine", "refined"]
        for thr in options.ate_thresholds:
            assert f"success_{thr:g}" in result.success
        assert (result.success["trials"] == 2).all()
        assert (result.success["initialized"] == 1.0).all()

    def test_trace(self, study):
        result, _ = study
        averaged = mean_trace(result.trace)
        assert set(averaged["variant"]) <= {"refined", "no_refine"}
        assert (averaged["gravity_error_deg"] < 1.0).all()

    def test_success_table_from_rows(self):
        trials = pd.DataFrame([
            {"window": 0.2, "variant": "refined", "trial": 0, "initialized": True, "gravity_success": True,
             "success_0.1": True},
            {"window": 0.2, "variant": "refined", "trial": 1, "initialized": False, "gravity_success": False,
             "success_0.1": False},
        ])
        table = success_table(trials, [0.1])
        assert table["success_0.1"].iloc[0] == pytest.approx(0.5)
        assert table["initialized"].iloc[0] == pytest.approx(0.5)
