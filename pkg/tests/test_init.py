import itertools

import numpy as np
import pytest

from core.errors import DegenerateGeometry, InsufficientData
from core.quaternion import quat_to_rot
from core.sqrt_kernels import is_upper_triangular
from core.state import NAV_BLOCK
from initialization.featureless import (
    EpipolarAccumulator,
    MinimalInitState,
    dominant_normal,
    featureless_solve,
    relative_direction,
)
from initialization.initializer import DynamicInitializer
from initialization.keyframes import (
    _best_subset,
    average_parallax,
    cumulative_parallax,
    default_keyframe_count,
    equalization_cost,
    select_keyframes,
)
from initialization.refine import keyframe_name
from sensors.imu import ImuBuffer, preintegrate
from sim.init_study import InitOptions, mean_trace, run_init_study, run_init_trial
from sim.metrics import gravity_error_deg
from sim.world import SimConfig, TrajectorySpec, synthesize


def _moving_frames(steps, rate=20.0):
    """Frames whose features all shift by the given pixel steps along u"""
    u = np.concatenate([[0.0], np.cumsum(steps)])
    return [(k / rate, {fid: np.array([100.0 + 10 * fid + u[k], 200.0]) for fid in range(5)})
            for k in range(u.size)]


def test__default_keyframe_count():
    assert default_keyframe_count(0.2) == 3
    assert default_keyframe_count(0.5) == 5


def test__average_parallax():
    prev = {1: np.array([0.0, 0.0]), 2: np.array([5.0, 5.0])}
    curr = {1: np.array([3.0, 4.0]), 3: np.array([1.0, 1.0])}
    assert average_parallax(prev, curr) == pytest.approx(5.0)
    assert average_parallax(prev, {7: np.zeros(2)}) == 0.0


class Test_select_keyframes:
    def test_all_frames(self):
        frames = _moving_frames([1.0, 1.0])
        assert select_keyframes(frames, 3) == [0, 1, 2]

    def test_uniform_parallax(self):
        frames = _moving_frames(np.ones(8))
        np.testing.assert_array_almost_equal(cumulative_parallax(frames), np.arange(9.0))
        assert select_keyframes(frames, 5) == [0, 2, 4, 6, 8]

    def test_front_loaded_matches_brute_force(self):
        frames = _moving_frames([6.0, 4.0, 2.0, 1.0, 0.5, 0.5, 0.25, 0.25, 0.25, 0.25])
        cum = cumulative_parallax(frames)
        count = 4
        chosen = select_keyframes(frames, count)
        assert chosen[0] == 0 and chosen[-1] == len(frames) - 1
        best = min(equalization_cost(cum, [0, *middle, len(frames) - 1])
                   for middle in itertools.combinations(range(1, len(frames) - 1), count - 2))
        assert equalization_cost(cum, chosen) == pytest.approx(best)
        assert _best_subset(cum, count) == chosen

    def test_window_limits_frames(self):
        frames = _moving_frames(np.ones(20))
        chosen = select_keyframes(frames, 3, window=0.5)
        assert chosen[-1] == 10

    def test_no_motion_spaces_in_time(self):
        frames = _moving_frames(np.zeros(8))
        assert select_keyframes(frames, 3) == [0, 4, 8]

    def test_too_few_frames(self):
        with pytest.raises(InsufficientData):
            select_keyframes(_moving_frames([1.0]), 3)

    def test_imu_must_cover(self):
        frames = _moving_frames(np.ones(4))
        imu = ImuBuffer([0.0, 0.1], np.zeros((2, 3)), np.zeros((2, 3)))
        with pytest.raises(InsufficientData):
            select_keyframes(frames, 3, imu=imu)


class Test_relative_direction:
    @staticmethod
    def _scatter(baseline, rng, count=30):
        acc = EpipolarAccumulator()
        points = rng.uniform(-2.0, 2.0, (count, 3)) + np.array([0.0, 0.0, 6.0])
        for p in points:
            acc.add(p / np.linalg.norm(p), (p - baseline) / np.linalg.norm(p - baseline))
        return acc

    def test_x_baseline(self, rng):
        direction = relative_direction(self._scatter(np.array([0.3, 0.0, 0.0]), rng))
        assert abs(direction.t @ np.array([1.0, 0.0, 0.0])) == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_array_almost_equal(direction.e.T @ direction.t, np.zeros(2), decimal=12)
        assert direction.gap > 10.0

    def test_scale_invariant(self):
        short = relative_direction(self._scatter(np.array([0.1, 0.2, 0.0]), np.random.default_rng(8)))
        long = relative_direction(self._scatter(np.array([1.0, 2.0, 0.0]), np.random.default_rng(8)))
        assert abs(short.t @ long.t) == pytest.approx(1.0, abs=1e-9)

    def test_no_parallax(self):
        acc = EpipolarAccumulator()
        for _ in range(3):
            acc.add(np.array([1.0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0]))
        assert acc.trace == 0.0
        assert acc.is_static
        with pytest.raises(DegenerateGeometry):
            relative_direction(acc)


def test__minimal_state_gravity_norm():
    state = MinimalInitState.from_gravity(np.zeros(3), np.array([0.3, -0.2, -4.0]), 9.81)
    assert np.linalg.norm(state.gravity) == pytest.approx(9.81)
    np.testing.assert_array_almost_equal(state.gravity / 9.81, np.array([0.3, -0.2, -4.0]) / np.linalg.norm([0.3, -0.2, -4.0]))


def _static_pairs():
    """Accumulators whose shared features show no parallax"""
    pairs = {}
    for key in [(0, 1), (0, 2), (1, 2)]:
        acc = EpipolarAccumulator()
        for b in np.eye(3):
            acc.add(b, b)
        pairs[key] = acc
    return pairs


def test__featureless_static():
    rate = 200.0
    t = np.arange(41) / rate
    imu = ImuBuffer(t, np.zeros((t.size, 3)), np.tile([0.0, 0.0, 9.81], (t.size, 1)))
    cumulative = [None, preintegrate(imu.slice(0.0, 0.1)), preintegrate(imu.slice(0.0, 0.2))]
    minimal = featureless_solve(cumulative, _static_pairs(), np.zeros(3), 9.81)
    np.testing.assert_array_almost_equal(minimal.v0, np.zeros(3), decimal=8)
    np.testing.assert_array_almost_equal(minimal.gravity, [0.0, 0.0, -9.81], decimal=8)
    assert minimal.diagnostics["static_pairs"] == 3


def test__featureless_too_few_keyframes():
    with pytest.raises(InsufficientData):
        featureless_solve([None, None], {}, np.zeros(3))


def test__featureless_pairs_without_features():
    rate = 200.0
    t = np.arange(41) / rate
    imu = ImuBuffer(t, np.zeros((t.size, 3)), np.tile([0.0, 0.0, 9.81], (t.size, 1)))
    cumulative = [None, preintegrate(imu.slice(0.0, 0.1)), preintegrate(imu.slice(0.0, 0.2))]
    pairs = {(0, 1): EpipolarAccumulator(), (0, 2): EpipolarAccumulator(), (1, 2): EpipolarAccumulator()}
    assert not pairs[(0, 1)].is_static
    with pytest.raises(DegenerateGeometry, match=r"\(0, 1\)"):
        featureless_solve(cumulative, pairs, np.zeros(3), 9.81)


class Test_featureless_three_keyframes:
    """Constant acceleration over 0.1 s, three keyframes and exact bearings"""
    g = np.array([0.0, 0.0, -9.81])
    v0 = np.array([1.0, 0.5, 0.0])
    p_CinI = np.array([0.05, 0.02, -0.01])

    @classmethod
    def _problem(cls, accel, rng, empty_pairs=()):
        rate = 400.0
        t = np.arange(41) / rate
        imu = ImuBuffer(t, np.zeros((t.size, 3)), np.tile(accel - cls.g, (t.size, 1)))
        times = [0.0, 0.05, 0.1]
        cumulative = [None] + [preintegrate(imu.slice(0.0, T)) for T in times[1:]]
        centers = [cls.v0 * T + 0.5 * accel * T * T + cls.p_CinI for T in times]
        points = rng.uniform(-2.0, 2.0, (40, 3)) + np.array([5.0, 0.0, 1.0])
        pairs = {}
        for i, j in [(0, 1), (0, 2), (1, 2)]:
            acc = EpipolarAccumulator()
            if (i, j) not in empty_pairs:
                for p in points:
                    acc.add((p - centers[i]) / np.linalg.norm(p - centers[i]),
                            (p - centers[j]) / np.linalg.norm(p - centers[j]))
            pairs[(i, j)] = acc
        return cumulative, pairs

    def test_upward_acceleration(self, rng):
        # the other gravity-sphere root needs ten times the acceleration
        cumulative, pairs = self._problem(np.array([0.5, -0.3, 2.0]), rng)
        minimal = featureless_solve(cumulative, pairs, self.p_CinI, 9.81)
        np.testing.assert_allclose(minimal.gravity, self.g, atol=1e-6)
        np.testing.assert_allclose(minimal.v0, self.v0, atol=1e-6)
        assert minimal.diagnostics["candidates"] >= 2
        assert minimal.diagnostics["positive_depth_pairs"] == 3

    def test_downward_acceleration_needs_positive_depth(self, rng):
        # the other root has a smaller acceleration but a negative scale
        accel = np.array([6.0, 0.0, -5.0])
        cumulative, pairs = self._problem(accel, rng)
        minimal = featureless_solve(cumulative, pairs, self.p_CinI, 9.81)
        np.testing.assert_allclose(minimal.gravity, self.g, atol=1e-6)
        np.testing.assert_allclose(minimal.v0, self.v0, atol=1e-6)
        assert minimal.diagnostics["positive_depth_pairs"] == 3

    def test_conditioning_judged_after_column_scaling(self, rng):
        cumulative, pairs = self._problem(np.array([0.5, -0.3, 2.0]), rng)
        minimal = featureless_solve(cumulative, pairs, self.p_CinI, 9.81)
        assert minimal.diagnostics["condition"] < 1e8
        assert np.linalg.norm(minimal.gravity) == pytest.approx(9.81)

    def test_pair_without_features_is_reported(self, rng):
        cumulative, pairs = self._problem(np.array([0.5, -0.3, 2.0]), rng, empty_pairs=[(1, 2)])
        with pytest.raises(DegenerateGeometry, match=r"\(1, 2\)"):
            featureless_solve(cumulative, pairs, self.p_CinI, 9.81)


def test__dominant_normal():
    acc = EpipolarAccumulator()
    for _ in range(4):
        acc.add(np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]))
    with pytest.raises(DegenerateGeometry):
        relative_direction(acc)
    e = dominant_normal(acc)
    np.testing.assert_allclose(np.abs(e[:, 0]), [0.0, 0.0, 1.0], atol=1e-12)
    assert dominant_normal(EpipolarAccumulator()) is None


@pytest.fixture(scope="module")
def excited_run():
    return synthesize(TrajectorySpec.excited(duration=2.0),
                      SimConfig(noise_scale=0.0, pixel_noise=0.0, track_drop_prob=0.0, camera_rate_hz=20))


class Test_DynamicInitializer:
    @pytest.fixture(scope="class")
    def outcome(self, excited_run):
        frames = excited_run.frame_list()
        truth0 = excited_run.truth.nav_at(int(excited_run.frame_t_ns[0]))
        initializer = DynamicInitializer(excited_run.cam, excited_run.cfg.filter_noise,
                                         excited_run.cfg.gravity_magnitude, window=0.5)
        return initializer.initialize(frames, excited_run.imu, truth0[10:13], truth0[13:16])

    def test_success(self, outcome):
        assert outcome["success"], outcome.get("error")
        solution = outcome["solution"]
        assert solution.keyframe_names == [keyframe_name(k) for k in range(5)]
        assert solution.diagnostics["keyframes"] == 5
        assert solution.diagnostics["window"] == pytest.approx(0.5)
        assert len(solution.feature_ids) > 0

    def test_gravity_recovered(self, outcome, excited_run):
        solution = outcome["solution"]
        truth0 = excited_run.truth.nav_at(int(excited_run.frame_t_ns[0]))
        g_local_true = quat_to_rot(truth0[0:4]) @ np.array([0.0, 0.0, -9.81])
        assert gravity_error_deg(solution.minimal.gravity, g_local_true) < 1.0

    def test_filter_hand_off(self, outcome):
        solution = outcome["solution"]
        vector, U, fids = solution.to_filter_state(max_features=3)
        assert vector.names[0] == NAV_BLOCK
        assert vector.names[1:5] == [keyframe_name(k) for k in (3, 2, 1, 0)]
        assert len(fids) == min(3, len(solution.feature_ids))
        assert all(vector.block(name).kind == "anchored_feature" for name in vector.names[5:])
        assert U.shape == (vector.dim, vector.dim)
        assert is_upper_triangular(U)
        np.testing.assert_array_equal(vector.block(NAV_BLOCK).value, solution.vector.block(keyframe_name(4)).value)

    def test_too_few_frames(self, excited_run):
        initializer = DynamicInitializer(excited_run.cam, window=0.5)
        outcome = initializer.initialize(excited_run.frame_list()[:2], excited_run.imu)
        assert outcome["success"] is False
        assert outcome["error_type"] == "InsufficientData"


def test__init_trial_noise_free():
    cfg = SimConfig(noise_scale=0.0, pixel_noise=0.0, track_drop_prob=0.0)
    options = InitOptions(start_spread=0.0, track=False)
    row = run_init_trial(TrajectorySpec.excited(duration=2.0), cfg, window=0.5, refine=True, seed=4,
                         options=options)
    assert row["initialized"], row.get("error")
    assert row["gravity_error_deg"] < 1.0
    assert row["velocity_error"] < 0.1
    assert row["gravity_success"]
    assert row["variant"] == "refined"
    assert [entry["iteration"] for entry in row["trace"]] == sorted(entry["iteration"] for entry in row["trace"])


@pytest.mark.parametrize("seed", range(5))
def test__minimal_window_noise_free(seed):
    cfg = SimConfig(noise_scale=0.0, pixel_noise=0.0, track_drop_prob=0.0)
    options = InitOptions(track=False)
    row = run_init_trial(TrajectorySpec.excited(duration=2.5), cfg, window=0.1, refine=False, seed=seed,
                         options=options)
    assert row["initialized"], row.get("error")
    assert row["gravity_error_deg"] < 0.5
    assert row["gravity_success"]


@pytest.mark.slow
class Test_minimal_window_study:
    """Three keyframes over 0.1 s at nominal noise"""

    @pytest.fixture(scope="class")
    def study(self):
        options = InitOptions(windows=(0.1,), trials=100, track=False)
        return run_init_study(TrajectorySpec.excited(duration=2.5), SimConfig(), options)

    def _row(self, study, variant):
        table = study.success
        return table[table["variant"] == variant].iloc[0]

    def test_success_rate(self, study):
        refined = self._row(study, "refined")
        assert refined["trials"] == 100
        assert refined["gravity_success"] >= 0.9

    def test_refinement_helps(self, study):
        refined = self._row(study, "refined")
        unrefined = self._row(study, "no_refine")
        assert refined["mean_gravity_error_deg"] < unrefined["mean_gravity_error_deg"]

    def test_gravity_error_decreases_over_iterations(self, study):
        averaged = mean_trace(study.trace)
        curve = averaged[averaged["variant"] == "refined"].sort_values("iteration")["gravity_error_deg"].to_numpy()
        assert curve.size >= 2
        assert curve[-1] < curve[0]
        assert np.all(np.diff(curve) <= 0.05 * curve[0])
