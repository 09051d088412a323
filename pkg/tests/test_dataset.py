import os

import numpy as np
import pytest

from core.errors import DataError, MalformedRow, MissingFile, NonMonotonicTimestamps, UnitsAmbiguous
from dataset import export_run, load_calibration, load_sequence
from dataset.asl import count_gaps, load_imu, load_tracks, load_truth
from dataset.calibration import calibration_from_dict, read_section, write_calibration
from sim.world import SimConfig, TrajectorySpec, synthesize

CALIBRATION = """{
  // EuRoC-like camera
  camera: {model: "radtan", fx_px: 458.654, fy_px: 457.296, cx_px: 367.215, cy_px: 248.375,
           coeffs: [0.0, 0.0, 0.0, 0.0], width_px: 752, height_px: 480, time_offset_ms: 2.0},
  extrinsics: {R_CI: [[0, -1, 0], [0, 0, -1], [1, 0, 0]], p_IinC_mm: [0.0, 20.0, -50.0]},
  imu: {gyro_noise_rad_s_sqrthz: 2e-4, gyro_walk_rad_s2_sqrthz: 2e-5,
        accel_noise_m_s2_sqrthz: 5e-4, accel_walk_m_s3_sqrthz: 4e-4, rate_hz: 200},
  gravity_m_s2: 9.81,
}
"""

IMU_CSV = """t_ns,wx,wy,wz,ax,ay,az
0,0.0,0.0,0.0,0.0,0.0,9.81
5000000,0.1,0.0,0.0,0.0,0.0,9.81
10000000,0.2,0.0,0.0,0.0,0.0,9.81
15000000,0.3,0.0,0.0,0.0,0.0,9.81
20000000,0.4,0.0,0.0,0.0,0.0,9.81
"""

TRACKS_CSV = """t_ns,fid,u,v
0,1,100.0,200.0
0,2,300.5,120.25
10000000,1,101.0,200.5
20000000,1,102.0,201.0
20000000,3,50.0,60.0
"""

TRUTH_CSV = """t_ns,px,py,pz,qw,qx,qy,qz,vx,vy,vz
0,0.0,0.0,1.0,1.0,0.0,0.0,0.0,0.0,0.0,0.0
10000000,0.1,0.0,1.0,1.0,0.0,0.0,0.0,10.0,0.0,0.0
20000000,0.2,0.0,1.0,1.0,0.0,0.0,0.0,10.0,0.0,0.0
"""


def _write(root, name, text):
    path = os.path.join(str(root), name)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    return path


@pytest.fixture
def sequence_root(tmp_path):
    _write(tmp_path, "calibration.json5", CALIBRATION)
    _write(tmp_path, "imu0/data.csv", IMU_CSV)
    _write(tmp_path, "tracks0/data.csv", TRACKS_CSV)
    _write(tmp_path, "state_groundtruth_estimate0/data.csv", TRUTH_CSV)
    return tmp_path


class Test_load_sequence:
    def test_streams(self, sequence_root):
        sequence = load_sequence(str(sequence_root))
        np.testing.assert_array_equal(sequence.imu_t_ns, [0, 5000000, 10000000, 15000000, 20000000])
        np.testing.assert_array_almost_equal(sequence.gyro[:, 0], [0.0, 0.1, 0.2, 0.3, 0.4])
        np.testing.assert_array_equal(sequence.frame_t_ns, [0, 10000000, 20000000])
        assert sorted(sequence.frames[0]) == [1, 2]
        np.testing.assert_array_equal(sequence.frames[0][2], [300.5, 120.25])
        assert sorted(sequence.frames[2]) == [1, 3]

    def test_summary(self, sequence_root):
        summary = load_sequence(str(sequence_root)).summary
        assert summary["duration_s"] == pytest.approx(0.02)
        assert summary["imu_rate_hz"] == pytest.approx(200.0)
        assert summary["camera_rate_hz"] == pytest.approx(100.0)
        assert summary["frames"] == 3
        assert summary["observations"] == 5
        assert summary["tracks"] == 3
        assert summary["ground_truth"] is True

    def test_time_offset_applied(self, sequence_root):
        sequence = load_sequence(str(sequence_root))
        assert sequence.frame_list()[0][0] == pytest.approx(0.002)

    def test_truth_quaternion_convention(self, sequence_root):
        truth = load_sequence(str(sequence_root)).truth
        np.testing.assert_array_equal(truth.q[0], [0.0, 0.0, 0.0, 1.0])
        np.testing.assert_array_almost_equal(truth.positions_at([5000000]), [[0.05, 0.0, 1.0]])

    def test_without_truth(self, sequence_root):
        os.remove(os.path.join(str(sequence_root), "state_groundtruth_estimate0", "data.csv"))
        sequence = load_sequence(str(sequence_root))
        assert sequence.truth is None
        assert sequence.summary["ground_truth"] is False

    def test_missing_imu(self, sequence_root):
        os.remove(os.path.join(str(sequence_root), "imu0", "data.csv"))
        with pytest.raises(MissingFile):
            load_sequence(str(sequence_root))

    def test_listed_frames_must_cover_tracks(self, sequence_root):
        _write(sequence_root, "cam0/data.csv", "t_ns\n0\n20000000\n")
        with pytest.raises(MalformedRow):
            load_sequence(str(sequence_root))

    def test_undistorted_header_required(self, sequence_root):
        _write(sequence_root, "calibration.json5", CALIBRATION.replace("gravity_m_s2: 9.81,",
                                                                       "gravity_m_s2: 9.81, tracks_undistorted: true,"))
        with pytest.raises(UnitsAmbiguous):
            load_sequence(str(sequence_root))


class Test_parsing:
    def test_shuffled_timestamps(self, tmp_path):
        lines = IMU_CSV.splitlines()
        path = _write(tmp_path, "imu.csv", "\n".join([lines[0], lines[1], lines[3], lines[2]]) + "\n")
        with pytest.raises(NonMonotonicTimestamps):
            load_imu(path)

    def test_corrupt_value(self, tmp_path):
        path = _write(tmp_path, "imu.csv", IMU_CSV.replace("10000000,0.2", "10000000,abc"))
        with pytest.raises(MalformedRow) as excinfo:
            load_imu(path)
        assert excinfo.value.line_number == 4
        assert ":4" in str(excinfo.value)

    def test_corrupt_timestamp(self, tmp_path):
        path = _write(tmp_path, "tracks.csv", TRACKS_CSV.replace("10000000,1,", "1e7,1,"))
        with pytest.raises(MalformedRow) as excinfo:
            load_tracks(path)
        assert excinfo.value.line_number == 4

    def test_unexpected_header(self, tmp_path):
        path = _write(tmp_path, "imu.csv", IMU_CSV.replace("t_ns,wx", "time,wx"))
        with pytest.raises(MalformedRow) as excinfo:
            load_imu(path)
        assert excinfo.value.line_number == 1

    def test_euroc_header_read_positionally(self, tmp_path):
        path = _write(tmp_path, "imu.csv", IMU_CSV.replace("t_ns,wx,wy,wz,ax,ay,az",
                                                           "#timestamp [ns],w_x,w_y,w_z,a_x,a_y,a_z"))
        t_ns, gyro, accel = load_imu(path)
        assert t_ns.size == 5
        np.testing.assert_array_almost_equal(accel[:, 2], np.full(5, 9.81))

    def test_duplicate_observation(self, tmp_path):
        path = _write(tmp_path, "tracks.csv", TRACKS_CSV + "20000000,3,51.0,61.0\n")
        with pytest.raises(MalformedRow):
            load_tracks(path)

    def test_undistorted_tracks(self, tmp_path):
        path = _write(tmp_path, "tracks.csv", TRACKS_CSV.replace("t_ns,fid,u,v", "t_ns,fid,u_undist,v_undist"))
        table, undistorted = load_tracks(path)
        assert undistorted
        assert list(table.columns) == ["t_ns", "fid", "u", "v"]

    def test_truth_non_monotonic(self, tmp_path):
        lines = TRUTH_CSV.splitlines()
        path = _write(tmp_path, "truth.csv", "\n".join([lines[0], lines[1], lines[1]]) + "\n")
        with pytest.raises(NonMonotonicTimestamps):
            load_truth(path)


@pytest.mark.parametrize("t_ns, gaps", [([0, 1, 2, 3], 0), ([0, 1, 2, 10, 11], 1), ([0, 1], 0)])
def test__count_gaps(t_ns, gaps):
    assert count_gaps(np.array(t_ns)) == gaps


class Test_calibration:
    def test_units_converted(self, tmp_path):
        calibration = load_calibration(_write(tmp_path, "calibration.json5", CALIBRATION))
        np.testing.assert_array_almost_equal(calibration.camera.p_IinC, [0.0, 0.02, -0.05])
        assert calibration.camera.time_offset == pytest.approx(0.002)
        assert calibration.imu_rate_hz == pytest.approx(200.0)
        assert calibration.noise.sigma_g == pytest.approx(2e-4)

    def test_missing_unit(self):
        with pytest.raises(UnitsAmbiguous):
            read_section({"fx": 450.0}, "camera")

    def test_unknown_unit(self):
        with pytest.raises(UnitsAmbiguous):
            read_section({"time_offset_min": 1.0}, "camera")

    def test_quantity_twice(self):
        with pytest.raises(UnitsAmbiguous):
            read_section({"time_offset_s": 0.001, "time_offset_ms": 1.0}, "camera")

    def test_unknown_key_ignored(self):
        assert read_section({"fx_px": 1.0, "comment_text": 2.0}, "camera") == {"fx": 1.0}

    def test_missing_section(self):
        with pytest.raises(DataError):
            calibration_from_dict({"camera": {}, "imu": {}})

    def test_rotation_and_quaternion_exclusive(self, tmp_path):
        doc = CALIBRATION.replace("R_CI: [[0, -1, 0], [0, 0, -1], [1, 0, 0]],",
                                  "R_CI: [[0, -1, 0], [0, 0, -1], [1, 0, 0]], q_CI: [0, 0, 0, 1],")
        with pytest.raises(UnitsAmbiguous):
            load_calibration(_write(tmp_path, "calibration.json5", doc))

    def test_not_a_rotation(self, tmp_path):
        doc = CALIBRATION.replace("[[0, -1, 0], [0, 0, -1], [1, 0, 0]]", "[[2, 0, 0], [0, 1, 0], [0, 0, 1]]")
        with pytest.raises(DataError):
            load_calibration(_write(tmp_path, "calibration.json5", doc))

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingFile):
            load_calibration(os.path.join(str(tmp_path), "nope.json5"))

    def test_write_then_load(self, tmp_path):
        original = load_calibration(_write(tmp_path, "calibration.json5", CALIBRATION))
        path = os.path.join(str(tmp_path), "copy.json5")
        write_calibration(path, original)
        loaded = load_calibration(path)
        np.testing.assert_array_equal(loaded.camera.R_CI, original.camera.R_CI)
        np.testing.assert_array_equal(loaded.camera.p_IinC, original.camera.p_IinC)
        assert loaded.camera.fx == original.camera.fx
        assert loaded.noise == original.noise


def test__export_run_reloads(tmp_path):
    run = synthesize(TrajectorySpec(duration=0.5, feature_count=300), SimConfig())
    root = os.path.join(str(tmp_path), "seq")
    export_run(run, root)
    sequence = load_sequence(root)
    np.testing.assert_array_equal(sequence.imu_t_ns, run.imu_t_ns)
    np.testing.assert_array_equal(sequence.gyro, run.gyro)
    np.testing.assert_array_equal(sequence.accel, run.accel)
    np.testing.assert_array_equal(sequence.frame_t_ns, run.frame_t_ns)
    for loaded, original in zip(sequence.frames, run.frames):
        assert sorted(loaded) == sorted(original)
        for fid in original:
            np.testing.assert_array_equal(loaded[fid], original[fid])
    np.testing.assert_array_equal(sequence.truth.q, run.truth.q)
    np.testing.assert_array_equal(sequence.truth.p, run.truth.p)
    assert sequence.calibration.noise == run.cfg.filter_noise
    assert sequence.calibration.pixel_noise == run.cfg.filter_pixel_sigma
