"""Loading, validation, calibration, open-pose derivation, preprocessing."""

import numpy as np
import pytest

from needlemetrics import dsp, rotations, synth
from needlemetrics.ingest import (
    IllConditionedCalibrationError,
    IngestError,
    OpenPoseStream,
    PreprocessConfig,
    TeleRawStream,
    TELE_COLUMNS,
    CalibrationModel,
    calibrate_endpoint,
    derive_open_pose,
    load_manifest,
    load_trial,
    preprocess,
)


def _write_tele(path, rows):
    with open(path, "w") as fh:
        fh.write(",".join(TELE_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


def _tele_row(t, x=(0.0, 0.0, 0.0)):
    eye = np.eye(3).reshape(-1)
    return [t, *x, 0.0, 0.0, 0.0, *eye, 0.0]


class TestLoadTrial:
    def test_three_row_file(self, tmp_path):
        path = tmp_path / "trial.csv"
        _write_tele(path, [_tele_row(0.0), _tele_row(0.0005), _tele_row(0.001)])
        raw = load_trial(path, "teleoperated")
        assert len(raw.t) == 3
        assert raw.x.shape == (3, 3)
        assert raw.rot.shape == (3, 3, 3)

    def test_nan_in_row_2_names_the_row(self, tmp_path):
        path = tmp_path / "trial.csv"
        rows = [_tele_row(0.0), _tele_row(0.0005, x=(float("nan"), 0, 0)), _tele_row(0.001)]
        _write_tele(path, rows)
        with pytest.raises(IngestError, match="row 2"):
            load_trial(path, "teleoperated")

    def test_timestamp_regression_rejected(self, tmp_path):
        path = tmp_path / "trial.csv"
        _write_tele(path, [_tele_row(0.0), _tele_row(0.001), _tele_row(0.0005)])
        with pytest.raises(IngestError, match="timestamp"):
            load_trial(path, "teleoperated")

    def test_header_mismatch(self, tmp_path):
        path = tmp_path / "trial.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(IngestError, match="header"):
            load_trial(path, "teleoperated")

    def test_empty_file(self, tmp_path):
        path = tmp_path / "trial.csv"
        path.write_text(",".join(TELE_COLUMNS) + "\n")
        with pytest.raises(IngestError, match="empty"):
            load_trial(path, "teleoperated")

    def test_2khz_synthetic_second(self, tmp_path):
        script = synth.TrialScript(condition="teleoperated")
        script.transport_legs = [(np.array([-460.0, -60.0, -30.0]), 0.5)]
        script.insertion_duration = 0.3
        script.catch_duration = 0.1995
        trial = synth.generate_trial(script, seed=0)
        path = tmp_path / "trial.csv"
        synth.write_teleoperated_csv(path, trial.raw)
        raw = load_trial(path, "teleoperated")
        assert len(raw.t) == 2000
        assert np.allclose(np.diff(raw.t), 0.0005, atol=1e-9)

    def test_open_roundtrip(self, tmp_path):
        frames = synth.generate_calibration_frames(n_frames=40, seed=3)
        path = tmp_path / "open.csv"
        synth.write_open_csv(path, frames, include_reference=True)
        loaded = load_trial(path, "open")
        assert np.allclose(loaded.x_right, frames.x_right, atol=1e-6)
        assert np.allclose(loaded.rot_left, frames.rot_left, atol=1e-8)
        assert np.allclose(loaded.endpoint_ref, frames.endpoint_ref, atol=1e-6)


class TestManifest:
    def test_duplicate_trial_number_rejected(self, tmp_path):
        rec = {
            "trial_id": "a", "participant_id": "P01", "expertise": "novice",
            "condition": "open", "trial_number": 1, "path": "x.csv",
        }
        rec2 = dict(rec, trial_id="b")
        path = tmp_path / "manifest.json"
        import json

        path.write_text(json.dumps([rec, rec2]))
        with pytest.raises(IngestError, match="duplicate"):
            load_manifest(path)

    def test_missing_field(self, tmp_path):
        import json

        path = tmp_path / "manifest.json"
        path.write_text(json.dumps([{"trial_id": "a"}]))
        with pytest.raises(IngestError, match="missing field"):
            load_manifest(path)

    def test_exclusion_flag_carried(self, tmp_path):
        import json

        rec = {
            "trial_id": "a", "participant_id": "P01", "expertise": "novice",
            "condition": "open", "trial_number": 1, "path": "x.csv",
            "excluded": True, "exclusion_reason": "sensor dropout",
        }
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps([rec]))
        refs = load_manifest(path)
        assert refs[0].excluded and refs[0].exclusion_reason == "sensor dropout"


class TestCalibration:
    def test_noiseless_recovery_reference_mode(self):
        frames = synth.generate_calibration_frames(
            lever_right=[0.0, 20.0, 0.0], lever_left=[0.0, -20.0, 0.0],
            n_frames=60, seed=1, with_reference=True,
        )
        model = calibrate_endpoint(frames)
        assert np.allclose(model.lever_right, [0.0, 20.0, 0.0], atol=1e-6)
        assert np.allclose(model.lever_left, [0.0, -20.0, 0.0], atol=1e-6)
        assert model.residual_rms < 1e-6

    def test_noiseless_recovery_consistency_mode(self):
        frames = synth.generate_calibration_frames(
            lever_right=[3.0, 20.0, -5.0], lever_left=[-2.0, -20.0, 4.0],
            n_frames=80, seed=2, with_reference=False,
        )
        model = calibrate_endpoint(frames)
        assert np.allclose(model.lever_right, [3.0, 20.0, -5.0], atol=1e-6)
        assert np.allclose(model.lever_left, [-2.0, -20.0, 4.0], atol=1e-6)

    def test_noisy_recovery_monte_carlo(self):
        # 1 mm position noise over 200 frames: residual RMS near the noise
        # level and lever-arm error well under 1 mm, across several seeds.
        for seed in range(5):
            frames = synth.generate_calibration_frames(
                n_frames=200, noise_mm=1.0, seed=seed, with_reference=True
            )
            model = calibrate_endpoint(frames)
            assert 0.5 < model.residual_rms < 2.0
            assert np.linalg.norm(model.lever_right - synth.DEFAULT_LEVER_RIGHT) < 1.0
            assert np.linalg.norm(model.lever_left - synth.DEFAULT_LEVER_LEFT) < 1.0

    def test_zero_rotation_is_ill_conditioned(self):
        rng = np.random.default_rng(0)
        n = 50
        from needlemetrics.ingest import TrackerFrames

        rot = np.tile(np.eye(3), (n, 1, 1))
        endpoint = rng.uniform(-50, 50, size=(n, 3))
        frames = TrackerFrames(
            t=np.arange(n) / 120.0,
            x_right=endpoint - synth.DEFAULT_LEVER_RIGHT,
            rot_right=rot.copy(),
            x_left=endpoint - synth.DEFAULT_LEVER_LEFT,
            rot_left=rot.copy(),
        )
        with pytest.raises(IllConditionedCalibrationError):
            calibrate_endpoint(frames)

    def test_too_few_frames(self):
        frames = synth.generate_calibration_frames(n_frames=10, seed=0)
        with pytest.raises(IllConditionedCalibrationError, match="frames"):
            calibrate_endpoint(frames)

    def test_model_roundtrip(self):
        model = CalibrationModel(np.array([1.0, 2.0, 3.0]), np.array([-1.0, 0.0, 4.0]), 0.5)
        again = CalibrationModel.from_dict(model.to_dict())
        assert np.allclose(again.lever_right, model.lever_right)
        assert again.residual_rms == model.residual_rms


def _open_frames_with_phi(phi_values, base_angle=0.0):
    """Tracker frames whose x-axes subtend exactly phi, lever arms zero."""
    n = len(phi_values)
    t = np.arange(n) / 120.0
    z = np.array([0.0, 0.0, 1.0])
    base = rotations.from_axis_angle([0.0, 1.0, 0.0], base_angle)
    rot_r = np.empty((n, 3, 3))
    rot_l = np.empty((n, 3, 3))
    for i, phi in enumerate(phi_values):
        qr = rotations.quaternion_multiply(base, rotations.from_axis_angle(z, -0.5 * phi))
        ql = rotations.quaternion_multiply(base, rotations.from_axis_angle(z, +0.5 * phi))
        rot_r[i] = rotations.quaternion_to_matrix(qr)
        rot_l[i] = rotations.quaternion_to_matrix(ql)
    from needlemetrics.ingest import TrackerFrames

    x = np.zeros((n, 3))
    return TrackerFrames(t=t, x_right=x, rot_right=rot_r, x_left=x.copy(), rot_left=rot_l)


class TestDeriveOpenPose:
    CAL = CalibrationModel(np.zeros(3), np.zeros(3), 0.0)

    def test_perpendicular_axes(self):
        frames = _open_frames_with_phi([np.pi / 2] * 35)
        pose = derive_open_pose(frames, self.CAL)
        assert np.allclose(pose.phi, np.pi / 2, atol=1e-12)

    def test_identical_axes(self):
        frames = _open_frames_with_phi([0.0] * 35)
        pose = derive_open_pose(frames, self.CAL)
        assert np.allclose(pose.phi, 0.0, atol=1e-12)

    def test_linear_opening_is_linear(self):
        target = np.linspace(0.0, 0.3, 50)
        frames = _open_frames_with_phi(target, base_angle=0.7)
        pose = derive_open_pose(frames, self.CAL)
        # arccos loses ~sqrt(eps) precision exactly at phi = 0; elsewhere the
        # trace must be linear to full precision.
        assert pose.phi[0] < 5e-8
        assert np.allclose(pose.phi[1:], target[1:], atol=1e-9)

    def test_endpoint_is_midpoint_of_estimates(self):
        frames = synth.generate_calibration_frames(n_frames=40, seed=5)
        model = calibrate_endpoint(frames)
        pose = derive_open_pose(frames, model)
        end_r = frames.x_right + frames.rot_right @ model.lever_right
        end_l = frames.x_left + frames.rot_left @ model.lever_left
        assert np.allclose(pose.x, 0.5 * (end_r + end_l), atol=1e-9)

    def test_rigid_transform_preserves_endpoint_distances(self):
        frames = synth.generate_calibration_frames(n_frames=40, seed=6)
        model = calibrate_endpoint(frames)
        pose = derive_open_pose(frames, model)

        rot = rotations.quaternion_to_matrix(
            rotations.from_axis_angle([1.0, 2.0, -1.0], 0.9)
        )
        shift = np.array([10.0, -4.0, 2.5])
        from needlemetrics.ingest import TrackerFrames

        moved = TrackerFrames(
            t=frames.t,
            x_right=frames.x_right @ rot.T + shift,
            rot_right=rot @ frames.rot_right,
            x_left=frames.x_left @ rot.T + shift,
            rot_left=rot @ frames.rot_left,
        )
        pose2 = derive_open_pose(moved, model)
        d1 = np.linalg.norm(np.diff(pose.x, axis=0), axis=1)
        d2 = np.linalg.norm(np.diff(pose2.x, axis=0), axis=1)
        assert np.allclose(d1, d2, atol=1e-9)


class TestPreprocess:
    def test_constant_pose_open_has_zero_velocity(self):
        n = 240
        t = np.arange(n) / 120.0
        q = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
        pose = OpenPoseStream(
            t=t, x=np.full((n, 3), 7.0), phi=np.full(n, 0.2),
            q_right=q, q_left=q.copy(),
        )
        trial = preprocess(pose, "open")
        assert np.allclose(trial.x, 7.0, atol=1e-9)
        assert np.allclose(trial.v, 0.0, atol=1e-9)
        assert np.allclose(trial.phi, 0.2, atol=1e-12)

    def test_2s_stream_resamples_to_200_samples(self):
        n = 4000  # 2 kHz stream covering [0, 2) s
        t = np.arange(n) / 2000.0
        raw = TeleRawStream(
            t=t, x=np.zeros((n, 3)), v=np.zeros((n, 3)),
            rot=np.tile(np.eye(3), (n, 1, 1)), phi=np.zeros(n),
        )
        trial = preprocess(raw, "teleoperated")
        assert trial.n_samples == 200
        assert np.allclose(np.diff(trial.t), 0.01, atol=1e-12)

    def test_output_timestamps_exact(self):
        n = 1000
        t0 = 3.25
        t = t0 + np.arange(n) / 2000.0
        raw = TeleRawStream(
            t=t, x=np.zeros((n, 3)), v=np.zeros((n, 3)),
            rot=np.tile(np.eye(3), (n, 1, 1)), phi=np.zeros(n),
        )
        trial = preprocess(raw, "teleoperated")
        expect = t0 + np.arange(trial.n_samples) / 100.0
        assert np.array_equal(trial.t, expect) or np.allclose(trial.t, expect, atol=1e-12)

    def test_minimum_jerk_positions_survive_filtering(self):
        rate = 2000.0
        duration = 1.5
        t = np.arange(int(rate * duration) + 1) / rate
        pos, vel = synth.minimum_jerk([0.0, 0.0, 0.0], [80.0, -40.0, 20.0], duration, t)
        raw = TeleRawStream(
            t=t, x=pos, v=vel, rot=np.tile(np.eye(3), (len(t), 1, 1)),
            phi=np.zeros(len(t)),
        )
        trial = preprocess(raw, "teleoperated")
        truth, _ = synth.minimum_jerk(
            [0.0, 0.0, 0.0], [80.0, -40.0, 20.0], duration, trial.t
        )
        assert np.max(np.abs(trial.x - truth)) < 0.1

    def test_quaternions_unit_after_preprocess(self):
        script = synth.TrialScript(condition="teleoperated")
        trial_raw = synth.generate_trial(script, seed=0)
        trial = preprocess(trial_raw.raw, "teleoperated")
        norms = np.linalg.norm(trial.q, axis=1)
        assert np.allclose(norms, 1.0, atol=1e-9)

    def test_deterministic(self):
        script = synth.TrialScript(condition="teleoperated", pos_noise_mm=0.1)
        raw = synth.generate_trial(script, seed=4).raw
        a = preprocess(raw, "teleoperated")
        b = preprocess(raw, "teleoperated")
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.v, b.v)
        assert np.array_equal(a.q, b.q)

    def test_tele_keeps_recorded_velocity(self):
        n = 2000
        t = np.arange(n) / 2000.0
        v = np.column_stack([np.full(n, 5.0), np.zeros(n), np.zeros(n)])
        raw = TeleRawStream(
            t=t, x=np.zeros((n, 3)), v=v,
            rot=np.tile(np.eye(3), (n, 1, 1)), phi=np.zeros(n),
        )
        trial = preprocess(raw, "teleoperated")
        # Position is constant, but the recorded channel is retained as-is.
        assert np.allclose(trial.v[:, 0], 5.0, atol=1e-9)
        rederived = preprocess(
            raw, "teleoperated", PreprocessConfig(rederive_tele_velocity=True)
        )
        assert np.allclose(rederived.v, 0.0, atol=1e-9)

    def test_open_needs_calibration_for_tracker_frames(self):
        frames = synth.generate_calibration_frames(n_frames=40, seed=7)
        with pytest.raises(IngestError, match="calibration"):
            preprocess(frames, "open")
