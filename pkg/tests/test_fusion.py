import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skelfuse.fusion import (
    JointStatus,
    NoiseConfig,
    TrackState,
    calibrate_sigma_r,
    gate_confidence,
    inflate_variance,
    measurement_variance,
    new_track_state,
    outlier_threshold,
    predict,
    prediction_steps,
    update,
)
from skelfuse.ingest import JointObservation, SkeletonDetection
from skelfuse.kalman import cv_process_noise, cv_transition
from skelfuse.model import N_JOINTS


def full_detection(positions, t=0.0, conf=1.0, camera="cam0"):
    pos = np.asarray(positions, dtype=float)
    if pos.ndim == 1:
        pos = np.tile(pos, (N_JOINTS, 1))
    c = np.full(N_JOINTS, conf) if np.isscalar(conf) else np.asarray(conf, float)
    return SkeletonDetection(camera, t, pos, c)


def base_pose(rng=None, spread=1.0):
    rng = rng or np.random.default_rng(0)
    return rng.normal(scale=spread, size=(N_JOINTS, 3))


def fresh_track(pose, cfg, t=0.0):
    state, _ = new_track_state(0, full_detection(pose, t), cfg)
    return state


class TestPredict:
    def test_three_steps_arithmetic(self):
        cfg = NoiseConfig(dt=0.033)
        track = fresh_track(np.zeros((N_JOINTS, 3)), cfg)
        track.means[:, 3] = 1.0  # 1 m/s along x for every joint
        out = predict(track, 3 * 0.033, cfg)
        np.testing.assert_allclose(out.means[:, 0], 0.099, atol=1e-12)
        np.testing.assert_allclose(out.means[:, 3], 1.0, atol=1e-12)

    def test_zero_gap_unchanged(self):
        cfg = NoiseConfig()
        track = fresh_track(base_pose(), cfg)
        out = predict(track, 0.0, cfg)
        np.testing.assert_array_equal(out.means, track.means)
        np.testing.assert_array_equal(out.covs, track.covs)

    def test_rounding_of_fractional_gaps(self):
        assert prediction_steps(0.0, 0.033) == 0
        assert prediction_steps(0.016, 0.033) == 0
        assert prediction_steps(0.017, 0.033) == 1
        assert prediction_steps(3 * 0.033, 0.033) == 3
        assert prediction_steps(-1.0, 0.033) == 0

    def test_n_step_covariance_closed_form(self):
        cfg = NoiseConfig(sigma_q2=2.5, dt=0.033)
        track = fresh_track(base_pose(), cfg)
        n = 7
        out = predict(track, n * cfg.dt, cfg)
        F = cv_transition(cfg.dt)
        Q = cv_process_noise(cfg.dt, cfg.sigma_q2)
        Fn = np.linalg.matrix_power(F, n)
        for m in range(N_JOINTS):
            expected = Fn @ track.covs[m] @ Fn.T
            for k in range(n):
                Fk = np.linalg.matrix_power(F, k)
                expected += Fk @ Q @ Fk.T
            np.testing.assert_allclose(out.covs[m], expected, atol=1e-9)

    def test_gap_equals_n_single_steps(self):
        cfg = NoiseConfig(sigma_q2=0.7)
        track = fresh_track(base_pose(), cfg)
        track.means[:, 3:] = 0.3
        n = 5
        multi = predict(track, n * cfg.dt, cfg)
        single = track
        for _ in range(n):
            single = predict(single, single.last_update + cfg.dt, cfg)
        np.testing.assert_allclose(single.means, multi.means, atol=1e-12)
        np.testing.assert_allclose(single.covs, multi.covs, atol=1e-9)

    def test_stale_gap_clamped(self):
        cfg = NoiseConfig()
        track = fresh_track(base_pose(), cfg, t=5.0)
        out = predict(track, 4.0, cfg)
        np.testing.assert_array_equal(out.means, track.means)


class TestMeasurementVariance:
    def test_full_confidence_identity(self):
        cfg = NoiseConfig(sigma_r2=0.01)
        assert measurement_variance(1.0, cfg) == pytest.approx(0.01, abs=1e-15)

    def test_half_confidence_doubles(self):
        cfg = NoiseConfig(sigma_r2=0.01)
        assert measurement_variance(0.5, cfg) == pytest.approx(0.02, abs=1e-12)

    def test_point_eight(self):
        cfg = NoiseConfig(sigma_r2=0.01)
        assert measurement_variance(0.8, cfg) == pytest.approx(0.0125, abs=1e-12)

    def test_confidence_underflow(self):
        cfg = NoiseConfig()
        with pytest.raises(ValueError, match="confidence underflow"):
            measurement_variance(0.0, cfg)
        with pytest.raises(ValueError):
            measurement_variance(-0.2, cfg)


class TestGateConfidence:
    def test_confident_observation_passes(self):
        cfg = NoiseConfig(sigma_r2=0.01)
        obs = JointObservation([1.0, 2.0, 3.0], 0.9)
        z, var, sub = gate_confidence(obs, np.zeros(3), cfg)
        np.testing.assert_array_equal(z, [1.0, 2.0, 3.0])
        assert var == pytest.approx(0.01 / 0.9, abs=1e-12)
        assert not sub

    def test_low_confidence_substituted(self):
        cfg = NoiseConfig(sigma_r2=0.01)
        obs = JointObservation([1.0, 2.0, 3.0], 0.4)
        pred = np.array([9.0, 9.0, 9.0])
        z, var, sub = gate_confidence(obs, pred, cfg)
        np.testing.assert_array_equal(z, pred)
        assert var == 0.01
        assert sub

    def test_boundary_inclusive(self):
        cfg = NoiseConfig(sigma_r2=0.01)
        obs = JointObservation([1.0, 2.0, 3.0], 0.5)
        z, var, sub = gate_confidence(obs, np.zeros(3), cfg)
        assert not sub
        assert var == pytest.approx(0.02, abs=1e-12)

    def test_absent_joint_substituted(self):
        cfg = NoiseConfig()
        pred = np.array([1.0, 1.0, 1.0])
        z, var, sub = gate_confidence(None, pred, cfg)
        np.testing.assert_array_equal(z, pred)
        assert sub


class TestOutlierThreshold:
    def test_paper_values(self):
        cfg = NoiseConfig(outlier_multiplier=1.25)
        assert outlier_threshold([0.1, 0.2, 0.15], cfg) == pytest.approx(0.25, abs=1e-12)

    def test_single_zero_entry(self):
        cfg = NoiseConfig()
        assert outlier_threshold([0.0], cfg) == 0.0

    def test_empty_history_is_infinite(self):
        cfg = NoiseConfig()
        assert outlier_threshold([], cfg) == math.inf

    def test_linear_scan_oracle(self, rng):
        cfg = NoiseConfig(outlier_multiplier=1.25)
        hist = list(rng.uniform(0, 1, size=15))
        expected = 1.25 * max(hist)
        assert outlier_threshold(hist, cfg) == pytest.approx(expected, abs=1e-12)


class TestInflateVariance:
    def test_double(self):
        assert inflate_variance(0.5, 0.25, 0.02) == pytest.approx(0.04, abs=1e-12)

    def test_continuity_at_boundary(self):
        assert inflate_variance(0.25 + 1e-12, 0.25, 0.02) == pytest.approx(0.02, rel=1e-9)

    def test_ten_times(self):
        assert inflate_variance(2.5, 0.25, 0.02) == pytest.approx(0.2, abs=1e-12)

    def test_zero_threshold_capped(self):
        assert inflate_variance(0.5, 0.0, 0.02) == pytest.approx(2.0, abs=1e-12)
        assert inflate_variance(1e9, 1e-12, 0.02, max_inflation=100.0) == pytest.approx(2.0)


def run_updates(track, cfg, detections):
    reports = []
    for det in detections:
        track = predict(track, det.timestamp, cfg)
        track, rep = update(track, det, cfg)
        reports.append(rep)
    return track, reports


class TestUpdate:
    def test_noiseless_static_convergence(self):
        cfg = NoiseConfig(sigma_q2=1.0, sigma_r2=4e-4, dt=0.033)
        pose = base_pose()
        track = fresh_track(pose, cfg, t=0.0)
        track.means[:, 3:] = 0.5  # wrong initial velocity must die out
        dets = [full_detection(pose, t=(k + 1) * cfg.dt) for k in range(100)]
        track, _ = run_updates(track, cfg, dets)
        assert np.abs(track.means[:, 3:]).max() < 1e-3
        np.testing.assert_allclose(track.means[:, :3], pose, atol=1e-4)

    def test_plain_kalman_reduction(self, rng):
        # All confidences 1 and no flagged outliers: must equal a plain
        # per-joint Kalman filter at base variance, computed independently.
        cfg = NoiseConfig(
            sigma_q2=0.5, sigma_r2=4e-4, dt=0.033, outlier_multiplier=math.inf
        )
        pose = base_pose(rng)
        track = fresh_track(pose, cfg, t=0.0)

        means = track.means.copy()
        covs = track.covs.copy()
        F = cv_transition(cfg.dt)
        Q = cv_process_noise(cfg.dt, cfg.sigma_q2)
        H = np.zeros((3, 6))
        H[:, :3] = np.eye(3)
        R = cfg.sigma_r2 * np.eye(3)

        for k in range(20):
            t = (k + 1) * cfg.dt
            z_all = pose + rng.normal(scale=0.005, size=(N_JOINTS, 3))
            det = full_detection(z_all, t=t)
            track = predict(track, t, cfg)
            track, rep = update(track, det, cfg)
            assert all(s is JointStatus.ACCEPTED for s in rep.statuses)
            for m in range(N_JOINTS):
                means[m] = F @ means[m]
                covs[m] = F @ covs[m] @ F.T + Q
                S = H @ covs[m] @ H.T + R
                K = covs[m] @ H.T @ np.linalg.inv(S)
                means[m] = means[m] + K @ (z_all[m] - H @ means[m])
                IKH = np.eye(6) - K @ H
                covs[m] = IKH @ covs[m] @ IKH.T + K @ R @ K.T
        np.testing.assert_allclose(track.means, means, atol=1e-12)
        np.testing.assert_allclose(track.covs, covs, atol=1e-12)

    def test_spike_inflation_reduces_displacement(self):
        cfg = NoiseConfig(sigma_r2=4e-4, dt=0.033, outlier_multiplier=1.25)
        pose = np.zeros((N_JOINTS, 3))
        track = fresh_track(pose, cfg, t=0.0)
        # Seed small jump history -> threshold about 0.05 m.
        for m in range(N_JOINTS):
            track.histories[m].extend([0.04] * 5)
        spike = pose.copy()
        spike[0, 0] = 1.0

        det = full_detection(spike, t=cfg.dt)
        inflated_track, rep = update(predict(track, cfg.dt, cfg), det, cfg)
        assert rep.statuses[0] is JointStatus.INFLATED
        assert rep.variances[0] == pytest.approx(
            cfg.sigma_r2 * 1.0 / outlier_threshold([0.04] * 5, cfg), rel=1e-9
        )

        nominal_cfg = NoiseConfig(sigma_r2=4e-4, dt=0.033, outlier_multiplier=math.inf)
        nominal_track, rep2 = update(predict(track, cfg.dt, cfg), det, nominal_cfg)
        assert rep2.statuses[0] is JointStatus.ACCEPTED
        moved_inflated = abs(inflated_track.means[0, 0])
        moved_nominal = abs(nominal_track.means[0, 0])
        assert moved_inflated < moved_nominal

    def test_exact_inflation_factor(self):
        # Threshold exactly 0.25 (history max 0.2, w = 1.25); 0.5 m jump
        # doubles the confidence-scaled variance.
        cfg = NoiseConfig(sigma_r2=0.01, dt=0.033)
        pose = np.zeros((N_JOINTS, 3))
        track = fresh_track(pose, cfg, t=0.0)
        track.histories[0].append(0.2)
        spike = pose.copy()
        spike[0, 0] = 0.5
        det = full_detection(spike, t=0.0, conf=0.5)
        _, rep = update(track, det, cfg)
        assert rep.statuses[0] is JointStatus.INFLATED
        assert rep.variances[0] == pytest.approx(2.0 * (0.01 / 0.5), rel=1e-12)

    def test_third_consecutive_outlier_accepted(self):
        cfg = NoiseConfig(sigma_r2=4e-4, dt=0.033, outlier_max_consecutive=2)
        pose = np.zeros((N_JOINTS, 3))
        track = fresh_track(pose, cfg, t=0.0)
        for m in range(N_JOINTS):
            track.histories[m].append(0.04)
        spike = pose.copy()
        spike[0] = (0.5, 0.0, 0.0)
        statuses = []
        variances = []
        for k in range(3):
            det = full_detection(spike, t=(k + 1) * cfg.dt)
            track = predict(track, det.timestamp, cfg)
            track, rep = update(track, det, cfg)
            statuses.append(rep.statuses[0])
            variances.append(rep.variances[0])
        assert statuses == [
            JointStatus.INFLATED, JointStatus.INFLATED, JointStatus.ACCEPTED,
        ]
        assert variances[2] == pytest.approx(cfg.sigma_r2, rel=1e-12)
        assert track.outlier_counts[0] == 0

    def test_absent_joint_substituted_and_covariance_updates(self):
        cfg = NoiseConfig()
        pose = base_pose()
        track = fresh_track(pose, cfg, t=0.0)
        pos = pose.copy()
        pos[2] = np.nan
        det = SkeletonDetection("cam0", cfg.dt, pos, np.ones(N_JOINTS))
        track2 = predict(track, cfg.dt, cfg)
        prior_mean = track2.means[2].copy()
        track2, rep = update(track2, det, cfg)
        assert rep.statuses[2] is JointStatus.SUBSTITUTED
        np.testing.assert_allclose(track2.means[2], prior_mean, atol=1e-12)

    def test_lazy_initialization_of_new_joint(self):
        cfg = NoiseConfig()
        pos = np.full((N_JOINTS, 3), np.nan)
        pos[0] = (1.0, 1.0, 1.0)
        det0 = SkeletonDetection("cam0", 0.0, pos, np.ones(N_JOINTS))
        track, rep0 = new_track_state(0, det0, cfg)
        assert rep0.statuses[0] is JointStatus.ACCEPTED
        assert rep0.statuses[1] is JointStatus.UNTRACKED
        assert not track.initialized[1]

        pos2 = pos.copy()
        pos2[1] = (2.0, 2.0, 2.0)
        det1 = SkeletonDetection("cam0", cfg.dt, pos2, np.ones(N_JOINTS))
        track = predict(track, cfg.dt, cfg)
        track, rep1 = update(track, det1, cfg)
        assert rep1.statuses[1] is JointStatus.ACCEPTED
        np.testing.assert_array_equal(track.means[1, :3], [2.0, 2.0, 2.0])

    def test_low_confidence_first_sight_stays_untracked(self):
        cfg = NoiseConfig()
        pos = np.full((N_JOINTS, 3), np.nan)
        pos[0] = (1.0, 1.0, 1.0)
        pos[1] = (0.0, 0.0, 0.0)
        conf = np.zeros(N_JOINTS)
        conf[0] = 1.0
        conf[1] = 0.3
        det = SkeletonDetection("cam0", 0.0, pos, conf)
        track, rep = new_track_state(0, det, cfg)
        assert rep.statuses[1] is JointStatus.UNTRACKED
        assert not track.initialized[1]

    @settings(max_examples=20, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000))
    def test_covariance_stays_spd(self, seed):
        rng = np.random.default_rng(seed)
        cfg = NoiseConfig(sigma_q2=float(rng.uniform(0.1, 10)))
        pose = base_pose(rng)
        track = fresh_track(pose, cfg, t=0.0)
        t = 0.0
        for _ in range(30):
            if rng.random() < 0.5:
                t += float(rng.uniform(0, 0.2))
                track = predict(track, t, cfg)
            else:
                noisy = pose + rng.normal(scale=0.05, size=(N_JOINTS, 3))
                conf = rng.uniform(0.2, 1.0, N_JOINTS)
                track, _ = update(track, full_detection(noisy, t=t, conf=conf), cfg)
            for m in range(N_JOINTS):
                eig = np.linalg.eigvalsh(track.covs[m])
                assert eig.min() > 0

    def test_inflated_update_never_moves_mean_further(self, rng):
        # Kalman gain is monotone in measurement variance per axis.
        cfg = NoiseConfig(sigma_r2=4e-4)
        pose = base_pose(rng)
        track = fresh_track(pose, cfg, t=0.0)
        for m in range(N_JOINTS):
            track.histories[m].append(0.02)
        noisy = pose + rng.normal(scale=0.2, size=(N_JOINTS, 3))
        det = full_detection(noisy, t=cfg.dt)
        predicted = predict(track, cfg.dt, cfg)
        with_outliers, rep = update(predicted, det, cfg)
        without_cfg = NoiseConfig(sigma_r2=4e-4, outlier_multiplier=math.inf)
        without, _ = update(predicted, det, without_cfg)
        assert any(s is JointStatus.INFLATED for s in rep.statuses)
        for m in range(N_JOINTS):
            d_inf = np.abs(with_outliers.means[m, :3] - predicted.means[m, :3])
            d_nom = np.abs(without.means[m, :3] - predicted.means[m, :3])
            assert (d_inf <= d_nom + 1e-15).all()

    def test_forced_accept_jump_not_pushed_to_history(self):
        cfg = NoiseConfig(sigma_r2=4e-4, outlier_max_consecutive=2)
        pose = np.zeros((N_JOINTS, 3))
        track = fresh_track(pose, cfg, t=0.0)
        track.histories[0].append(0.04)
        spike = pose.copy()
        spike[0] = (0.5, 0.0, 0.0)
        hist_before = list(track.histories[0])
        for k in range(3):
            det = full_detection(spike, t=(k + 1) * cfg.dt)
            track = predict(track, det.timestamp, cfg)
            track, rep = update(track, det, cfg)
        assert list(track.histories[0]) == hist_before


class TestBlockEquivalence:
    def test_matches_monolithic_filter(self, rng):
        # The per-joint filters stacked must equal one 90-state filter with
        # block-diagonal F, Q, H, R.
        cfg = NoiseConfig(
            sigma_q2=1.3, sigma_r2=4e-4, dt=0.033, outlier_multiplier=math.inf
        )
        pose = base_pose(rng)
        track = fresh_track(pose, cfg, t=0.0)

        D = 6 * N_JOINTS
        F = np.kron(np.eye(N_JOINTS), cv_transition(cfg.dt))
        Q = np.kron(np.eye(N_JOINTS), cv_process_noise(cfg.dt, cfg.sigma_q2))
        H = np.zeros((3 * N_JOINTS, D))
        for m in range(N_JOINTS):
            H[3 * m : 3 * m + 3, 6 * m : 6 * m + 3] = np.eye(3)
        x = track.means.reshape(-1)
        P = np.zeros((D, D))
        for m in range(N_JOINTS):
            P[6 * m : 6 * m + 6, 6 * m : 6 * m + 6] = track.covs[m]

        for k in range(40):
            t = (k + 1) * cfg.dt
            z = pose + rng.normal(scale=0.01, size=(N_JOINTS, 3))
            conf = rng.uniform(0.55, 1.0, N_JOINTS)
            det = full_detection(z, t=t, conf=conf)
            track = predict(track, t, cfg)
            track, _ = update(track, det, cfg)

            x = F @ x
            P = F @ P @ F.T + Q
            r = np.repeat(cfg.sigma_r2 / conf, 3)
            S = H @ P @ H.T + np.diag(r)
            K = P @ H.T @ np.linalg.inv(S)
            x = x + K @ (z.reshape(-1) - H @ x)
            IKH = np.eye(D) - K @ H
            P = IKH @ P @ IKH.T + K @ np.diag(r) @ K.T

        np.testing.assert_allclose(track.means.reshape(-1), x, atol=1e-9)
        for m in range(N_JOINTS):
            np.testing.assert_allclose(
                track.covs[m], P[6 * m : 6 * m + 6, 6 * m : 6 * m + 6], atol=1e-9
            )


class TestCalibrate:
    def test_static_sequence_zero(self):
        pose = base_pose()
        dets = [full_detection(pose, t=k * 0.033) for k in range(10)]
        assert calibrate_sigma_r(dets) == pytest.approx(0.0, abs=1e-20)

    def test_mean_of_axis_deviations(self):
        # Per-axis deviations 0.01 / 0.03 / 0.02 on x / y / z for every
        # joint; the average deviation is 0.02, squared 4e-4.
        pose = np.zeros((N_JOINTS, 3))
        dets = []
        for k in range(2):
            sign = 1.0 if k == 0 else -1.0
            p = pose + sign * np.array([0.01, 0.03, 0.02])
            dets.append(full_detection(p, t=float(k)))
        assert calibrate_sigma_r(dets) == pytest.approx(0.02**2, abs=1e-15)

    def test_recovers_known_noise(self, rng):
        pose = base_pose(rng)
        sigma = 0.01
        dets = [
            full_detection(pose + rng.normal(scale=sigma, size=(N_JOINTS, 3)), t=k * 0.02)
            for k in range(450)
        ]
        est = math.sqrt(calibrate_sigma_r(dets))
        assert abs(est - sigma) / sigma < 0.15

    def test_insufficient_samples(self):
        dets = [full_detection(base_pose(), t=0.0)]
        with pytest.raises(ValueError, match="insufficient"):
            calibrate_sigma_r(dets)


class TestNoiseConfig:
    def test_defaults_match_reference_values(self):
        cfg = NoiseConfig()
        assert cfg.dt == 0.033
        assert cfg.confidence_floor == 0.5
        assert cfg.outlier_window == 15
        assert cfg.outlier_multiplier == 1.25
        assert cfg.outlier_max_consecutive == 2

    def test_validation(self):
        with pytest.raises(ValueError):
            NoiseConfig(sigma_r2=0.0)
        with pytest.raises(ValueError):
            NoiseConfig(outlier_multiplier=0.5)
        with pytest.raises(ValueError):
            NoiseConfig(confidence_floor=1.5)
