"""Joint-level skeletal fusion filter.

One track carries a constant-velocity Kalman filter per joint (positions and
velocities, 15 joints). Because the transition, coupling, and measurement
matrices are all block-diagonal per joint, running 15 independent 6-state
filters is exactly equivalent to one monolithic 90-state filter; the arrays
here are batched over joints for speed.

Measurement handling per joint, in order:
  1. confidence gate   - low-confidence or absent joints are replaced by the
                         filter's own prediction (fed back as a measurement
                         at base variance);
  2. outlier test      - the Euclidean jump from the previous posterior is
                         compared against an adaptive threshold built from
                         recent accepted jumps; flagged jumps are not dropped
                         but updated with inflated measurement variance;
  3. forced acceptance - after o_max consecutive flagged outliers the next
                         large jump is taken at nominal variance, so genuine
                         fast motion cannot be suppressed forever.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .ingest import JointObservation, SkeletonDetection
from .kalman import batch_position_update, cv_process_noise, cv_transition
from .model import N_JOINTS, SkeletonPose


class JointStatus(Enum):
    ACCEPTED = "accepted"        # real observation at nominal (confidence-scaled) variance
    SUBSTITUTED = "substituted"  # prediction fed back (absent or low confidence)
    INFLATED = "inflated"        # flagged outlier, inflated variance
    UNTRACKED = "untracked"      # joint filter not initialized yet
    HELD = "held"                # baseline variants only: stale value carried over


@dataclass
class NoiseConfig:
    """Noise model and adaptive-scheme parameters of the fusion filter."""

    sigma_q2: float = 1.0            # white-acceleration process variance
    sigma_r2: float = 4e-4           # base measurement variance, m^2
    dt: float = 0.033                # base sampling period, s
    confidence_floor: float = 0.5    # below this the detection is rejected
    outlier_window: int = 15         # N, jumps remembered per joint
    outlier_multiplier: float = 1.25  # w, threshold = w * max(recent jumps)
    outlier_max_consecutive: int = 2  # o_max
    max_inflation: float = 100.0     # cap on the variance inflation ratio

    def __post_init__(self):
        if self.sigma_q2 <= 0 or self.sigma_r2 <= 0:
            raise ValueError("noise variances must be > 0")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if not 0.0 <= self.confidence_floor <= 1.0:
            raise ValueError("confidence_floor must be in [0, 1]")
        if self.outlier_window < 1:
            raise ValueError("outlier_window must be >= 1")
        if self.outlier_multiplier < 1.0:
            raise ValueError("outlier_multiplier must be >= 1")
        if self.outlier_max_consecutive < 0:
            raise ValueError("outlier_max_consecutive must be >= 0")
        if self.max_inflation < 1.0:
            raise ValueError("max_inflation must be >= 1")


@dataclass
class JointFilterState:
    """Single-joint view: position, velocity, and 6x6 covariance."""

    position: np.ndarray
    velocity: np.ndarray
    covariance: np.ndarray


@dataclass
class UpdateReport:
    """Per-joint outcome of one measurement update."""

    timestamp: float
    statuses: list[JointStatus]
    distances: np.ndarray            # jump distance per joint, NaN where n/a
    variances: np.ndarray            # measurement variance used, NaN where n/a

    @property
    def all_accepted(self) -> bool:
        return all(s is JointStatus.ACCEPTED for s in self.statuses)

    @property
    def clean(self) -> bool:
        """No joint took the inflation or substitution path."""
        return not any(
            s in (JointStatus.INFLATED, JointStatus.SUBSTITUTED) for s in self.statuses
        )


@dataclass
class TrackState:
    """Joint-level filter state plus per-joint outlier machinery for one track.

    means[m] is [x, y, z, vx, vy, vz] for joint m; rows of NaN mark joints
    whose filter has not been initialized yet (never observed confidently).
    """

    track_id: int
    means: np.ndarray                # (15, 6)
    covs: np.ndarray                 # (15, 6, 6)
    last_update: float
    histories: list[deque] = field(default_factory=list)
    outlier_counts: np.ndarray = field(default_factory=lambda: np.zeros(N_JOINTS, int))
    last_posterior: np.ndarray = field(
        default_factory=lambda: np.full((N_JOINTS, 3), np.nan)
    )

    @property
    def initialized(self) -> np.ndarray:
        return np.isfinite(self.means).all(axis=1)

    def joint_state(self, m: int) -> JointFilterState | None:
        if not np.isfinite(self.means[m]).all():
            return None
        return JointFilterState(
            self.means[m, :3].copy(), self.means[m, 3:].copy(), self.covs[m].copy()
        )

    def pose(self) -> SkeletonPose:
        pos = np.where(self.initialized[:, None], self.means[:, :3], np.nan)
        return SkeletonPose(pos)

    def copy(self) -> "TrackState":
        return TrackState(
            self.track_id,
            self.means.copy(),
            self.covs.copy(),
            self.last_update,
            [deque(h, maxlen=h.maxlen) for h in self.histories],
            self.outlier_counts.copy(),
            self.last_posterior.copy(),
        )


def new_track_state(
    track_id: int,
    detection: SkeletonDetection,
    cfg: NoiseConfig,
    init_velocity_sigma: float = 1.0,
) -> tuple[TrackState, UpdateReport]:
    """Spawn a track from its first detection.

    Joints observed at or above the confidence floor are initialized at the
    observed position with zero velocity; the rest stay untracked until their
    first confident observation.
    """
    means = np.full((N_JOINTS, 6), np.nan)
    covs = np.zeros((N_JOINTS, 6, 6))
    statuses = [JointStatus.UNTRACKED] * N_JOINTS
    variances = np.full(N_JOINTS, np.nan)
    init_cov = np.diag([cfg.sigma_r2] * 3 + [init_velocity_sigma**2] * 3)
    present = detection.present
    for m in range(N_JOINTS):
        c = detection.confidences[m]
        if present[m] and c >= cfg.confidence_floor and c > 0.0:
            means[m, :3] = detection.positions[m]
            means[m, 3:] = 0.0
            covs[m] = init_cov
            statuses[m] = JointStatus.ACCEPTED
            variances[m] = cfg.sigma_r2 / c
    state = TrackState(
        track_id,
        means,
        covs,
        detection.timestamp,
        [deque(maxlen=cfg.outlier_window) for _ in range(N_JOINTS)],
        np.zeros(N_JOINTS, int),
        np.where(np.isfinite(means[:, :3]), means[:, :3], np.nan),
    )
    report = UpdateReport(
        detection.timestamp, statuses, np.full(N_JOINTS, np.nan), variances
    )
    return state, report


def prediction_steps(gap: float, dt: float) -> int:
    """Number of whole model steps in a time gap (round half up, floor 0)."""
    if gap <= 0:
        return 0
    return int(math.floor(gap / dt + 0.5))


def predict(track: TrackState, t: float, cfg: NoiseConfig) -> TrackState:
    """Propagate all joint filters by n = round((t - last_update)/dt) steps.

    The one-step constant-velocity model is applied n times, matching the
    update cadence the filter was tuned for; the fractional remainder of the
    gap is discarded.
    """
    n = prediction_steps(t - track.last_update, cfg.dt)
    out = track.copy()
    if n == 0:
        return out
    F = cv_transition(cfg.dt)
    Q = cv_process_noise(cfg.dt, cfg.sigma_q2)
    means, covs = out.means, out.covs
    for _ in range(n):
        means = means @ F.T
        covs = np.einsum("ij,bjk,lk->bil", F, covs, F) + Q
    out.means = means
    out.covs = covs
    out.last_update = track.last_update + n * cfg.dt
    return out


def measurement_variance(c_m: float, cfg: NoiseConfig) -> float:
    """Confidence-scaled per-axis measurement variance sigma_r^2 / c."""
    if c_m <= 0.0:
        raise ValueError("confidence underflow")
    return cfg.sigma_r2 / c_m


def gate_confidence(
    obs: JointObservation | None, predicted: np.ndarray, cfg: NoiseConfig
) -> tuple[np.ndarray, float, bool]:
    """Resolve one joint's effective measurement.

    Confident observations pass through with scaled variance; absent or
    low-confidence joints are substituted by the prediction at base variance.
    The floor is inclusive: c exactly at the floor passes. Returns
    (measurement, variance, substituted).
    """
    if obs is None or obs.confidence < cfg.confidence_floor or obs.confidence <= 0.0:
        return np.asarray(predicted, dtype=float), cfg.sigma_r2, True
    return obs.position, measurement_variance(obs.confidence, cfg), False


def outlier_threshold(history, cfg: NoiseConfig) -> float:
    """Adaptive jump threshold: w times the largest remembered jump.

    An empty history (young track) yields +inf so first updates never flag.
    """
    if len(history) == 0 or not math.isfinite(cfg.outlier_multiplier):
        return math.inf
    return cfg.outlier_multiplier * max(history)


def inflate_variance(
    d: float, th: float, sigma_rc2: float, max_inflation: float = 100.0
) -> float:
    """Inflate measurement variance by the jump/threshold ratio, capped."""
    if th <= 0.0:
        ratio = max_inflation
    else:
        ratio = min(d / th, max_inflation)
    return sigma_rc2 * ratio


def update(
    track: TrackState, detection: SkeletonDetection, cfg: NoiseConfig,
    init_velocity_sigma: float = 1.0,
) -> tuple[TrackState, UpdateReport]:
    """Fuse one associated detection into the track (already predicted to t).

    Jump distances are measured against each joint's previous posterior
    position. Only jumps from cleanly accepted observations (real, below
    threshold) are pushed into the threshold history, so a burst of outliers
    cannot widen its own gate; the threshold instead adapts to faster motion
    through the growing below-threshold jumps themselves.
    """
    out = track.copy()
    statuses: list[JointStatus] = [JointStatus.UNTRACKED] * N_JOINTS
    distances = np.full(N_JOINTS, np.nan)
    variances = np.full(N_JOINTS, np.nan)

    upd_idx: list[int] = []
    upd_z = np.zeros((N_JOINTS, 3))
    upd_r = np.zeros(N_JOINTS)
    push_hist: list[int] = []

    initialized = out.initialized
    present = detection.present
    conf = detection.confidences
    pos = detection.positions
    init_cov = None

    for m in range(N_JOINTS):
        # Inline confidence gate (same semantics as gate_confidence).
        confident = present[m] and conf[m] >= cfg.confidence_floor and conf[m] > 0.0

        if not initialized[m]:
            # Lazy initialization on the first confident observation.
            if confident:
                if init_cov is None:
                    init_cov = np.diag(
                        [cfg.sigma_r2] * 3 + [init_velocity_sigma**2] * 3
                    )
                out.means[m, :3] = pos[m]
                out.means[m, 3:] = 0.0
                out.covs[m] = init_cov
                out.last_posterior[m] = pos[m]
                statuses[m] = JointStatus.ACCEPTED
                variances[m] = cfg.sigma_r2 / conf[m]
            continue

        if confident:
            z, r_var, substituted = pos[m], cfg.sigma_r2 / conf[m], False
        else:
            z, r_var, substituted = out.means[m, :3].copy(), cfg.sigma_r2, True
        dv = z - out.last_posterior[m]
        d = math.sqrt(dv[0] * dv[0] + dv[1] * dv[1] + dv[2] * dv[2])
        distances[m] = d
        th = outlier_threshold(out.histories[m], cfg)

        if d > th:
            if out.outlier_counts[m] < cfg.outlier_max_consecutive:
                r_var = inflate_variance(d, th, r_var, cfg.max_inflation)
                out.outlier_counts[m] += 1
                statuses[m] = JointStatus.SUBSTITUTED if substituted else JointStatus.INFLATED
            else:
                # o_max consecutive flags already: take this one as reliable.
                # Its jump still stays out of the threshold history, otherwise
                # one absorbed spike would widen the gate enough to wave the
                # next few spikes through at full gain.
                out.outlier_counts[m] = 0
                statuses[m] = JointStatus.SUBSTITUTED if substituted else JointStatus.ACCEPTED
        else:
            out.outlier_counts[m] = 0
            statuses[m] = JointStatus.SUBSTITUTED if substituted else JointStatus.ACCEPTED
            if not substituted:
                push_hist.append(m)

        variances[m] = r_var
        upd_idx.append(m)
        upd_z[m] = z
        upd_r[m] = r_var

    if upd_idx:
        idx = np.array(upd_idx)
        new_means, new_covs = batch_position_update(
            out.means[idx], out.covs[idx], upd_z[idx], upd_r[idx]
        )
        out.means[idx] = new_means
        out.covs[idx] = new_covs

    for m in push_hist:
        out.histories[m].append(float(distances[m]))

    live = out.initialized
    out.last_posterior[live] = out.means[live, :3]
    out.last_update = detection.timestamp
    return out, UpdateReport(detection.timestamp, statuses, distances, variances)


def calibrate_sigma_r(static_sequence: list[SkeletonDetection]) -> float:
    """Estimate the base measurement variance from a static recording.

    Computes the positional standard deviation of every joint over the
    sequence, averages the per-joint per-axis deviations, and returns the
    square of that average. Detections are grouped by camera so streams in
    different frames can be pooled; the deviation within each camera's own
    frame reflects only its noise.
    """
    groups: dict[str, list[list[np.ndarray]]] = {}
    for det in static_sequence:
        samples = groups.setdefault(det.camera_id, [[] for _ in range(N_JOINTS)])
        present = det.present
        for m in range(N_JOINTS):
            if present[m]:
                samples[m].append(det.positions[m])
    stds = []
    covered = np.zeros(N_JOINTS, dtype=bool)
    for samples in groups.values():
        for m in range(N_JOINTS):
            if len(samples[m]) >= 2:
                stds.append(np.std(np.array(samples[m]), axis=0))
                covered[m] = True
    if not covered.all():
        missing = np.flatnonzero(~covered).tolist()
        raise ValueError(
            f"insufficient samples for joints {missing}: need >= 2 in some camera"
        )
    sigma = float(np.mean(stds))
    return sigma * sigma


def variant_noise_config(cfg: NoiseConfig, outliers: bool = True) -> NoiseConfig:
    """Disable the outlier scheme by pushing its threshold to infinity."""
    if outliers:
        return cfg
    return replace(cfg, outlier_multiplier=math.inf)
