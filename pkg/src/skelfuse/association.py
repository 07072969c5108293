"""Detection-to-track association.

Each track owns a small constant-velocity Kalman filter over its skeleton
centroid. Incoming detections are scored against tracks with a Mahalanobis
cost (the filter covariance weighting the change a hypothetical update would
induce), the cost matrix is solved with the Hungarian algorithm, and matches
beyond the gate are demoted to unmatched so genuinely new people spawn new
tracks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .kalman import (
    cv_process_noise,
    cv_transition,
    mahalanobis_sq,
    position_update,
    symmetrize,
)


@dataclass
class AssociationConfig:
    gate_epsilon: float = 1.0        # Mahalanobis-squared gate
    track_timeout_s: float = 2.0     # unmatched lifetime before deletion
    init_velocity_sigma: float = 1.0  # m/s, new-track velocity prior

    def __post_init__(self):
        if self.gate_epsilon <= 0:
            raise ValueError("gate_epsilon must be > 0")
        if self.track_timeout_s <= 0:
            raise ValueError("track_timeout_s must be > 0")
        if self.init_velocity_sigma <= 0:
            raise ValueError("init_velocity_sigma must be > 0")


@dataclass
class CentroidFilter:
    """Constant-velocity filter over one track's skeleton centroid.

    Carries its own noise model so cost evaluation needs no extra context.
    """

    state: np.ndarray                # (6,) position + velocity
    covariance: np.ndarray           # (6, 6) SPD
    last_update: float
    sigma_q2: float = 1.0
    sigma_r2: float = 4e-4

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=float).reshape(6)
        P = np.asarray(self.covariance, dtype=float).reshape(6, 6)
        if not np.allclose(P, P.T, atol=1e-9):
            raise ValueError("covariance not symmetric")
        if np.linalg.eigvalsh(P).min() <= 0:
            raise ValueError("covariance not positive-definite")
        self.covariance = P

    @classmethod
    def from_centroid(
        cls,
        centroid: np.ndarray,
        t: float,
        sigma_q2: float,
        sigma_r2: float,
        init_velocity_sigma: float,
    ) -> "CentroidFilter":
        state = np.concatenate([np.asarray(centroid, dtype=float), np.zeros(3)])
        cov = np.diag([sigma_r2] * 3 + [init_velocity_sigma**2] * 3)
        return cls(state, cov, t, sigma_q2, sigma_r2)


def _predict(filt: CentroidFilter, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Propagate mean and covariance over max(0, t - last_update)."""
    dt = max(0.0, t - filt.last_update)
    if dt == 0.0:
        return filt.state.copy(), filt.covariance.copy()
    F = cv_transition(dt)
    Q = cv_process_noise(dt, filt.sigma_q2)
    return F @ filt.state, symmetrize(F @ filt.covariance @ F.T + Q)


def predict_centroid(filt: CentroidFilter, t: float) -> np.ndarray:
    """Predicted state at time t without committing any measurement."""
    mean, _ = _predict(filt, t)
    return mean


def advance_centroid(filt: CentroidFilter, t: float) -> CentroidFilter:
    """Pure prediction returned as a new filter stamped at t."""
    mean, cov = _predict(filt, t)
    return CentroidFilter(mean, cov, max(t, filt.last_update), filt.sigma_q2, filt.sigma_r2)


def association_cost(
    filt: CentroidFilter, detection_centroid: np.ndarray, t: float
) -> float:
    """Mahalanobis-squared cost of pairing a detection with this track.

    The detection is applied as a hypothetical measurement update; the cost
    is the squared norm of the induced state change, weighted by the inverse
    predicted (prior) covariance at t.
    """
    prior_mean, prior_cov = _predict(filt, t)
    post_mean, _ = position_update(
        prior_mean, prior_cov, np.asarray(detection_centroid, dtype=float), filt.sigma_r2
    )
    return mahalanobis_sq(post_mean - prior_mean, prior_cov)


def update_centroid(
    filt: CentroidFilter, detection_centroid: np.ndarray, t: float
) -> CentroidFilter:
    """Commit a matched detection: predict to t, then measurement update."""
    prior_mean, prior_cov = _predict(filt, t)
    mean, cov = position_update(
        prior_mean, prior_cov, np.asarray(detection_centroid, dtype=float), filt.sigma_r2
    )
    return CentroidFilter(mean, cov, t, filt.sigma_q2, filt.sigma_r2)


@dataclass
class Assignment:
    pairs: list[tuple[int, int]] = field(default_factory=list)
    unmatched_tracks: list[int] = field(default_factory=list)
    unmatched_detections: list[int] = field(default_factory=list)

    def __post_init__(self):
        tracks = [i for i, _ in self.pairs]
        dets = [j for _, j in self.pairs]
        if len(set(tracks)) != len(tracks) or len(set(dets)) != len(dets):
            raise ValueError("a track or detection appears in more than one pair")


def solve_assignment(costs: np.ndarray, gate_epsilon: float) -> Assignment:
    """Minimum-total-cost matching with gate demotion.

    Rectangular matrices are padded to square with a sentinel strictly above
    the gate, so padded pairs always gate out. Any matched pair whose cost
    exceeds gate_epsilon is demoted: its detection stays unmatched (and will
    spawn a new track), its track goes unmatched.
    """
    costs = np.asarray(costs, dtype=float)
    if gate_epsilon <= 0:
        raise ValueError("gate_epsilon must be > 0")
    n_tracks, n_dets = costs.shape if costs.ndim == 2 else (0, 0)
    if costs.size and (not np.isfinite(costs).all() or (costs < 0).any()):
        raise ValueError("cost matrix must be finite and non-negative")
    if n_tracks == 0 or n_dets == 0:
        return Assignment([], list(range(n_tracks)), list(range(n_dets)))

    side = max(n_tracks, n_dets)
    sentinel = (max(float(costs.max()), gate_epsilon) + 1.0) * 10.0
    padded = np.full((side, side), sentinel)
    padded[:n_tracks, :n_dets] = costs
    rows, cols = linear_sum_assignment(padded)

    pairs = []
    matched_tracks: set[int] = set()
    matched_dets: set[int] = set()
    for i, j in zip(rows, cols):
        if i < n_tracks and j < n_dets and costs[i, j] <= gate_epsilon:
            pairs.append((int(i), int(j)))
            matched_tracks.add(int(i))
            matched_dets.add(int(j))
    return Assignment(
        pairs,
        [i for i in range(n_tracks) if i not in matched_tracks],
        [j for j in range(n_dets) if j not in matched_dets],
    )
