"""Shared constant-velocity Kalman filter building blocks.

State layout for one body point is [x, y, z, vx, vy, vz]. Process noise is
white acceleration coupled through G = [dt^2/2 * I; dt * I], measurements
observe positions only (H = [I 0]).
"""

from __future__ import annotations

import numpy as np


def cv_transition(dt: float) -> np.ndarray:
    """6x6 constant-velocity transition matrix for one step of length dt."""
    F = np.eye(6)
    F[0, 3] = F[1, 4] = F[2, 5] = dt
    return F


def cv_noise_coupling(dt: float) -> np.ndarray:
    """6x3 coupling of white acceleration noise into position and velocity."""
    G = np.zeros((6, 3))
    G[0, 0] = G[1, 1] = G[2, 2] = 0.5 * dt * dt
    G[3, 0] = G[4, 1] = G[5, 2] = dt
    return G


def cv_process_noise(dt: float, sigma_q2: float) -> np.ndarray:
    """6x6 per-step process noise covariance G * sigma_q2 * G^T."""
    G = cv_noise_coupling(dt)
    return sigma_q2 * (G @ G.T)


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def position_update(
    mean: np.ndarray, cov: np.ndarray, z: np.ndarray, r_var: float
) -> tuple[np.ndarray, np.ndarray]:
    """Measurement update of a single 6-state filter with a 3D position.

    Measurement noise is isotropic with variance r_var per axis. Uses the
    Joseph form so the covariance stays symmetric positive-definite.
    """
    P_xy = cov[:, :3]                      # P @ H^T
    S = cov[:3, :3] + r_var * np.eye(3)
    K = np.linalg.solve(S.T, P_xy.T).T     # P H^T S^-1
    innovation = z - mean[:3]
    new_mean = mean + K @ innovation
    IKH = np.eye(6)
    IKH[:, :3] -= K
    new_cov = IKH @ cov @ IKH.T + r_var * (K @ K.T)
    return new_mean, symmetrize(new_cov)


def batch_position_update(
    means: np.ndarray, covs: np.ndarray, zs: np.ndarray, r_vars: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized position_update over a leading batch axis.

    means (B, 6), covs (B, 6, 6), zs (B, 3), r_vars (B,).
    """
    B = means.shape[0]
    eye3 = np.eye(3)
    S = covs[:, :3, :3] + r_vars[:, None, None] * eye3
    PHt = covs[:, :, :3]                                   # (B, 6, 3)
    K = np.linalg.solve(np.swapaxes(S, 1, 2), np.swapaxes(PHt, 1, 2))
    K = np.swapaxes(K, 1, 2)                               # (B, 6, 3)
    innov = zs - means[:, :3]
    new_means = means + np.einsum("bij,bj->bi", K, innov)
    IKH = np.broadcast_to(np.eye(6), (B, 6, 6)).copy()
    IKH[:, :, :3] -= K
    new_covs = np.einsum("bij,bjk,blk->bil", IKH, covs, IKH)
    new_covs += r_vars[:, None, None] * np.einsum("bij,bkj->bik", K, K)
    return new_means, symmetrize(new_covs)


def mahalanobis_sq(delta: np.ndarray, cov: np.ndarray) -> float:
    """Squared Mahalanobis norm delta^T cov^-1 delta."""
    try:
        sol = np.linalg.solve(cov, delta)
    except np.linalg.LinAlgError as exc:
        raise ValueError("degenerate covariance") from exc
    return float(delta @ sol)
