"""Limb-length consistency refinement.

Fused skeletons drift in segment length because each joint is filtered
independently. This stage walks the body-link tree from the neck outward and,
for every optimized link, re-solves the child joint position to minimize

    E = (|q_c - q_p| - l_hat)^2 + w * |theta - theta_kf|^2

where theta is the unit direction of the link being solved and theta_kf the
unit direction toward the filter's child estimate, both taken from the
already-refined parent. The parent is fixed (it was solved by the previous
link), the neck is the fixed root, the chest is recomputed as the central
point of the refined shoulders and hips, and the head is passed through.

The minimization runs a small damped Gauss-Newton (Levenberg-Marquardt) in
plain floats: the problems are 3 variables by 2 residuals and sit on the hot
path of every track update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import BodyModel, JointId, SkeletonPose, derive_chest

_ENERGY_DECREASE_TOL = 1e-12


@dataclass
class ConsistencyConfig:
    enabled: bool = True
    orientation_weight: float = 1.0
    length_alpha: float = 0.01    # per-frame smoothing of estimated lengths
    init_frames: int = 10         # complete frames needed to initialize lengths
    lm_max_iters: int = 50
    lm_tol: float = 1e-8          # step-norm stopping tolerance, meters

    def __post_init__(self):
        if self.orientation_weight < 0:
            raise ValueError("orientation_weight must be >= 0")
        if not 0.0 <= self.length_alpha <= 1.0:
            raise ValueError("length_alpha must be in [0, 1]")
        if self.init_frames < 1:
            raise ValueError("init_frames must be >= 1")
        if self.lm_max_iters < 1 or self.lm_tol <= 0:
            raise ValueError("bad LM settings")


@dataclass
class LimbLengths:
    """Estimated lengths of the optimized links, in model link order."""

    lengths: np.ndarray | None = None
    initialized: bool = False
    sample_count: int = 0

    def __post_init__(self):
        if self.initialized:
            arr = np.asarray(self.lengths, dtype=float)
            if arr.ndim != 1 or np.any(arr <= 0) or not np.isfinite(arr).all():
                raise ValueError("initialized lengths must be positive and finite")
            self.lengths = arr


@dataclass
class LinkProblem:
    """One link's refinement problem.

    parent is fixed (output of the previous link), kf_child is the filter's
    child estimate and doubles as the initial value and orientation anchor.
    """

    parent: np.ndarray
    kf_child: np.ndarray
    target_length: float
    orientation_weight: float = 1.0

    def __post_init__(self):
        self.parent = np.asarray(self.parent, dtype=float).reshape(3)
        self.kf_child = np.asarray(self.kf_child, dtype=float).reshape(3)
        if self.target_length <= 0:
            raise ValueError("target_length must be > 0")
        if np.linalg.norm(self.kf_child - self.parent) <= 0:
            raise ValueError("degenerate orientation anchor: child equals parent")


def _anchor_direction(problem: LinkProblem) -> np.ndarray:
    d = problem.kf_child - problem.parent
    return d / np.linalg.norm(d)


def link_residual(q_c: np.ndarray, problem: LinkProblem) -> np.ndarray:
    """Residual vector (length error, sqrt(w) * orientation deviation norm)."""
    q_c = np.asarray(q_c, dtype=float)
    d = q_c - problem.parent
    r = np.linalg.norm(d)
    if r <= 0:
        raise ValueError("degenerate link: child equals parent")
    theta = d / r
    dev = np.linalg.norm(theta - _anchor_direction(problem))
    return np.array([r - problem.target_length,
                     math.sqrt(problem.orientation_weight) * dev])


def link_energy(q_c: np.ndarray, problem: LinkProblem) -> float:
    res = link_residual(q_c, problem)
    return float(res @ res)


def link_jacobian(q_c: np.ndarray, problem: LinkProblem) -> np.ndarray:
    """Analytic 2x3 Jacobian of link_residual at q_c.

    The second row is zero at the orientation-aligned point, where the norm
    residual sits at its (nonsmooth) minimum.
    """
    q_c = np.asarray(q_c, dtype=float)
    d = q_c - problem.parent
    r = np.linalg.norm(d)
    if r <= 0:
        raise ValueError("degenerate link: child equals parent")
    u = d / r
    J = np.zeros((2, 3))
    J[0] = u
    v = u - _anchor_direction(problem)
    s = np.linalg.norm(v)
    if s > 1e-12:
        # d theta / d q_c = (I - u u^T) / r
        J[1] = math.sqrt(problem.orientation_weight) * (v - (v @ u) * u) / (s * r)
    return J


@dataclass
class LinkSolveInfo:
    converged: bool
    iterations: int
    energy: float


def optimize_link(
    problem: LinkProblem, cfg: ConsistencyConfig | None = None
) -> tuple[np.ndarray, LinkSolveInfo]:
    """Minimize the link energy from the filter estimate via damped GN steps.

    Damping starts at 1e-3 and is scaled x10 on a rejected step, x0.1 on an
    accepted one. Stops on step norm < lm_tol, on energy decrease below
    1e-12, or at lm_max_iters (returning the best iterate, flagged).
    """
    if cfg is None:
        cfg = ConsistencyConfig()
    px, py, pz = problem.parent
    l_hat = problem.target_length
    sw = math.sqrt(problem.orientation_weight)
    ax, ay, az = _anchor_direction(problem)

    def residual(x: float, y: float, z: float):
        dx, dy, dz = x - px, y - py, z - pz
        r = math.sqrt(dx * dx + dy * dy + dz * dz)
        if r <= 1e-15:
            return None
        ux, uy, uz = dx / r, dy / r, dz / r
        vx, vy, vz = ux - ax, uy - ay, uz - az
        s = math.sqrt(vx * vx + vy * vy + vz * vz)
        return r, (ux, uy, uz), (vx, vy, vz), s, (r - l_hat, sw * s)

    x, y, z = problem.kf_child
    ev = residual(x, y, z)
    if ev is None:
        raise ValueError("degenerate link: child equals parent")
    r, u, v, s, res = ev
    energy = res[0] * res[0] + res[1] * res[1]
    best = (x, y, z, energy)
    lam = 1e-3
    converged = False
    iters = 0

    while iters < cfg.lm_max_iters:
        iters += 1
        # Jacobian rows: j1 = u; j2 = sw * (v - (v.u) u) / (s r), zero at s ~ 0.
        ux, uy, uz = u
        vx, vy, vz = v
        if s > 1e-12:
            vu = vx * ux + vy * uy + vz * uz
            f = sw / (s * r)
            j2x, j2y, j2z = f * (vx - vu * ux), f * (vy - vu * uy), f * (vz - vu * uz)
        else:
            j2x = j2y = j2z = 0.0
        r1, r2 = res

        # Normal equations A delta = b with A = J^T J + lam I, b = -J^T res.
        a11 = ux * ux + j2x * j2x + lam
        a12 = ux * uy + j2x * j2y
        a13 = ux * uz + j2x * j2z
        a22 = uy * uy + j2y * j2y + lam
        a23 = uy * uz + j2y * j2z
        a33 = uz * uz + j2z * j2z + lam
        b1 = -(ux * r1 + j2x * r2)
        b2 = -(uy * r1 + j2y * r2)
        b3 = -(uz * r1 + j2z * r2)
        det = (
            a11 * (a22 * a33 - a23 * a23)
            - a12 * (a12 * a33 - a23 * a13)
            + a13 * (a12 * a23 - a22 * a13)
        )
        if abs(det) < 1e-300:
            lam *= 10.0
            continue
        dx = (
            b1 * (a22 * a33 - a23 * a23)
            - a12 * (b2 * a33 - a23 * b3)
            + a13 * (b2 * a23 - a22 * b3)
        ) / det
        dy = (
            a11 * (b2 * a33 - a23 * b3)
            - b1 * (a12 * a33 - a23 * a13)
            + a13 * (a12 * b3 - b2 * a13)
        ) / det
        dz = (
            a11 * (a22 * b3 - b2 * a23)
            - a12 * (a12 * b3 - b2 * a13)
            + b1 * (a12 * a23 - a22 * a13)
        ) / det

        step = math.sqrt(dx * dx + dy * dy + dz * dz)
        cand = residual(x + dx, y + dy, z + dz)
        if cand is not None:
            cr1, cr2 = cand[4]
            cand_energy = cr1 * cr1 + cr2 * cr2
        else:
            cand_energy = math.inf

        if cand_energy < energy:
            decrease = energy - cand_energy
            x, y, z = x + dx, y + dy, z + dz
            r, u, v, s, res = cand
            energy = cand_energy
            if energy < best[3]:
                best = (x, y, z, energy)
            lam = max(lam * 0.1, 1e-12)
            if step < cfg.lm_tol or decrease < _ENERGY_DECREASE_TOL:
                converged = True
                break
        else:
            lam *= 10.0
            if step < cfg.lm_tol:
                converged = True
                break

    bx, by, bz, be = best
    return np.array([bx, by, bz]), LinkSolveInfo(converged, iters, be)


@dataclass
class ConsistencyReport:
    applied: bool
    reason: str = ""
    link_info: dict = field(default_factory=dict)


# Joints that must be present for the refinement to run: the root plus every
# joint touched by an optimized link.
def _required_joints(model: BodyModel) -> set[JointId]:
    req = {model.root}
    for p, c in model.optimized_links:
        req.add(p)
        req.add(c)
    return req


def enforce_consistency(
    frame: SkeletonPose,
    limb_lengths: LimbLengths,
    model: BodyModel,
    cfg: ConsistencyConfig | None = None,
) -> tuple[SkeletonPose, ConsistencyReport]:
    """Refine a fused frame so optimized links match their estimated lengths.

    Traverses links parents-first; each child is re-solved against the
    already-refined parent. If the lengths are uninitialized or a required
    joint is absent the frame passes through unrefined, flagged in the
    report. The root (neck) is returned bit-identical.
    """
    if cfg is None:
        cfg = ConsistencyConfig()
    if not limb_lengths.initialized:
        return frame.copy(), ConsistencyReport(False, "limb lengths not initialized")
    present = frame.present
    missing = [j.name for j in _required_joints(model) if not present[int(j)]]
    if missing:
        return frame.copy(), ConsistencyReport(
            False, f"missing joints: {', '.join(sorted(missing))}"
        )

    out = frame.positions.copy()
    info: dict = {}
    optimized = model.optimized_links
    for k, (parent, child) in enumerate(optimized):
        problem = LinkProblem(
            out[int(parent)],
            frame.positions[int(child)],
            float(limb_lengths.lengths[k]),
            cfg.orientation_weight,
        )
        solved, solve_info = optimize_link(problem, cfg)
        out[int(child)] = solved
        info[(parent.name, child.name)] = solve_info

    refined = SkeletonPose(out)
    # Chest is not optimized: recompute it from the refined torso corners.
    out[int(JointId.CHEST)] = derive_chest(refined)
    return SkeletonPose(out), ConsistencyReport(True, link_info=info)


def measure_lengths(frame: SkeletonPose, model: BodyModel) -> np.ndarray:
    """Euclidean lengths of the optimized links in a frame (NaN if absent)."""
    vals = np.full(len(model.optimized_links), np.nan)
    for k, (p, c) in enumerate(model.optimized_links):
        a = frame.positions[int(p)]
        b = frame.positions[int(c)]
        if np.isfinite(a).all() and np.isfinite(b).all():
            vals[k] = np.linalg.norm(b - a)
    return vals


def initialize_lengths(
    frames: list[SkeletonPose], model: BodyModel, min_frames: int = 10
) -> LimbLengths:
    """Average link lengths over the first complete frames of a track."""
    complete = [f for f in frames if f.present.all()]
    if len(complete) < min_frames:
        raise ValueError(
            f"need {min_frames} complete frames to initialize lengths, "
            f"got {len(complete)}"
        )
    stacked = np.stack([measure_lengths(f, model) for f in complete])
    return LimbLengths(stacked.mean(axis=0), True, len(complete))


def update_lengths(
    limb_lengths: LimbLengths,
    optimized_frame: SkeletonPose,
    model: BodyModel,
    alpha: float = 0.01,
) -> LimbLengths:
    """Blend measured link lengths of a refined frame into the estimates.

    l_hat <- (1 - alpha) * l_hat + alpha * measured, skipping links whose
    joints are absent.
    """
    if not limb_lengths.initialized:
        raise ValueError("lengths not initialized")
    measured = measure_lengths(optimized_frame, model)
    ok = np.isfinite(measured)
    lengths = limb_lengths.lengths.copy()
    lengths[ok] = (1.0 - alpha) * lengths[ok] + alpha * measured[ok]
    return LimbLengths(lengths, True, limb_lengths.sample_count)
