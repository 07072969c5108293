"""Skeleton topology, hierarchical body model, and rigid-transform primitives.

Everything downstream (ingestion, association, fusion, consistency, the
simulator) shares the 15-joint skeleton defined here and the tree of body
links rooted at the neck.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

N_JOINTS = 15

ROTATION_TOL = 1e-9


class JointId(IntEnum):
    """Stable, index-addressable enumeration of the tracked joints."""

    HEAD = 0
    NECK = 1
    CHEST = 2
    LEFT_SHOULDER = 3
    RIGHT_SHOULDER = 4
    LEFT_ELBOW = 5
    RIGHT_ELBOW = 6
    LEFT_WRIST = 7
    RIGHT_WRIST = 8
    LEFT_HIP = 9
    RIGHT_HIP = 10
    LEFT_KNEE = 11
    RIGHT_KNEE = 12
    LEFT_ANKLE = 13
    RIGHT_ANKLE = 14


# Parent -> child body links. The graph is a tree rooted at the neck; listing
# order is a valid topological order (parents always precede children).
BODY_LINKS: tuple[tuple[JointId, JointId], ...] = (
    (JointId.NECK, JointId.HEAD),
    (JointId.NECK, JointId.CHEST),
    (JointId.NECK, JointId.LEFT_SHOULDER),
    (JointId.NECK, JointId.RIGHT_SHOULDER),
    (JointId.LEFT_SHOULDER, JointId.LEFT_ELBOW),
    (JointId.LEFT_ELBOW, JointId.LEFT_WRIST),
    (JointId.RIGHT_SHOULDER, JointId.RIGHT_ELBOW),
    (JointId.RIGHT_ELBOW, JointId.RIGHT_WRIST),
    (JointId.LEFT_SHOULDER, JointId.LEFT_HIP),
    (JointId.LEFT_HIP, JointId.LEFT_KNEE),
    (JointId.LEFT_KNEE, JointId.LEFT_ANKLE),
    (JointId.RIGHT_SHOULDER, JointId.RIGHT_HIP),
    (JointId.RIGHT_HIP, JointId.RIGHT_KNEE),
    (JointId.RIGHT_KNEE, JointId.RIGHT_ANKLE),
)


@dataclass(frozen=True)
class BodyModel:
    """Hierarchical joint/link tree driving the consistency optimizer.

    `optimization_order` is the link traversal order (topological, rooted at
    the neck). `optimized_links` excludes the head and chest links, which are
    not length-optimized: the chest is recomputed from shoulders and hips and
    the head is passed through untouched.
    """

    links: tuple[tuple[JointId, JointId], ...] = BODY_LINKS
    root: JointId = JointId.NECK

    def __post_init__(self):
        if len(self.links) != 14:
            raise ValueError(f"body model must have 14 links, got {len(self.links)}")
        parents: dict[JointId, JointId] = {}
        for parent, child in self.links:
            if child in parents:
                raise ValueError(f"joint {child.name} has more than one parent")
            if child == self.root:
                raise ValueError("root joint cannot be a child")
            parents[child] = parent
        if set(parents) | {self.root} != set(JointId):
            raise ValueError("links do not span all joints")
        # Tree check: walking up from any joint must reach the root.
        for child in parents:
            seen = {child}
            node = child
            while node != self.root:
                node = parents[node]
                if node in seen:
                    raise ValueError("body model contains a cycle")
                seen.add(node)

    @property
    def optimization_order(self) -> tuple[tuple[JointId, JointId], ...]:
        return self.links

    @property
    def optimized_links(self) -> tuple[tuple[JointId, JointId], ...]:
        excluded = (JointId.HEAD, JointId.CHEST)
        return tuple((p, c) for p, c in self.links if c not in excluded)

    def parent_of(self, joint: JointId) -> JointId | None:
        for parent, child in self.links:
            if child == joint:
                return parent
        return None


def default_body_model() -> BodyModel:
    return BodyModel()


@dataclass(frozen=True)
class RigidTransform:
    """Rotation (orthonormal, det +1) plus translation, meters."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        if not np.allclose(R.T @ R, np.eye(3), atol=ROTATION_TOL):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ValueError("rotation determinant is not +1 (improper rotation)")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map points (..., 3) into the target frame: R @ p + t."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self ∘ other)(p) = self(other(p))."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )


@dataclass
class SkeletonPose:
    """15 joint positions in meters; NaN rows mark absent (undetected) joints."""

    positions: np.ndarray = field(
        default_factory=lambda: np.full((N_JOINTS, 3), np.nan)
    )

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.shape != (N_JOINTS, 3):
            raise ValueError(f"positions must be ({N_JOINTS}, 3), got {pos.shape}")
        # A joint is present iff all three coordinates are finite; reject
        # half-set rows outright.
        finite = np.isfinite(pos)
        if np.any(finite.any(axis=1) & ~finite.all(axis=1)):
            raise ValueError("joint rows must be fully finite or fully NaN")
        self.positions = pos

    @classmethod
    def from_joints(cls, joints: dict[JointId, np.ndarray]) -> "SkeletonPose":
        pos = np.full((N_JOINTS, 3), np.nan)
        for j, p in joints.items():
            pos[int(j)] = np.asarray(p, dtype=float)
        return cls(pos)

    @property
    def present(self) -> np.ndarray:
        """Boolean mask (15,) of present joints."""
        return np.isfinite(self.positions).all(axis=1)

    def is_present(self, joint: JointId) -> bool:
        return bool(np.isfinite(self.positions[int(joint)]).all())

    def joint(self, joint: JointId) -> np.ndarray | None:
        p = self.positions[int(joint)]
        return p.copy() if np.isfinite(p).all() else None

    def copy(self) -> "SkeletonPose":
        return SkeletonPose(self.positions.copy())


def transform_pose(pose: SkeletonPose, transform: RigidTransform) -> SkeletonPose:
    """Express a pose in the transform's target frame; absent joints stay absent."""
    return SkeletonPose(transform.apply(pose.positions))


def centroid(pose: SkeletonPose) -> np.ndarray:
    """Arithmetic mean of the present joint positions."""
    mask = pose.present
    if not mask.any():
        raise ValueError("no joints present")
    return pose.positions[mask].mean(axis=0)


_CHEST_SUPPORT = (
    JointId.LEFT_SHOULDER,
    JointId.RIGHT_SHOULDER,
    JointId.LEFT_HIP,
    JointId.RIGHT_HIP,
)


def derive_chest(pose: SkeletonPose) -> np.ndarray:
    """Chest as the central point of the two shoulders and two hips."""
    idx = [int(j) for j in _CHEST_SUPPORT]
    pts = pose.positions[idx]
    if not np.isfinite(pts).all():
        missing = [j.name for j in _CHEST_SUPPORT if not pose.is_present(j)]
        raise ValueError(f"chest underdetermined: missing {', '.join(missing)}")
    return pts.mean(axis=0)
