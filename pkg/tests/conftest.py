import numpy as np
import pytest
from hypothesis import strategies as st

from skelfuse.model import N_JOINTS, RigidTransform, SkeletonPose


def quat_to_rotation(q: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) to rotation matrix."""
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


finite_floats = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False)


@st.composite
def rotations(draw):
    q = np.array([draw(st.floats(-1, 1)) for _ in range(4)])
    if np.linalg.norm(q) < 0.1:
        q = np.array([1.0, 0.0, 0.0, 0.0])
    return quat_to_rotation(q)


@st.composite
def rigid_transforms(draw):
    R = draw(rotations())
    t = np.array([draw(finite_floats) for _ in range(3)])
    return RigidTransform(R, t)


@st.composite
def skeleton_poses(draw, min_present=1):
    present = draw(
        st.lists(st.booleans(), min_size=N_JOINTS, max_size=N_JOINTS).filter(
            lambda bs: sum(bs) >= min_present
        )
    )
    pos = np.full((N_JOINTS, 3), np.nan)
    for m, p in enumerate(present):
        if p:
            pos[m] = [draw(finite_floats) for _ in range(3)]
    return SkeletonPose(pos)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_spd(rng, n, scale=1.0):
    A = rng.normal(size=(n, n))
    return A @ A.T * scale + np.eye(n) * 1e-3
