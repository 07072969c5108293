import numpy as np
import pytest
from hypothesis import given, settings

from conftest import finite_floats, rigid_transforms, skeleton_poses
from skelfuse.model import (
    BODY_LINKS,
    N_JOINTS,
    BodyModel,
    JointId,
    RigidTransform,
    SkeletonPose,
    centroid,
    default_body_model,
    derive_chest,
    transform_pose,
)


class TestJointId:
    def test_fifteen_joints_indexed(self):
        assert len(JointId) == N_JOINTS == 15
        assert sorted(int(j) for j in JointId) == list(range(15))

    def test_enumeration_order(self):
        names = [j.name for j in sorted(JointId, key=int)]
        assert names == [
            "HEAD", "NECK", "CHEST", "LEFT_SHOULDER", "RIGHT_SHOULDER",
            "LEFT_ELBOW", "RIGHT_ELBOW", "LEFT_WRIST", "RIGHT_WRIST",
            "LEFT_HIP", "RIGHT_HIP", "LEFT_KNEE", "RIGHT_KNEE",
            "LEFT_ANKLE", "RIGHT_ANKLE",
        ]


class TestBodyModel:
    def test_link_counts(self):
        model = default_body_model()
        assert len(model.links) == 14
        assert len(model.optimized_links) == 12
        children = {c for _, c in model.optimized_links}
        assert JointId.HEAD not in children
        assert JointId.CHEST not in children

    def test_topological_order(self):
        model = default_body_model()
        seen = {model.root}
        for parent, child in model.optimization_order:
            assert parent in seen, f"{parent.name} visited after child"
            seen.add(child)
        assert seen == set(JointId)

    def test_every_nonroot_has_one_parent(self):
        parents = [c for _, c in BODY_LINKS]
        assert len(parents) == len(set(parents))
        assert set(parents) == set(JointId) - {JointId.NECK}

    def test_rejects_cycle(self):
        links = list(BODY_LINKS[:-1]) + [(JointId.RIGHT_ANKLE, JointId.RIGHT_KNEE)]
        with pytest.raises(ValueError):
            BodyModel(tuple(links))


class TestRigidTransform:
    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            RigidTransform(np.eye(3) * 2.0, np.zeros(3))

    def test_rejects_reflection(self):
        R = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            RigidTransform(R, np.zeros(3))

    def test_compose_matches_sequential_apply(self):
        rng = np.random.default_rng(7)
        from conftest import quat_to_rotation

        A = RigidTransform(quat_to_rotation(rng.normal(size=4)), rng.normal(size=3))
        B = RigidTransform(quat_to_rotation(rng.normal(size=4)), rng.normal(size=3))
        p = rng.normal(size=(5, 3))
        np.testing.assert_allclose(A.compose(B).apply(p), A.apply(B.apply(p)), atol=1e-12)


class TestTransformPose:
    def test_identity(self):
        pose = SkeletonPose.from_joints({JointId.HEAD: [1.0, 2.0, 3.0]})
        out = transform_pose(pose, RigidTransform.identity())
        np.testing.assert_array_equal(out.positions, pose.positions)

    def test_pure_translation(self):
        pose = SkeletonPose.from_joints({JointId.NECK: [0.0, 0.0, 0.0]})
        T = RigidTransform(np.eye(3), [1.0, 0.0, 0.0])
        out = transform_pose(pose, T)
        np.testing.assert_allclose(out.positions[JointId.NECK], [1.0, 0.0, 0.0])

    def test_rotation_against_homogeneous_matrix_oracle(self):
        # 90 degrees about z: (1,0,0) -> (0,1,0); oracle is the 4x4 form.
        R = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        t = np.array([0.5, -0.25, 2.0])
        T = RigidTransform(R, t)
        H = np.eye(4)
        H[:3, :3] = R
        H[:3, 3] = t
        pose = SkeletonPose.from_joints(
            {JointId.HEAD: [1.0, 0.0, 0.0], JointId.NECK: [0.3, -0.7, 1.1]}
        )
        out = transform_pose(pose, T)
        for j in (JointId.HEAD, JointId.NECK):
            hom = H @ np.append(pose.positions[j], 1.0)
            np.testing.assert_allclose(out.positions[j], hom[:3], atol=1e-12)
        np.testing.assert_allclose(
            out.positions[JointId.HEAD], [0.5, 0.75, 2.0], atol=1e-12
        )

    def test_absent_joints_stay_absent(self):
        pose = SkeletonPose.from_joints({JointId.HEAD: [1.0, 0.0, 0.0]})
        out = transform_pose(pose, RigidTransform(np.eye(3), [1, 1, 1]))
        assert out.present.sum() == 1
        assert not out.is_present(JointId.NECK)

    @settings(max_examples=50)
    @given(rigid_transforms(), skeleton_poses())
    def test_round_trip(self, T, pose):
        back = transform_pose(transform_pose(pose, T), T.inverse())
        mask = pose.present
        np.testing.assert_allclose(
            back.positions[mask], pose.positions[mask], atol=1e-9
        )
        assert (back.present == mask).all()

    @settings(max_examples=50)
    @given(rigid_transforms(), skeleton_poses(min_present=2))
    def test_rigidity_preserves_distances(self, T, pose):
        out = transform_pose(pose, T)
        idx = np.flatnonzero(pose.present)
        a, b = idx[0], idx[-1]
        d_in = np.linalg.norm(pose.positions[a] - pose.positions[b])
        d_out = np.linalg.norm(out.positions[a] - out.positions[b])
        assert abs(d_in - d_out) < 1e-9


class TestCentroid:
    def test_single_joint(self):
        pose = SkeletonPose.from_joints({JointId.HEAD: [1.0, 2.0, 3.0]})
        np.testing.assert_allclose(centroid(pose), [1.0, 2.0, 3.0])

    def test_two_joint_symmetry(self):
        pose = SkeletonPose.from_joints(
            {JointId.HEAD: [0.0, 0.0, 0.0], JointId.NECK: [2.0, 0.0, 0.0]}
        )
        np.testing.assert_allclose(centroid(pose), [1.0, 0.0, 0.0])

    def test_matches_summation_oracle(self, rng):
        pos = rng.normal(size=(N_JOINTS, 3))
        pose = SkeletonPose(pos.copy())
        expected = np.zeros(3)
        for row in pos:
            expected += row
        expected /= N_JOINTS
        np.testing.assert_allclose(centroid(pose), expected, atol=1e-12)

    def test_empty_pose_error(self):
        with pytest.raises(ValueError, match="no joints present"):
            centroid(SkeletonPose())


class TestDeriveChest:
    def test_symmetric_body(self):
        pose = SkeletonPose.from_joints(
            {
                JointId.LEFT_SHOULDER: [1.0, 0.0, 1.5],
                JointId.RIGHT_SHOULDER: [-1.0, 0.0, 1.5],
                JointId.LEFT_HIP: [0.5, 0.0, 1.0],
                JointId.RIGHT_HIP: [-0.5, 0.0, 1.0],
            }
        )
        np.testing.assert_allclose(derive_chest(pose), [0.0, 0.0, 1.25])

    def test_degenerate_same_point(self):
        p = [0.7, -0.2, 1.3]
        pose = SkeletonPose.from_joints(
            {
                JointId.LEFT_SHOULDER: p,
                JointId.RIGHT_SHOULDER: p,
                JointId.LEFT_HIP: p,
                JointId.RIGHT_HIP: p,
            }
        )
        np.testing.assert_allclose(derive_chest(pose), p)

    def test_random_four_point_mean_oracle(self, rng):
        pts = rng.normal(size=(4, 3))
        pose = SkeletonPose.from_joints(
            {
                JointId.LEFT_SHOULDER: pts[0],
                JointId.RIGHT_SHOULDER: pts[1],
                JointId.LEFT_HIP: pts[2],
                JointId.RIGHT_HIP: pts[3],
            }
        )
        np.testing.assert_allclose(derive_chest(pose), pts.mean(axis=0), atol=1e-12)

    def test_missing_support_error(self):
        pose = SkeletonPose.from_joints(
            {
                JointId.LEFT_SHOULDER: [1, 0, 1.5],
                JointId.RIGHT_SHOULDER: [-1, 0, 1.5],
                JointId.LEFT_HIP: [0.5, 0, 1.0],
            }
        )
        with pytest.raises(ValueError, match="chest underdetermined"):
            derive_chest(pose)
