"""Core types, the camera model and its conventions.

Backprojection math (asserted throughout):
    p = d * K^-1 * (u, v, 1)^T = (d*(u-cx)/fx, d*(v-cy)/fy, d)
with the image origin top-left, +x right, +y down, camera looking +z and
depth measured along the optical axis.
"""

import numpy as np
import pytest

from scenekit.core import (
    CameraIntrinsics,
    DepthMap,
    ImageBuffer,
    InstanceMask,
    PointCloud,
    RigidScaleTransform,
    TriangleMesh,
    project,
    unproject,
)
from scenekit.errors import ContractViolation

from conftest import rotvec


class TestTypeInvariants:
    def test_image_rejects_out_of_range(self):
        with pytest.raises(ContractViolation):
            ImageBuffer(np.full((2, 2, 3), 1.5))

    def test_image_rejects_bad_channels(self):
        with pytest.raises(ContractViolation):
            ImageBuffer(np.zeros((2, 2, 2)))

    def test_image_is_immutable(self):
        img = ImageBuffer(np.zeros((2, 2, 3)))
        with pytest.raises(ValueError):
            img.data[0, 0, 0] = 1.0

    def test_depth_rejects_nonpositive_valid(self):
        with pytest.raises(ContractViolation):
            DepthMap(np.array([[0.0]]), np.array([[True]]))

    def test_depth_allows_garbage_where_invalid(self):
        d = DepthMap(np.array([[-3.0, 1.0]]), np.array([[False, True]]))
        assert d.valid.sum() == 1

    def test_mask_bbox_tight(self):
        bm = np.zeros((5, 7), dtype=bool)
        bm[1, 2] = bm[3, 5] = True
        assert InstanceMask(1, bm).bbox == (2, 1, 6, 4)

    def test_mask_empty_bbox(self):
        assert InstanceMask(1, np.zeros((4, 4), dtype=bool)).bbox is None

    def test_intrinsics_principal_point_range(self):
        with pytest.raises(ContractViolation):
            CameraIntrinsics(10, 10, 64, 0, 64, 64)

    def test_transform_rejects_reflection(self):
        R = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ContractViolation):
            RigidScaleTransform(1.0, R, np.zeros(3))

    def test_transform_apply_order(self):
        # p -> R @ (s p) + t
        R = rotvec([0, 0, np.pi / 2])
        tr = RigidScaleTransform(2.0, R, np.array([1.0, 0.0, 0.0]))
        out = tr.apply(np.array([[1.0, 0.0, 0.0]]))
        np.testing.assert_allclose(out, [[1.0, 2.0, 0.0]], atol=1e-12)

    def test_transform_compose_inverse(self):
        rng = np.random.default_rng(0)
        a = RigidScaleTransform(1.7, rotvec(rng.normal(size=3) * 0.4), rng.normal(size=3))
        b = RigidScaleTransform(0.6, rotvec(rng.normal(size=3) * 0.4), rng.normal(size=3))
        pts = rng.normal(size=(10, 3))
        np.testing.assert_allclose(a.compose(b).apply(pts), a.apply(b.apply(pts)), atol=1e-12)
        np.testing.assert_allclose(a.inverse().apply(a.apply(pts)), pts, atol=1e-12)

    def test_mesh_rejects_degenerate_face(self):
        with pytest.raises(ContractViolation):
            TriangleMesh(np.zeros((3, 3)), np.array([[0, 0, 1]]))

    def test_mesh_rejects_out_of_range_index(self):
        with pytest.raises(ContractViolation):
            TriangleMesh(np.zeros((3, 3)), np.array([[0, 1, 3]]))

    def test_cloud_colors_length(self):
        with pytest.raises(ContractViolation):
            PointCloud(np.zeros((2, 3)), colors=np.zeros((3, 3)))


class TestUnproject:
    def test_principal_point_ray(self):
        # 1x1 depth {2.0}, fx=fy=1, cx=cy=0 -> point (0, 0, 2)
        K = CameraIntrinsics(1, 1, 0, 0, 1, 1)
        cloud = unproject(DepthMap(np.array([[2.0]]), np.array([[True]])), None, K)
        np.testing.assert_allclose(cloud.points, [[0.0, 0.0, 2.0]])

    def test_2x2_hand_computed(self):
        # fx=fy=100, cx=cy=1, d=1 -> x,y in {-0.01, 0}, z = 1
        K = CameraIntrinsics(100, 100, 1, 1, 2, 2)
        cloud = unproject(DepthMap.from_array(np.ones((2, 2))), None, K)
        assert len(cloud) == 4
        np.testing.assert_allclose(cloud.points[:, 2], 1.0)
        assert set(np.round(cloud.points[:, 0], 6)) == {-0.01, 0.0}
        assert set(np.round(cloud.points[:, 1], 6)) == {-0.01, 0.0}

    def test_empty_mask_empty_cloud(self):
        K = CameraIntrinsics(10, 10, 1, 1, 4, 4)
        mask = InstanceMask(1, np.zeros((4, 4), dtype=bool))
        assert len(unproject(DepthMap.from_array(np.ones((4, 4))), mask, K)) == 0

    def test_dimension_mismatch(self):
        K = CameraIntrinsics(10, 10, 1, 1, 4, 4)
        with pytest.raises(ContractViolation):
            unproject(DepthMap.from_array(np.ones((3, 4))), None, K)
        with pytest.raises(ContractViolation):
            unproject(
                DepthMap.from_array(np.ones((4, 4))),
                InstanceMask(1, np.ones((3, 3), dtype=bool)),
                K,
            )

    def test_round_trip_project(self):
        rng = np.random.default_rng(3)
        K = CameraIntrinsics(75.0, 68.0, 31.5, 30.0, 64, 60)
        depth = DepthMap.from_array(rng.uniform(0.5, 6.0, (60, 64)))
        cloud = unproject(depth, None, K)
        uv, z = project(cloud.points, K)
        vv, uu = np.nonzero(depth.valid)
        np.testing.assert_allclose(uv[:, 0], uu, atol=1e-6)
        np.testing.assert_allclose(uv[:, 1], vv, atol=1e-6)
        np.testing.assert_array_equal(z, depth.depth[vv, uu])  # depths exact

    def test_depth_scaling_equivariance(self):
        rng = np.random.default_rng(4)
        K = CameraIntrinsics(50.0, 50.0, 15.5, 15.5, 32, 32)
        base = rng.uniform(1.0, 4.0, (32, 32))
        lam = 2.75
        a = unproject(DepthMap.from_array(base), None, K)
        b = unproject(DepthMap.from_array(lam * base), None, K)
        np.testing.assert_allclose(b.points, lam * a.points, rtol=1e-12)

    def test_invalid_pixels_skipped(self):
        K = CameraIntrinsics(10, 10, 1, 1, 2, 2)
        valid = np.array([[True, False], [False, True]])
        cloud = unproject(DepthMap(np.ones((2, 2)), valid), None, K)
        assert len(cloud) == 2
