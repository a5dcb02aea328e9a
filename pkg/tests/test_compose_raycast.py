"""Ray-mesh visibility extraction."""

import numpy as np
import pytest

from scenekit.core.types import CameraIntrinsics, RigidScaleTransform, TriangleMesh
from scenekit.compose import visible_points
from scenekit.compose.raycast import _pixel_ray_dirs, raycast_triangles

from conftest import cuboid_mesh, rotvec


def _square(z, half=0.5):
    verts = np.array(
        [[-half, -half, z], [half, -half, z], [half, half, z], [-half, half, z]]
    )
    return TriangleMesh(verts, np.array([[0, 1, 2], [0, 2, 3]]))


class TestVisiblePoints:
    def test_front_facing_square_hit_count(self, camera_96, identity_pose):
        # square of half-extent 0.5 at z = 2: projects to fx*1.0/2 = 40 px side
        mesh = _square(2.0)
        cloud = visible_points(mesh, identity_pose, camera_96)
        area = (80.0 * 1.0 / 2.0) ** 2
        assert abs(len(cloud) - area) <= 4 * 40 + 4  # one-pixel rim tolerance
        np.testing.assert_allclose(cloud.points[:, 2], 2.0, atol=1e-9)

    def test_behind_camera_empty(self, camera_96, identity_pose):
        assert len(visible_points(_square(-2.0), identity_pose, camera_96)) == 0

    def test_cube_returns_front_face_only(self, camera_96):
        pose = RigidScaleTransform(1.0, np.eye(3), np.array([0.0, 0.0, 3.0]))
        cloud = visible_points(cuboid_mesh(1.0, 1.0, 1.0), pose, camera_96)
        # axis-aligned cube centered on axis: every visible point on z = 2.5
        np.testing.assert_allclose(cloud.points[:, 2], 2.5, atol=1e-9)
        assert len(cloud) > 100

    def test_nearest_hit_is_per_ray_minimum(self, camera_96):
        # two stacked squares: all hits must land on the nearer one
        near = _square(2.0)
        far = _square(4.0)
        both = TriangleMesh(
            np.concatenate([near.vertices, far.vertices]),
            np.concatenate([near.faces, far.faces + 4]),
        )
        cloud = visible_points(both, RigidScaleTransform.identity(), camera_96)
        np.testing.assert_allclose(cloud.points[:, 2], 2.0, atol=1e-9)

    def test_exhaustive_minimum_on_small_mesh(self, camera_96):
        rng = np.random.default_rng(17)
        verts = rng.uniform(-0.6, 0.6, (12, 3)) + np.array([0, 0, 2.5])
        faces = np.array([[0, 1, 2], [3, 4, 5], [6, 7, 8], [9, 10, 11]])
        mesh = TriangleMesh(verts, faces)
        dirs = _pixel_ray_dirs(camera_96, 1)
        t, _ = raycast_triangles(np.zeros_like(dirs), dirs, verts, faces)
        # oracle: per-ray minimum over per-triangle intersections
        t_each = [
            raycast_triangles(np.zeros_like(dirs), dirs, verts, faces[i : i + 1])[0]
            for i in range(4)
        ]
        np.testing.assert_array_equal(t, np.minimum.reduce(t_each))

    def test_deterministic(self, camera_96):
        pose = RigidScaleTransform(1.0, rotvec([0.2, 0.3, 0.1]), np.array([0.1, 0.0, 2.7]))
        a = visible_points(cuboid_mesh(), pose, camera_96)
        b = visible_points(cuboid_mesh(), pose, camera_96)
        np.testing.assert_array_equal(a.points, b.points)

    def test_reprojection_inside_image(self, camera_96):
        from scenekit.core.camera import project

        pose = RigidScaleTransform(1.0, rotvec([0.4, 0.2, 0.0]), np.array([0.4, 0.3, 2.2]))
        cloud = visible_points(cuboid_mesh(), pose, camera_96)
        uv, z = project(cloud.points, camera_96)
        assert (uv[:, 0] >= -0.5).all() and (uv[:, 0] <= 95.5).all()
        assert (uv[:, 1] >= -0.5).all() and (uv[:, 1] <= 95.5).all()
        assert (z > 0).all()

    def test_samples_per_pixel(self, camera_96, identity_pose):
        one = visible_points(_square(2.0), identity_pose, camera_96, samples_per_pixel=1)
        four = visible_points(_square(2.0), identity_pose, camera_96, samples_per_pixel=4)
        assert len(four) == pytest.approx(4 * len(one), rel=0.1)
