"""Serialization round-trips for every wire format."""

import numpy as np
import pytest

from scenekit.core import io as skio
from scenekit.core.types import DepthMap, ImageBuffer, InstanceMask, PointCloud, TriangleMesh


def test_image_png8_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    img = ImageBuffer(np.round(rng.random((9, 7, 3)) * 255) / 255.0)
    skio.save_image(img, tmp_path / "x.png")
    back = skio.load_image(tmp_path / "x.png")
    np.testing.assert_allclose(back.data, img.data, atol=1e-12)


def test_image_png16_gray_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    img = ImageBuffer(np.round(rng.random((5, 6)) * 65535) / 65535.0)
    skio.save_image(img, tmp_path / "g.png", bits=16)
    back = skio.load_image(tmp_path / "g.png")
    np.testing.assert_allclose(back.data, img.data, atol=1e-12)


def test_rgba_round_trip(tmp_path):
    img = ImageBuffer(np.stack([np.eye(4)] * 4, axis=2))
    skio.save_image(img, tmp_path / "a.png")
    back = skio.load_image(tmp_path / "a.png")
    assert back.channels == 4
    np.testing.assert_allclose(back.data, img.data)


def test_instance_masks_round_trip(tmp_path):
    bm1 = np.zeros((6, 6), dtype=bool)
    bm1[1:3, 1:3] = True
    bm2 = np.zeros((6, 6), dtype=bool)
    bm2[4:6, 0:2] = True
    skio.save_instance_masks([InstanceMask(3, bm1), InstanceMask(7, bm2)], tmp_path / "m.png")
    back = {m.id: m for m in skio.load_instance_masks(tmp_path / "m.png")}
    assert set(back) == {3, 7}
    np.testing.assert_array_equal(back[3].bitmap, bm1)
    np.testing.assert_array_equal(back[7].bitmap, bm2)


def test_semantic_map_round_trip(tmp_path):
    labels = np.array([[0, 1], [2, 300]])
    skio.save_semantic_map(labels, {1: "wall", 2: "floor", 300: "sofa"}, 0, tmp_path / "s.png")
    back, names, ignore = skio.load_semantic_map(tmp_path / "s.png")
    np.testing.assert_array_equal(back, labels)
    assert names == {1: "wall", 2: "floor", 300: "sofa"}
    assert ignore == 0


def test_depth_png16_round_trip_quantized(tmp_path):
    rng = np.random.default_rng(2)
    arr = rng.uniform(0.5, 8.0, (12, 10))
    valid = rng.random((12, 10)) > 0.2
    depth = DepthMap(np.where(valid, arr, 0.0), valid)
    skio.save_depth_png16(depth, tmp_path / "d.png")
    back = skio.load_depth_png16(tmp_path / "d.png")
    np.testing.assert_array_equal(back.valid, valid)
    # quantization error bounded by one 16-bit step of the max depth
    step = arr[valid].max() / 65535.0
    assert np.abs(back.depth[valid] - arr[valid]).max() <= step


def test_pfm_round_trip_exact_float32(tmp_path):
    rng = np.random.default_rng(3)
    arr = rng.uniform(0.5, 8.0, (7, 5)).astype(np.float32).astype(np.float64)
    depth = DepthMap.from_array(arr)
    skio.save_pfm(depth, tmp_path / "d.pfm")
    back = skio.load_pfm(tmp_path / "d.pfm")
    np.testing.assert_array_equal(back.depth, arr)


def test_mesh_obj_round_trip(tmp_path):
    mesh = TriangleMesh(
        np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0.25]]),
        np.array([[0, 1, 2]]),
        vertex_colors=np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]]),
    )
    skio.save_mesh_obj(mesh, tmp_path / "m.obj")
    back = skio.load_mesh_obj(tmp_path / "m.obj")
    np.testing.assert_allclose(back.vertices, mesh.vertices)
    np.testing.assert_array_equal(back.faces, mesh.faces)
    np.testing.assert_allclose(back.vertex_colors, mesh.vertex_colors)


def test_mesh_ply_round_trip(tmp_path):
    mesh = TriangleMesh(
        np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]),
        np.array([[0, 1, 2], [0, 2, 3]]),
    )
    skio.save_mesh_ply(mesh, tmp_path / "m.ply")
    back = skio.load_mesh_ply(tmp_path / "m.ply")
    np.testing.assert_allclose(back.vertices, mesh.vertices)
    np.testing.assert_array_equal(back.faces, mesh.faces)


def test_pointcloud_ply_round_trip(tmp_path):
    cloud = PointCloud(
        np.array([[0.125, -2.0, 3.5], [1.0, 2.0, 3.0]]),
        colors=np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]),
    )
    skio.save_pointcloud_ply(cloud, tmp_path / "c.ply")
    back = skio.load_pointcloud_ply(tmp_path / "c.ply")
    np.testing.assert_allclose(back.points, cloud.points)
    np.testing.assert_allclose(back.colors, cloud.colors)


def test_write_is_deterministic(tmp_path):
    depth = DepthMap.from_array(np.linspace(1, 5, 20).reshape(4, 5))
    skio.save_depth_png16(depth, tmp_path / "a.png")
    skio.save_depth_png16(depth, tmp_path / "b.png")
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def test_atomic_write_leaves_no_temp(tmp_path):
    skio.atomic_write_text(tmp_path / "x.txt", "hello")
    assert [p.name for p in tmp_path.iterdir()] == ["x.txt"]
