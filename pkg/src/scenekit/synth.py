"""Deterministic synthetic indoor fixture scene.

Builds a small camera-space room (floor, back wall, side wall) furnished
with three boxes: one partially occluded, one doing the occluding, and one
cut off by the image border. Ground-truth meshes, exact ray-cast depth,
instance masks, a semantic map and a flat-shaded image are derived from the
same geometry, so every pipeline stage has a consistent oracle to chew on.

Run ``python -m scenekit.synth OUT_DIR`` to materialize the fixture.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from .compose.raycast import _pixel_ray_dirs, raycast_triangles
from .core import io as skio
from .core.types import CameraIntrinsics, DepthMap, ImageBuffer, InstanceMask, TriangleMesh

CLASS_TABLE = {1: "wall", 2: "floor", 10: "sofa", 11: "table", 12: "chair"}
IGNORE_LABEL = 0
BACKGROUND_CLASS_NAMES = ("wall", "floor", "ceiling", "window", "door")
FLAT_CLASS_NAMES = ("wall", "floor", "ceiling")

_COLORS = {
    1: (0.75, 0.73, 0.68),
    2: (0.55, 0.45, 0.35),
    3: (0.70, 0.70, 0.72),
    10: (0.25, 0.35, 0.60),
    11: (0.55, 0.25, 0.20),
    12: (0.25, 0.50, 0.30),
}


@dataclass(frozen=True)
class FixtureScene:
    intrinsics: CameraIntrinsics
    meshes: Dict[int, TriangleMesh]  # instance id -> mesh (camera space)
    labels: Dict[int, int]  # instance id -> class id
    depth: DepthMap
    instance_ids: np.ndarray  # per-pixel id, 0 = none
    semantic: np.ndarray
    image: ImageBuffer
    gt_scene: TriangleMesh


def _quad(a, b, c, d, intrinsics: CameraIntrinsics, n: int = 48) -> TriangleMesh:
    """Subdivided rectangle, trimmed to faces whose centroids project in-view.

    Keeps the ground-truth surfaces honest for single-view evaluation: a
    plane extending far outside the camera frustum is unrecoverable by
    construction and would only pollute the chamfer distance.
    """
    a, b, c, d = (np.asarray(p, dtype=np.float64) for p in (a, b, c, d))
    us, vs = np.meshgrid(np.linspace(0, 1, n + 1), np.linspace(0, 1, n + 1))
    verts = (
        a[None, None]
        + us[:, :, None] * (b - a)[None, None]
        + vs[:, :, None] * (d - a)[None, None]
    ).reshape(-1, 3)
    idx = np.arange((n + 1) * (n + 1)).reshape(n + 1, n + 1)
    q00 = idx[:-1, :-1].ravel()
    q01 = idx[:-1, 1:].ravel()
    q10 = idx[1:, :-1].ravel()
    q11 = idx[1:, 1:].ravel()
    faces = np.concatenate(
        [np.column_stack([q00, q01, q11]), np.column_stack([q00, q11, q10])], axis=0
    )
    centroids = verts[faces].mean(axis=1)
    z = centroids[:, 2]
    u = intrinsics.fx * centroids[:, 0] / z + intrinsics.cx
    v = intrinsics.fy * centroids[:, 1] / z + intrinsics.cy
    keep = (z > 0) & (u >= 0) & (u <= intrinsics.width - 1) & (v >= 0) & (v <= intrinsics.height - 1)
    faces = faces[keep]
    used = np.unique(faces)
    remap = np.full(verts.shape[0], -1, dtype=np.int64)
    remap[used] = np.arange(used.size)
    return TriangleMesh(verts[used], remap[faces])


def _box(center, size) -> TriangleMesh:
    cx, cy, cz = center
    sx, sy, sz = (s / 2.0 for s in size)
    verts = np.array(
        [[cx + dx * sx, cy + dy * sy, cz + dz * sz]
         for dx in (-1, 1) for dy in (-1, 1) for dz in (-1, 1)],
        dtype=np.float64,
    )
    faces = np.array(
        [[0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5], [0, 4, 5], [0, 5, 1],
         [2, 3, 7], [2, 7, 6], [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3]]
    )
    return TriangleMesh(verts, faces)


def build_fixture(size: int = 128) -> FixtureScene:
    f = size * 100.0 / 128.0
    c = (size - 1) / 2.0
    intrinsics = CameraIntrinsics(f, f, c, c, size, size)

    floor_y = 1.4
    meshes = {
        # back wall, floor, right wall; the room corner is at x = 2.5
        1: _quad((-5, -5, 7), (2.5, -5, 7), (2.5, floor_y, 7), (-5, floor_y, 7), intrinsics),
        2: _quad((-5, floor_y, 2.1), (2.5, floor_y, 2.1), (2.5, floor_y, 7), (-5, floor_y, 7), intrinsics),
        3: _quad((2.5, -5, 2.1), (2.5, -5, 7), (2.5, floor_y, 7), (2.5, floor_y, 2.1), intrinsics),
        # sofa (partially hidden by the table), table, chair cut by the right edge
        10: _box((-0.60, floor_y - 0.35, 4.5), (1.2, 0.7, 0.6)),
        11: _box((-0.20, floor_y - 0.25, 3.2), (0.8, 0.5, 0.5)),
        12: _box((1.90, floor_y - 0.30, 3.5), (0.9, 0.6, 0.5)),
    }
    labels = {1: 1, 2: 2, 3: 1, 10: 10, 11: 11, 12: 12}

    dirs = _pixel_ray_dirs(intrinsics, 1)
    origins = np.zeros_like(dirs)
    best_t = np.full(dirs.shape[0], np.inf)
    hit_id = np.zeros(dirs.shape[0], dtype=np.int64)
    for inst_id, mesh in meshes.items():
        t, _ = raycast_triangles(origins, dirs, mesh.vertices, mesh.faces)
        closer = t < best_t
        best_t[closer] = t[closer]
        hit_id[closer] = inst_id

    shape = (size, size)
    valid = np.isfinite(best_t).reshape(shape)
    depth = DepthMap(np.where(valid, best_t.reshape(shape), 0.0), valid)
    instance_ids = (hit_id.reshape(shape) * valid).astype(np.int64)
    semantic = np.zeros(shape, dtype=np.int64)
    for inst_id, class_id in labels.items():
        semantic[instance_ids == inst_id] = class_id

    rows = np.linspace(0.0, 0.08, size)[:, None]
    rgb = np.zeros((size, size, 3))
    for inst_id, color in _COLORS.items():
        rgb[instance_ids == inst_id] = color
    rgb = np.clip(rgb + rows[:, :, None], 0.0, 1.0)
    image = ImageBuffer(rgb)

    verts, faces = [], []
    offset = 0
    for inst_id in sorted(meshes):
        m = meshes[inst_id]
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        offset += m.n_vertices
    gt_scene = TriangleMesh(np.concatenate(verts), np.concatenate(faces))

    return FixtureScene(
        intrinsics=intrinsics,
        meshes=meshes,
        labels=labels,
        depth=depth,
        instance_ids=instance_ids,
        semantic=semantic,
        image=image,
        gt_scene=gt_scene,
    )


def detail_depth_from(depth: DepthMap) -> Tuple[DepthMap, float, float]:
    """Affine-normalized copy of a metric depth: (d - min) / (max - min).

    Returns (detail, scale, shift) with metric = scale * detail + shift.
    """
    vals = depth.depth[depth.valid]
    lo, hi = float(vals.min()), float(vals.max())
    detail = np.where(depth.valid, (depth.depth - lo) / (hi - lo), 0.0)
    # keep strictly positive where valid (DepthMap invariant)
    eps = 1e-6
    detail = np.where(depth.valid, np.maximum(detail, eps), 0.0)
    return DepthMap(detail, depth.valid), hi - lo, lo


def instance_masks(scene: FixtureScene) -> List[InstanceMask]:
    ids = [i for i in sorted(scene.meshes) if (scene.instance_ids == i).any()]
    return [InstanceMask(i, scene.instance_ids == i) for i in ids]


def write_fixture(out_dir, size: int = 128) -> Path:
    """Materialize the fixture scene as pipeline input files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene = build_fixture(size)

    skio.save_image(scene.image, out / "image.png")
    skio.save_instance_masks(instance_masks(scene), out / "instances.png")
    skio.save_semantic_map(scene.semantic, CLASS_TABLE, IGNORE_LABEL, out / "semantic.png")
    skio.save_depth_png16(scene.depth, out / "depth_coherent.png")
    detail, _, _ = detail_depth_from(scene.depth)
    skio.save_depth_png16(detail, out / "depth_detail.png")
    skio.write_json(
        out / "intrinsics.json",
        {
            "fx": scene.intrinsics.fx,
            "fy": scene.intrinsics.fy,
            "cx": scene.intrinsics.cx,
            "cy": scene.intrinsics.cy,
            "width": scene.intrinsics.width,
            "height": scene.intrinsics.height,
        },
    )
    skio.save_mesh_ply(scene.gt_scene, out / "gt_scene.ply")
    return out


def main(argv=None):
    import argparse

    parser = argparse.ArgumentParser(description="Write the synthetic fixture scene")
    parser.add_argument("out_dir")
    parser.add_argument("--size", type=int, default=128)
    args = parser.parse_args(argv)
    path = write_fixture(args.out_dir, size=args.size)
    print(f"fixture written to {path}")


if __name__ == "__main__":
    main()
