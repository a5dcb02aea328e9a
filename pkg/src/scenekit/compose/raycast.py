"""Ray-mesh intersection for visibility extraction.

Rays leave the camera origin through pixel centers (integer pixel
coordinates, matching the unprojection convention) and are intersected with
every triangle via Moller-Trumbore, chunked to bound memory. Meshes here are
small enough that an acceleration structure would not pay for itself.
"""

from __future__ import annotations

import math
from typing import Optional, Tuple

import numpy as np

from ..core.types import CameraIntrinsics, PointCloud, RigidScaleTransform, TriangleMesh

_EPS = 1e-12
_CHUNK = 4_000_000  # max ray*triangle pairs per vectorized batch


def _pixel_ray_dirs(intrinsics: CameraIntrinsics, samples_per_pixel: int) -> np.ndarray:
    """Direction vectors (not normalized) for each pixel sample, row-major."""
    uu, vv = np.meshgrid(
        np.arange(intrinsics.width, dtype=np.float64),
        np.arange(intrinsics.height, dtype=np.float64),
    )
    if samples_per_pixel <= 1:
        us = uu.ravel()
        vs = vv.ravel()
    else:
        side = int(math.ceil(math.sqrt(samples_per_pixel)))
        offsets = (np.arange(side) + 0.5) / side - 0.5
        us, vs = [], []
        taken = 0
        for oy in offsets:
            for ox in offsets:
                if taken >= samples_per_pixel:
                    break
                us.append(uu.ravel() + ox)
                vs.append(vv.ravel() + oy)
                taken += 1
        us = np.concatenate(us)
        vs = np.concatenate(vs)
    x = (us - intrinsics.cx) / intrinsics.fx
    y = (vs - intrinsics.cy) / intrinsics.fy
    return np.column_stack([x, y, np.ones_like(x)])


def raycast_triangles(
    origins: np.ndarray, dirs: np.ndarray, vertices: np.ndarray, faces: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Nearest positive ray parameter per ray; (t, hit_face_index), t=inf on miss."""
    n_rays = dirs.shape[0]
    best_t = np.full(n_rays, np.inf)
    best_face = np.full(n_rays, -1, dtype=np.int64)
    if faces.shape[0] == 0 or n_rays == 0:
        return best_t, best_face

    v0 = vertices[faces[:, 0]]
    e1 = vertices[faces[:, 1]] - v0
    e2 = vertices[faces[:, 2]] - v0
    tri_per_batch = max(1, _CHUNK // n_rays)
    for start in range(0, faces.shape[0], tri_per_batch):
        sl = slice(start, start + tri_per_batch)
        b_v0, b_e1, b_e2 = v0[sl], e1[sl], e2[sl]
        # shapes: rays (n, 1, 3) vs triangles (1, m, 3)
        pvec = np.cross(dirs[:, None, :], b_e2[None, :, :])
        det = np.einsum("nmk,mk->nm", pvec, b_e1)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_det = 1.0 / det
            tvec = origins[:, None, :] - b_v0[None, :, :]
            u = np.einsum("nmk,nmk->nm", tvec, pvec) * inv_det
            qvec = np.cross(tvec, b_e1[None, :, :])
            v = np.einsum("nmk,nk->nm", qvec, dirs) * inv_det
            t = np.einsum("nmk,mk->nm", qvec, b_e2) * inv_det
            ok = (
                (np.abs(det) > _EPS)
                & (u >= -_EPS)
                & (v >= -_EPS)
                & (u + v <= 1.0 + _EPS)
                & (t > _EPS)
            )
        t = np.where(ok, t, np.inf)
        idx = np.argmin(t, axis=1)
        tmin = t[np.arange(n_rays), idx]
        better = tmin < best_t
        best_t[better] = tmin[better]
        best_face[better] = idx[better] + start
    return best_t, best_face


def visible_points(
    mesh: TriangleMesh,
    pose: RigidScaleTransform,
    intrinsics: CameraIntrinsics,
    samples_per_pixel: int = 1,
) -> PointCloud:
    """Nearest camera-space intersection per pixel ray against the posed mesh.

    Pixels whose rays miss contribute nothing; an off-screen mesh yields an
    empty cloud. Deterministic for fixed inputs.
    """
    posed = pose.apply(mesh.vertices)
    dirs = _pixel_ray_dirs(intrinsics, samples_per_pixel)
    # cull rays outside the posed mesh's projected bbox (1 px margin)
    z = posed[:, 2]
    if (z > 0).any():
        zz = np.maximum(z, 1e-9)
        u = intrinsics.fx * posed[:, 0] / zz + intrinsics.cx
        v = intrinsics.fy * posed[:, 1] / zz + intrinsics.cy
        u = u[z > 0]
        v = v[z > 0]
        ux = dirs[:, 0] / dirs[:, 2] * intrinsics.fx + intrinsics.cx
        vx = dirs[:, 1] / dirs[:, 2] * intrinsics.fy + intrinsics.cy
        near = (
            (ux >= u.min() - 1.0)
            & (ux <= u.max() + 1.0)
            & (vx >= v.min() - 1.0)
            & (vx <= v.max() + 1.0)
        )
        if (z <= 0).any():
            near[:] = True  # geometry crossing the camera plane: no safe cull
        dirs = dirs[near]
    origins = np.zeros_like(dirs)
    t, _ = raycast_triangles(origins, dirs, posed, mesh.faces)
    hit = np.isfinite(t)
    return PointCloud(dirs[hit] * t[hit, None])


def render_depth(
    mesh: TriangleMesh,
    pose: RigidScaleTransform,
    intrinsics: CameraIntrinsics,
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-pixel axis-aligned depth (z of nearest hit) and hit mask."""
    posed = pose.apply(mesh.vertices)
    dirs = _pixel_ray_dirs(intrinsics, 1)
    origins = np.zeros_like(dirs)
    t, _ = raycast_triangles(origins, dirs, posed, mesh.faces)
    shape = (intrinsics.height, intrinsics.width)
    hit = np.isfinite(t).reshape(shape)
    z = (t * dirs[:, 2]).reshape(shape)  # dirs have z = 1, so t is already axis depth
    return np.where(hit, z, 0.0), hit
