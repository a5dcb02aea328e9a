"""Pinhole projection and back-projection.

Conventions (asserted in tests): image origin top-left, +x right, +y down,
camera looks along +z. Depth is distance along the optical axis, not ray
length. Pixel (u, v) back-projects through p = d * K^-1 * (u, v, 1)^T with
u, v taken as integer pixel coordinates.
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from ..errors import ContractViolation
from .types import CameraIntrinsics, DepthMap, InstanceMask, PointCloud


def unproject(
    depth: DepthMap,
    mask: Optional[InstanceMask],
    intrinsics: CameraIntrinsics,
) -> PointCloud:
    """Back-project valid (and masked, if a mask is given) pixels to 3-D.

    Returns one point per selected pixel, in row-major pixel order; each
    point's z equals the pixel's depth value.
    """
    if (depth.height, depth.width) != (intrinsics.height, intrinsics.width):
        raise ContractViolation(
            f"depth {depth.height}x{depth.width} does not match intrinsics "
            f"{intrinsics.height}x{intrinsics.width}"
        )
    select = depth.valid
    if mask is not None:
        if mask.bitmap.shape != depth.depth.shape:
            raise ContractViolation("mask dimensions must match depth")
        select = select & mask.bitmap

    vv, uu = np.nonzero(select)
    d = depth.depth[vv, uu]
    x = (uu - intrinsics.cx) / intrinsics.fx * d
    y = (vv - intrinsics.cy) / intrinsics.fy * d
    return PointCloud(np.column_stack([x, y, d]))


def project(points: np.ndarray, intrinsics: CameraIntrinsics) -> Tuple[np.ndarray, np.ndarray]:
    """Project camera-space points to pixel coordinates.

    Returns (uv, z) with uv float (n, 2); points at or behind the camera
    plane (z <= 0) yield NaN coordinates.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    z = pts[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intrinsics.fx * pts[:, 0] / z + intrinsics.cx
        v = intrinsics.fy * pts[:, 1] / z + intrinsics.cy
    bad = z <= 0
    u = np.where(bad, np.nan, u)
    v = np.where(bad, np.nan, v)
    return np.column_stack([u, v]), z.copy()
