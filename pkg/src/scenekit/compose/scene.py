"""Scale estimation, reference extraction and final scene assembly."""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..core.camera import unproject
from ..core.types import (
    CameraIntrinsics,
    DepthMap,
    InstanceMask,
    PointCloud,
    RigidScaleTransform,
    TriangleMesh,
)
from ..errors import ContractViolation, DegenerateInput
from .silhouette import PoseState

_COLLINEAR_TOL = 1e-9


def reference_points(
    depth: DepthMap, mask: InstanceMask, intrinsics: CameraIntrinsics
) -> PointCloud:
    """Unproject the instance's valid-depth pixels; the anchor for placement."""
    cloud = unproject(depth, mask, intrinsics)
    if len(cloud) < 3:
        raise DegenerateInput(f"need >= 3 masked valid-depth pixels, got {len(cloud)}")
    return cloud


def _check_spread(cloud: PointCloud, name: str):
    if cloud.diagonal() <= 0:
        raise DegenerateInput(f"{name} cloud has zero bounding-box diagonal")
    centered = cloud.points - cloud.points.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    if s[1] <= _COLLINEAR_TOL * max(s[0], 1e-30):
        raise DegenerateInput(f"{name} cloud is collinear")


def estimate_scale(mesh_visible: PointCloud, reference: PointCloud) -> float:
    """Ratio of bounding-box diagonals: reference over visible mesh points."""
    _check_spread(mesh_visible, "mesh_visible")
    _check_spread(reference, "reference")
    return reference.diagonal() / mesh_visible.diagonal()


def normalize_to_unit_diagonal(mesh: TriangleMesh) -> Tuple[TriangleMesh, float]:
    """Center the mesh on its bbox midpoint and scale its diagonal to 1.

    Backends emit meshes in arbitrary canonical units; normalizing first
    makes the estimated scale well-defined. Returns (mesh, original diagonal).
    """
    diag = mesh.diagonal()
    if diag <= 0:
        raise DegenerateInput("mesh bounding box has zero diagonal")
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    center = 0.5 * (lo + hi)
    return (
        TriangleMesh(
            (mesh.vertices - center) / diag,
            mesh.faces,
            vertex_colors=mesh.vertex_colors,
            metadata=mesh.metadata,
        ),
        diag,
    )


def fill_depth_holes(depth: DepthMap, holes: np.ndarray) -> DepthMap:
    """Interpolate depth across hole pixels from the surrounding valid ones.

    Linear barycentric interpolation with nearest-neighbour fallback outside
    the convex hull; used to complete the room background where foreground
    instances were removed.
    """
    from scipy import interpolate

    holes = np.asarray(holes, dtype=bool)
    if holes.shape != depth.depth.shape:
        raise ContractViolation("holes mask must match depth dimensions")
    known = depth.valid & ~holes
    if not known.any():
        raise DegenerateInput("no valid pixels to interpolate from")
    fill_at = holes & ~known
    if not fill_at.any():
        return depth
    kv, ku = np.nonzero(known)
    fv, fu = np.nonzero(fill_at)
    values = depth.depth[kv, ku]
    filled = interpolate.griddata((kv, ku), values, (fv, fu), method="linear")
    nearest = interpolate.griddata((kv, ku), values, (fv, fu), method="nearest")
    filled = np.where(np.isnan(filled), nearest, filled)
    out = depth.depth.copy()
    out[fv, fu] = filled
    valid = depth.valid.copy()
    valid[fv, fu] = filled > 0
    return DepthMap(np.where(valid, out, 0.0), valid)


def depth_to_mesh(
    depth: DepthMap,
    intrinsics: CameraIntrinsics,
    mask: Optional[InstanceMask] = None,
    colors: Optional[np.ndarray] = None,
    max_rel_jump: Optional[float] = None,
) -> TriangleMesh:
    """Lift a depth map to a camera-space height-field mesh.

    Adjacent valid pixels are connected into grid quads (two triangles).
    ``max_rel_jump`` optionally cuts edges whose relative depth difference
    exceeds it, which keeps occlusion boundaries from being bridged.
    """
    select = depth.valid.copy()
    if mask is not None:
        if mask.bitmap.shape != depth.depth.shape:
            raise ContractViolation("mask dimensions must match depth")
        select &= mask.bitmap
    if not select.any():
        raise DegenerateInput("no selected valid pixels to lift")
    h, w = select.shape
    index = np.full((h, w), -1, dtype=np.int64)
    vv, uu = np.nonzero(select)
    index[vv, uu] = np.arange(vv.size)
    d = depth.depth[vv, uu]
    x = (uu - intrinsics.cx) / intrinsics.fx * d
    y = (vv - intrinsics.cy) / intrinsics.fy * d
    verts = np.column_stack([x, y, d])

    q = select[:-1, :-1] & select[:-1, 1:] & select[1:, :-1] & select[1:, 1:]
    if max_rel_jump is not None:
        dmap = depth.depth
        corners = np.stack(
            [dmap[:-1, :-1], dmap[:-1, 1:], dmap[1:, :-1], dmap[1:, 1:]], axis=0
        )
        spread = corners.max(axis=0) - corners.min(axis=0)
        q &= spread <= max_rel_jump * corners.min(axis=0)
    rr, cc = np.nonzero(q)
    a = index[rr, cc]
    b = index[rr, cc + 1]
    c = index[rr + 1, cc]
    e = index[rr + 1, cc + 1]
    faces = np.concatenate(
        [np.column_stack([a, b, c]), np.column_stack([b, e, c])], axis=0
    )
    vc = None
    if colors is not None:
        col = np.asarray(colors, dtype=np.float64)
        if col.shape[:2] != (h, w):
            raise ContractViolation("color image must match depth dimensions")
        vc = col[vv, uu]
    return TriangleMesh(verts, faces, vertex_colors=vc)


def cluster_decimate(mesh: TriangleMesh, cells: int = 24) -> TriangleMesh:
    """Coarse vertex-clustering decimation (grid of ``cells`` per bbox axis).

    Good enough for silhouette work where only the outline matters; returns
    the input unchanged when it is already small.
    """
    if mesh.n_vertices <= 4 * cells or mesh.n_faces == 0:
        return mesh
    lo = mesh.vertices.min(axis=0)
    extent = mesh.vertices.max(axis=0) - lo
    size = max(float(extent.max()) / cells, 1e-12)
    keys = np.floor((mesh.vertices - lo) / size).astype(np.int64)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    n_clusters = int(inverse.max()) + 1
    sums = np.zeros((n_clusters, 3))
    np.add.at(sums, inverse, mesh.vertices)
    counts = np.bincount(inverse, minlength=n_clusters).astype(np.float64)
    new_verts = sums / counts[:, None]
    new_faces = inverse[mesh.faces]
    keep = (
        (new_faces[:, 0] != new_faces[:, 1])
        & (new_faces[:, 1] != new_faces[:, 2])
        & (new_faces[:, 0] != new_faces[:, 2])
    )
    new_faces = new_faces[keep]
    if new_faces.shape[0] == 0:
        return mesh
    return TriangleMesh(new_verts, new_faces)


def extrude_to_plane(mesh: TriangleMesh, z_back: float) -> TriangleMesh:
    """Close an open height-field sheet by extruding it to a constant-z plane.

    Adds a back copy of every vertex at z_back and stitches the sheet's
    boundary edges to it, turning a visible-surface lift into a solid.
    """
    n = mesh.n_vertices
    back = mesh.vertices.copy()
    back[:, 2] = z_back
    verts = np.concatenate([mesh.vertices, back], axis=0)
    front = mesh.faces
    rear = front[:, ::-1] + n
    edge_count: dict = {}
    for f in front:
        for k in range(3):
            key = (min(f[k], f[(k + 1) % 3]), max(f[k], f[(k + 1) % 3]))
            edge_count[key] = edge_count.get(key, 0) + 1
    ring = []
    for (i, j), count in edge_count.items():
        if count == 1:
            ring.append([i, j, j + n])
            ring.append([i, j + n, i + n])
    faces = [front, rear]
    if ring:
        faces.append(np.array(ring, dtype=np.int64))
    return TriangleMesh(verts, np.concatenate(faces, axis=0), vertex_colors=None)


def compose_scene(
    background: TriangleMesh,
    instances: Sequence[Tuple[TriangleMesh, PoseState]],
    force: bool = False,
) -> TriangleMesh:
    """Concatenate the background with every posed instance mesh.

    Refuses non-converged poses unless ``force``; per-instance vertex/face
    spans are recorded in the result's metadata.
    """
    bad = [i for i, (_, pose) in enumerate(instances) if not pose.converged]
    if bad and not force:
        raise ContractViolation(f"poses not converged for instances {bad}; pass force=True")
    verts = [background.vertices]
    faces = [background.faces]
    colors = [background.vertex_colors]
    spans = []
    v_off = background.n_vertices
    f_off = background.n_faces
    for mesh, pose in instances:
        posed = pose.transform.apply(mesh.vertices)
        verts.append(posed)
        faces.append(mesh.faces + v_off)
        colors.append(mesh.vertex_colors)
        spans.append(
            {
                "vertex_offset": int(v_off),
                "vertex_count": int(mesh.n_vertices),
                "face_offset": int(f_off),
                "face_count": int(mesh.n_faces),
                "converged": bool(pose.converged),
                "final_loss": float(pose.final_loss),
            }
        )
        v_off += mesh.n_vertices
        f_off += mesh.n_faces
    vc = None
    if all(c is not None for c in colors):
        vc = np.concatenate(colors, axis=0)
    return TriangleMesh(
        np.concatenate(verts, axis=0),
        np.concatenate(faces, axis=0),
        vertex_colors=vc,
        metadata={"background_faces": int(background.n_faces), "instances": spans},
    )
