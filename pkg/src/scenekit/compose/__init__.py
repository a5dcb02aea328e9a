from .icp import IcpConfig, IcpResult, icp_register
from .raycast import raycast_triangles, render_depth, visible_points
from .scene import (
    cluster_decimate,
    compose_scene,
    depth_to_mesh,
    estimate_scale,
    fill_depth_holes,
    normalize_to_unit_diagonal,
    reference_points,
)
from .silhouette import PoseState, RefineConfig, Silhouette, refine_pose, render_silhouette

__all__ = [
    "IcpConfig",
    "IcpResult",
    "PoseState",
    "RefineConfig",
    "Silhouette",
    "cluster_decimate",
    "compose_scene",
    "depth_to_mesh",
    "estimate_scale",
    "fill_depth_holes",
    "icp_register",
    "normalize_to_unit_diagonal",
    "raycast_triangles",
    "reference_points",
    "refine_pose",
    "render_depth",
    "render_silhouette",
    "visible_points",
]
