from .camera import project, unproject
from .types import (
    CameraIntrinsics,
    DepthMap,
    ImageBuffer,
    InstanceMask,
    PointCloud,
    RigidScaleTransform,
    SemanticInstance,
    TriangleMesh,
)

__all__ = [
    "CameraIntrinsics",
    "DepthMap",
    "ImageBuffer",
    "InstanceMask",
    "PointCloud",
    "RigidScaleTransform",
    "SemanticInstance",
    "TriangleMesh",
    "project",
    "unproject",
]
