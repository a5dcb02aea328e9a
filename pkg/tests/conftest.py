import math

import numpy as np
import pytest

from scenekit.core.types import CameraIntrinsics, RigidScaleTransform, TriangleMesh


def cuboid_mesh(sx=1.0, sy=0.7, sz=0.5) -> TriangleMesh:
    """Closed, consistently wound axis-aligned cuboid centered at the origin."""
    v = np.array(
        [[x, y, z] for x in (-sx / 2, sx / 2) for y in (-sy / 2, sy / 2) for z in (-sz / 2, sz / 2)]
    )
    f = np.array(
        [[0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5], [0, 4, 5], [0, 5, 1],
         [2, 3, 7], [2, 7, 6], [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3]]
    )
    return TriangleMesh(v, f)


def rotvec(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    theta = float(np.linalg.norm(w))
    if theta < 1e-12:
        return np.eye(3)
    k = w / theta
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(theta) * K + (1 - math.cos(theta)) * (K @ K)


def rotation_angle_deg(R_est: np.ndarray, R_true: np.ndarray) -> float:
    cosang = (np.trace(R_est @ R_true.T) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, cosang))))


@pytest.fixture
def camera_96() -> CameraIntrinsics:
    return CameraIntrinsics(80.0, 80.0, 48.0, 48.0, 96, 96)


@pytest.fixture
def identity_pose() -> RigidScaleTransform:
    return RigidScaleTransform.identity()
