"""Point-to-point ICP registration."""

import math

import numpy as np
import pytest

from scenekit.compose import IcpConfig, icp_register
from scenekit.core.types import PointCloud, RigidScaleTransform
from scenekit.errors import DegenerateInput

from conftest import rotation_angle_deg, rotvec


def _cloud(rng, n=400):
    return PointCloud(rng.uniform(-0.5, 0.5, (n, 3)))


def test_identity_on_equal_clouds():
    rng = np.random.default_rng(40)
    cloud = _cloud(rng)
    res = icp_register(cloud, cloud)
    assert res.converged
    assert rotation_angle_deg(res.transform.rotation, np.eye(3)) < 1e-6
    assert np.linalg.norm(res.transform.translation) < 1e-6
    assert res.rmse < 1e-6


def test_recovers_random_rigid_transforms():
    rng = np.random.default_rng(41)
    for _ in range(10):
        src = _cloud(rng, 600)
        axis = rng.normal(size=3)
        axis *= math.radians(rng.uniform(0, 30)) / np.linalg.norm(axis)
        R0 = rotvec(axis)
        t0 = rng.uniform(-0.4, 0.4, 3)
        dst = PointCloud(src.points @ R0.T + t0)
        res = icp_register(src, dst)
        assert res.rmse < 1e-4
        assert rotation_angle_deg(res.transform.rotation, R0) < 0.1
        assert np.linalg.norm(res.transform.translation - t0) < 1e-3


def test_inverse_composition_is_identity():
    rng = np.random.default_rng(42)
    for _ in range(5):
        src = _cloud(rng, 500)
        T = RigidScaleTransform(1.0, rotvec(rng.normal(size=3) * 0.2), rng.normal(size=3) * 0.2)
        res = icp_register(src, PointCloud(T.apply(src.points)))
        combined = T.inverse().compose(res.transform)
        assert np.max(np.abs(combined.rotation - np.eye(3))) < 1e-4
        assert np.linalg.norm(combined.translation) < 1e-4


def test_yaw_sweep_recovers_large_inplane_rotation():
    rng = np.random.default_rng(43)
    # an L-shaped cloud so yaw is unambiguous
    a = rng.uniform(0, 1, (300, 3)) * np.array([1.0, 0.2, 0.25])
    b = rng.uniform(0, 1, (300, 3)) * np.array([0.25, 0.2, 1.0])
    src = PointCloud(np.concatenate([a, b]))
    R0 = rotvec([0.0, math.radians(170), 0.0])
    dst = PointCloud(src.points @ R0.T + np.array([0.2, 0.0, 0.1]))
    res = icp_register(src, dst)
    assert res.rmse < 1e-3


def test_disjoint_clouds_flagged():
    rng = np.random.default_rng(44)
    src = _cloud(rng, 100)
    dst = PointCloud(rng.uniform(50.0, 51.0, (100, 3)))
    res = icp_register(src, dst, IcpConfig(max_iters=8, yaw_sweep=False))
    assert res.rmse > 0.1  # nothing sensible to find


def test_min_points_enforced():
    rng = np.random.default_rng(45)
    with pytest.raises(DegenerateInput):
        icp_register(PointCloud(rng.random((3, 3))), _cloud(rng))


def test_scale_stays_one():
    rng = np.random.default_rng(46)
    src = _cloud(rng)
    dst = PointCloud(src.points * 2.0)  # scaled target: ICP must not absorb it
    res = icp_register(src, dst)
    assert res.transform.scale == 1.0
