"""Point-to-point ICP registration with fixed unit scale.

Scale is estimated separately (bounding-box diagonals) and re-optimized
during silhouette refinement, so registration stays rigid. Each iteration
pairs every source point with its nearest target neighbour, drops pairs
beyond 3x the median pair distance, and solves the closed-form rigid
alignment (SVD of the cross-covariance). A yaw sweep over furniture-typical
orientations guards against large in-plane rotation offsets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from ..core.types import PointCloud, RigidScaleTransform
from ..errors import DegenerateInput

_DEFAULT_YAW_DEG = (0.0, 45.0, -45.0, 90.0, -90.0, 180.0)


@dataclass(frozen=True)
class IcpConfig:
    max_iters: int = 100
    tol: float = 1e-6
    min_points: int = 10
    reject_factor: float = 3.0
    yaw_sweep: bool = True
    yaw_angles_deg: Sequence[float] = _DEFAULT_YAW_DEG


@dataclass(frozen=True)
class IcpResult:
    transform: RigidScaleTransform
    rmse: float
    iterations: int
    converged: bool


def _yaw_rotation(angle_deg: float) -> np.ndarray:
    # yaw about the camera up axis (-y, i.e. rotation in the xz plane)
    a = math.radians(angle_deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _best_rigid(src: np.ndarray, dst: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Closed-form rigid (R, t) minimizing ||R s + t - d||^2 (Kabsch)."""
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return R, cd - R @ cs


def _run_single(
    source: np.ndarray, tree: cKDTree, target: np.ndarray, R0: np.ndarray, cfg: IcpConfig
) -> Tuple[np.ndarray, np.ndarray, float, int, bool]:
    R, t = R0, target.mean(axis=0) - (source @ R0.T).mean(axis=0)
    best = (R, t, np.inf)
    prev_rmse = np.inf
    converged = False
    iters = 0
    for iters in range(1, cfg.max_iters + 1):
        moved = source @ R.T + t
        dist, idx = tree.query(moved)
        rmse = float(np.sqrt(np.mean(dist**2)))
        if rmse < best[2]:
            best = (R, t, rmse)
        if abs(prev_rmse - rmse) < cfg.tol:
            converged = True
            break
        prev_rmse = rmse
        keep = dist <= cfg.reject_factor * max(float(np.median(dist)), 1e-30)
        if keep.sum() < 3:
            break
        R, t = _best_rigid(source[keep], target[idx[keep]])
    R, t, rmse = best
    return R, t, rmse, iters, converged


def icp_register(source: PointCloud, target: PointCloud, cfg: IcpConfig = IcpConfig()) -> IcpResult:
    """Register source onto target; returns the best transform found.

    ``converged`` is False when the iteration budget ran out before the RMSE
    settled, which is the expected signature of non-overlapping clouds.
    """
    if len(source) < cfg.min_points or len(target) < cfg.min_points:
        raise DegenerateInput(
            f"both clouds need >= {cfg.min_points} points, got {len(source)}/{len(target)}"
        )
    src = source.points
    tgt = target.points
    tree = cKDTree(tgt)
    inits = [np.eye(3)]
    if cfg.yaw_sweep:
        inits += [_yaw_rotation(a) for a in cfg.yaw_angles_deg if a != 0.0]
    best = None
    for R0 in inits:
        R, t, rmse, iters, converged = _run_single(src, tree, tgt, R0, cfg)
        if best is None or rmse < best[2]:
            best = (R, t, rmse, iters, converged)
        if converged and rmse <= cfg.tol:
            break  # exact fit found, remaining yaw inits cannot beat it
    R, t, rmse, iters, converged = best
    return IcpResult(
        transform=RigidScaleTransform(1.0, R, t),
        rmse=rmse,
        iterations=iters,
        converged=converged,
    )
