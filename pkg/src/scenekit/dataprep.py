"""Training-data preparation utilities: camera-sample validity and mask
augmentation.

Camera samples for synthetic indoor renders are accepted when they sit at
human eye level (1.4 to 1.9 m by default) and keep at least 3 m clearance
from every scene instance. Inpainting masks are randomly dilated or eroded
so downstream models tolerate imperfect segmentation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from .core import io as skio
from .core.types import InstanceMask, PointCloud
from .errors import ContractViolation, DegenerateInput

_AXIS_INDEX = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True)
class CameraSample:
    position: Tuple[float, float, float]
    yaw: float = 0.0
    pitch: float = 0.0

    def height(self, up_axis: str = "z") -> float:
        return float(self.position[_AXIS_INDEX[up_axis]])


@dataclass(frozen=True)
class CameraValidityConfig:
    h_min: float = 1.4
    h_max: float = 1.9
    d_min: float = 3.0
    up_axis: str = "z"


@dataclass(frozen=True)
class CameraCheck:
    accepted: bool
    reason: Optional[str] = None  # "height" or "proximity" on rejection


@dataclass(frozen=True)
class MaskAugmentConfig:
    max_radius: int = 12


def validate_camera(
    sample: CameraSample,
    scene_points: PointCloud,
    cfg: CameraValidityConfig = CameraValidityConfig(),
) -> CameraCheck:
    """Accept iff the camera height is in range and no instance point is too close."""
    if len(scene_points) == 0:
        raise DegenerateInput("scene_points must be non-empty")
    h = sample.height(cfg.up_axis)
    if not cfg.h_min <= h <= cfg.h_max:
        return CameraCheck(False, "height")
    pos = np.asarray(sample.position, dtype=np.float64)
    nearest = float(np.min(np.linalg.norm(scene_points.points - pos, axis=1)))
    if nearest < cfg.d_min:
        return CameraCheck(False, "proximity")
    return CameraCheck(True)


def disk_element(radius: int) -> np.ndarray:
    """Euclidean disk structuring element of the given radius."""
    if radius < 1:
        raise ContractViolation("radius must be >= 1")
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return xx * xx + yy * yy <= r * r


def augment_mask(
    mask: InstanceMask, seed: int, cfg: MaskAugmentConfig = MaskAugmentConfig()
) -> InstanceMask:
    """Randomly dilate or erode the mask with a seeded disk radius.

    Erosion that would empty a non-empty mask falls back to the original.
    """
    if cfg.max_radius < 1:
        raise ContractViolation("max_radius must be >= 1")
    rng = np.random.default_rng(np.random.PCG64(seed))
    radius = int(rng.integers(1, cfg.max_radius + 1))
    dilate = bool(rng.integers(0, 2))
    element = disk_element(radius)
    if dilate:
        out = ndimage.binary_dilation(mask.bitmap, element)
    else:
        out = ndimage.binary_erosion(mask.bitmap, element)
        if not out.any() and mask.bitmap.any():
            return mask
    return InstanceMask(mask.id, out)


def validate_camera_jsonl(
    samples_path,
    scene_points: PointCloud,
    report_path,
    cfg: CameraValidityConfig = CameraValidityConfig(),
) -> dict:
    """Batch mode: JSONL of {position, yaw, pitch} in, accept/reject report out."""
    results = []
    with open(samples_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            payload = json.loads(line)
            sample = CameraSample(
                tuple(payload["position"]),
                yaw=payload.get("yaw", 0.0),
                pitch=payload.get("pitch", 0.0),
            )
            check = validate_camera(sample, scene_points, cfg)
            results.append(
                {"position": list(sample.position), "accepted": check.accepted, "reason": check.reason}
            )
    summary = {
        "total": len(results),
        "accepted": sum(r["accepted"] for r in results),
        "results": results,
    }
    skio.write_json(Path(report_path), summary)
    return summary
