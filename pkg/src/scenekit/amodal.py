"""Refined inpainting masks for occluded and out-of-frame instances.

Builds, for one target instance, the mask an inpainting backend should fill
to recover the instance's hidden parts: start from the masks of neighbouring
instances, drop pixels that lie farther from the camera than the target
(those cannot occlude it), and extend the canvas where the target is cut off
by the image border. The instance is composited onto uniform random noise so
the backend cannot anchor on scene context.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .core import io as skio
from .core.types import DepthMap, ImageBuffer, InstanceMask, SemanticInstance
from .errors import ContractViolation, DegenerateInput

# adjacency default calibrated at 1024x1024 and scaled with the image diagonal
_REFERENCE_RADIUS = 15.0
_REFERENCE_DIAGONAL = float(math.hypot(1024.0, 1024.0))


@dataclass(frozen=True)
class AmodalConfig:
    adjacency_radius: Optional[float] = None  # None: scale 15 px @ 1024^2 by diagonal
    depth_percentile: float = 1.0
    margin_frac: float = 0.3
    noise_seed: int = 0
    prompt_template: str = "a complete, fully visible {label}, studio background"
    class_names: Dict[int, str] = field(default_factory=dict)

    def radius_for(self, shape: Tuple[int, int]) -> float:
        if self.adjacency_radius is not None:
            return float(self.adjacency_radius)
        diag = math.hypot(shape[0], shape[1])
        return max(1.0, _REFERENCE_RADIUS * diag / _REFERENCE_DIAGONAL)

    def prompt_for(self, label: int) -> str:
        name = self.class_names.get(label, f"class-{label}")
        return self.prompt_template.format(label=name)


@dataclass(frozen=True)
class AmodalRequest:
    """One inpainting work item: what to fill, on which canvas, with what prompt."""

    instance: SemanticInstance
    refined_mask: InstanceMask
    noised_image: ImageBuffer
    prompt: str
    canvas_offset: Tuple[int, int]
    skip_inpainting: bool = False

    def __post_init__(self):
        if (self.refined_mask.height, self.refined_mask.width) != (
            self.noised_image.height,
            self.noised_image.width,
        ):
            raise ContractViolation("refined mask and noised image must share the canvas")
        ox, oy = self.canvas_offset
        target = self.instance.mask.bitmap
        h, w = target.shape
        window = self.refined_mask.bitmap[oy : oy + h, ox : ox + w]
        if bool((window & target).any()):
            raise ContractViolation("refined mask must not cover visible target pixels")


def init_mask(
    target: InstanceMask, others: Sequence[InstanceMask], adjacency_radius: float
) -> InstanceMask:
    """Union of the full masks of every neighbouring instance, minus the target.

    An instance counts as neighbouring when any of its pixels lies within
    ``adjacency_radius`` (Euclidean) of the target, i.e. it meets the
    target's dilation by that radius; overlap trivially qualifies.
    """
    if adjacency_radius < 1:
        raise ContractViolation("adjacency_radius must be >= 1")
    shape = target.bitmap.shape
    out = np.zeros(shape, dtype=bool)
    if target.is_empty():
        return InstanceMask(target.id, out)
    dist = ndimage.distance_transform_edt(~target.bitmap)
    near = dist <= adjacency_radius
    for other in others:
        if other.bitmap.shape != shape:
            raise ContractViolation("all masks must share dimensions")
        if other.id == target.id:
            continue
        if bool((near & other.bitmap).any()):
            out |= other.bitmap
    out &= ~target.bitmap
    return InstanceMask(target.id, out)


def depth_filter(
    mask: InstanceMask,
    depth: DepthMap,
    target: InstanceMask,
    percentile: float = 1.0,
) -> InstanceMask:
    """Keep only candidate pixels not farther than the target's depth statistic.

    The statistic is the given quantile of depth over the target's valid
    pixels; 1.0 reproduces the strict maximum. Candidate pixels without a
    valid depth are kept (they cannot be shown to be farther).
    """
    if mask.bitmap.shape != depth.depth.shape or target.bitmap.shape != depth.depth.shape:
        raise ContractViolation("mask, target and depth must share dimensions")
    if not 0.0 < percentile <= 1.0:
        raise ContractViolation("percentile must be in (0, 1]")
    target_depths = depth.depth[target.bitmap & depth.valid]
    if target_depths.size == 0:
        raise DegenerateInput("target has no valid-depth pixel")
    limit = float(np.quantile(target_depths, percentile))
    farther = mask.bitmap & depth.valid & (depth.depth > limit)
    return InstanceMask(mask.id, mask.bitmap & ~farther)


def boundary_extend(
    mask: InstanceMask, target: InstanceMask, margin_frac: float
) -> Tuple[InstanceMask, Tuple[int, int]]:
    """Grow the canvas where the target touches the image border.

    Each touched side gains ceil(margin_frac * target bbox extent along that
    axis) pixels of canvas; within the new strip, rows/columns where the
    target actually touches that border are added to the mask. Returns the
    (possibly larger) mask and the (x, y) offset of the original canvas
    inside the new one.
    """
    if margin_frac < 0:
        raise ContractViolation("margin_frac must be >= 0")
    h, w = target.bitmap.shape
    if target.is_empty() or margin_frac == 0:
        return mask, (0, 0)
    x0, y0, x1, y1 = target.bbox
    bbox_w, bbox_h = x1 - x0, y1 - y0
    grow_x = int(math.ceil(margin_frac * bbox_w))
    grow_y = int(math.ceil(margin_frac * bbox_h))

    left = grow_x if target.bitmap[:, 0].any() else 0
    right = grow_x if target.bitmap[:, -1].any() else 0
    top = grow_y if target.bitmap[0, :].any() else 0
    bottom = grow_y if target.bitmap[-1, :].any() else 0
    if left == right == top == bottom == 0:
        return mask, (0, 0)

    new = np.zeros((h + top + bottom, w + left + right), dtype=bool)
    new[top : top + h, left : left + w] = mask.bitmap
    if left:
        rows = np.flatnonzero(target.bitmap[:, 0])
        new[np.ix_(rows + top, np.arange(left))] = True
    if right:
        rows = np.flatnonzero(target.bitmap[:, -1])
        new[np.ix_(rows + top, left + w + np.arange(right))] = True
    if top:
        cols = np.flatnonzero(target.bitmap[0, :])
        new[np.ix_(np.arange(top), cols + left)] = True
    if bottom:
        cols = np.flatnonzero(target.bitmap[-1, :])
        new[np.ix_(top + h + np.arange(bottom), cols + left)] = True
    return InstanceMask(mask.id, new), (left, top)


def make_request(
    instance: SemanticInstance,
    others: Sequence[InstanceMask],
    depth: DepthMap,
    image: ImageBuffer,
    cfg: AmodalConfig = AmodalConfig(),
) -> AmodalRequest:
    """Chain mask initialization, depth filtering and boundary extension,
    then composite the visible instance onto seeded uniform noise."""
    target = instance.mask
    if (image.height, image.width) != target.bitmap.shape or depth.depth.shape != target.bitmap.shape:
        raise ContractViolation("image, depth and target mask must share dimensions")
    radius = cfg.radius_for(target.bitmap.shape)
    candidate = init_mask(target, others, radius)
    filtered = depth_filter(candidate, depth, target, cfg.depth_percentile)
    refined, offset = boundary_extend(filtered, target, cfg.margin_frac)

    canvas_h, canvas_w = refined.bitmap.shape
    rng = np.random.default_rng(np.random.PCG64(cfg.noise_seed + int(instance.mask.id)))
    noised = rng.uniform(0.0, 1.0, (canvas_h, canvas_w, image.channels))
    ox, oy = offset
    h, w = target.bitmap.shape
    window = noised[oy : oy + h, ox : ox + w]
    window[target.bitmap] = image.data[target.bitmap]

    return AmodalRequest(
        instance=instance,
        refined_mask=refined,
        noised_image=ImageBuffer(noised),
        prompt=cfg.prompt_for(instance.label),
        canvas_offset=offset,
        skip_inpainting=refined.is_empty(),
    )


def write_request(request: AmodalRequest, directory) -> Path:
    """Serialize a request as noised.png + mask.png + request.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    skio.save_image(request.noised_image, directory / "noised.png")
    mask_img = ImageBuffer(request.refined_mask.bitmap.astype(np.float64))
    skio.save_image(mask_img, directory / "mask.png")
    skio.write_json(
        directory / "request.json",
        {
            "instance_id": int(request.instance.mask.id),
            "prompt": request.prompt,
            "canvas_offset": list(request.canvas_offset),
            "skip_inpainting": bool(request.skip_inpainting),
        },
    )
    return directory


def read_request_meta(directory) -> dict:
    return skio.read_json(Path(directory) / "request.json")
