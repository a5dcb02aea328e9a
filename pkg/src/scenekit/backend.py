"""File-based adapter protocol for neural oracles.

Backends (inpainting, defurnishing, image-to-3D, depth estimation) run as
separate processes that watch job input directories and drop their outputs
next to them; this module owns the submit/poll bookkeeping plus
deterministic mock backends so the whole pipeline can run without any
neural model. Job ids are content hashes of the input directory, which
makes resubmission idempotent and caching free.
"""

from __future__ import annotations

import hashlib
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy import ndimage

from .compose.scene import depth_to_mesh, extrude_to_plane
from .core import io as skio
from .core.types import CameraIntrinsics, ImageBuffer, InstanceMask
from .errors import UnknownJobError, ValidationError

ENV_BACKEND_ROOT = "SCENEKIT_BACKEND_ROOT"
PROTOCOL_VERSION = 1

KIND_INPUTS: Dict[str, List[str]] = {
    "amodal_inpaint": ["noised.png", "mask.png", "request.json"],
    "defurnish": ["rgba.png"],
    "image_to_3d": ["view.png"],
    "depth_detail": ["image.png"],
    "depth_coherent": ["image.png"],
}

KIND_OUTPUTS: Dict[str, List[str]] = {
    "amodal_inpaint": ["completed.png"],
    "defurnish": ["empty_room.png"],
    "image_to_3d": ["mesh.obj"],
    "depth_detail": ["depth.png", "depth.png.json"],
    "depth_coherent": ["depth.png", "depth.png.json"],
}

MOCK_RULES = ("identity", "fill_mask_with_constant", "lift_depth_to_plane_mesh")


@dataclass
class BackendJob:
    kind: str
    input_dir: Path
    output_dir: Path
    status: str = "pending"
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KIND_INPUTS:
            raise ValidationError(f"unknown backend kind {self.kind!r}")
        self.input_dir = Path(self.input_dir)
        self.output_dir = Path(self.output_dir)


def default_root() -> Path:
    return Path(os.environ.get(ENV_BACKEND_ROOT, "backend_jobs"))


def _hash_dir(kind: str, input_dir: Path) -> str:
    digest = hashlib.sha256()
    digest.update(kind.encode())
    for path in sorted(p for p in input_dir.rglob("*") if p.is_file()):
        digest.update(str(path.relative_to(input_dir)).encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()[:16]


def _check_output(kind: str, output_dir: Path) -> Optional[str]:
    """None while outputs are missing, 'done' or a failure diagnostic otherwise."""
    expected = [output_dir / name for name in KIND_OUTPUTS[kind]]
    if not all(p.exists() for p in expected):
        return None
    try:
        if kind in ("amodal_inpaint", "defurnish"):
            skio.load_image(expected[0])
        elif kind == "image_to_3d":
            skio.load_mesh_obj(expected[0])
        else:
            skio.load_depth_png16(expected[0])
    except Exception as exc:  # unreadable artifact is a failed job, not a crash
        return f"failed: {expected[0].name}: {exc}"
    return "done"


class JobRegistry:
    """Submit/poll bookkeeping over a job directory root."""

    def __init__(self, root=None):
        self.root = Path(root) if root is not None else default_root()
        self._lock = threading.Lock()

    def _record_path(self, job_id: str) -> Path:
        return self.root / "jobs" / f"{job_id}.json"

    def submit(self, job: BackendJob) -> str:
        inputs = KIND_INPUTS[job.kind]
        for name in inputs:
            path = job.input_dir / name
            if not path.exists():
                raise ValidationError(f"missing input file {name} in {job.input_dir}")
        if job.kind == "amodal_inpaint":
            skio.load_image(job.input_dir / "noised.png")
            skio.load_image(job.input_dir / "mask.png")
        elif job.kind == "defurnish":
            rgba = skio.load_image(job.input_dir / "rgba.png")
            if rgba.channels != 4:
                raise ValidationError("rgba.png must have 4 channels")
        elif job.kind in ("depth_detail", "depth_coherent", "image_to_3d"):
            skio.load_image(job.input_dir / inputs[0])

        request_path = job.input_dir / "request.json"
        if not request_path.exists():
            skio.write_json(
                request_path,
                {"protocol_version": PROTOCOL_VERSION, "kind": job.kind, **job.manifest},
            )
        job_id = _hash_dir(job.kind, job.input_dir)
        with self._lock:
            skio.write_json(
                self._record_path(job_id),
                {
                    "id": job_id,
                    "kind": job.kind,
                    "input_dir": str(job.input_dir),
                    "output_dir": str(job.output_dir),
                    "manifest": job.manifest,
                    "protocol_version": PROTOCOL_VERSION,
                },
            )
        return job_id

    def get(self, job_id: str) -> dict:
        path = self._record_path(job_id)
        if not path.exists():
            raise UnknownJobError(job_id)
        return skio.read_json(path)

    def poll(self, job_id: str) -> str:
        record = self.get(job_id)
        state = _check_output(record["kind"], Path(record["output_dir"]))
        if state is None:
            return "pending"
        return "done" if state == "done" else "failed"

    def diagnostic(self, job_id: str) -> Optional[str]:
        record = self.get(job_id)
        state = _check_output(record["kind"], Path(record["output_dir"]))
        return None if state in (None, "done") else state

    def job_ids(self) -> List[str]:
        jobs_dir = self.root / "jobs"
        if not jobs_dir.exists():
            return []
        return sorted(p.stem for p in jobs_dir.glob("*.json"))


def rgba_pack(image: ImageBuffer, mask: InstanceMask) -> ImageBuffer:
    """Bundle an RGB image with a binary mask as its alpha channel."""
    if (image.height, image.width) != mask.bitmap.shape:
        raise ValidationError("image and mask dimensions must match")
    if image.channels == 1:
        rgb = np.repeat(image.data, 3, axis=2)
    elif image.channels == 4:
        rgb = image.data[:, :, :3]
    else:
        rgb = image.data
    alpha = mask.bitmap.astype(np.float64)[:, :, None]
    return ImageBuffer(np.concatenate([rgb, alpha], axis=2))


def _border_mean(data: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Mean color of unmasked pixels adjacent to the mask (fallback: all unmasked)."""
    ring = ndimage.binary_dilation(mask, np.ones((3, 3), dtype=bool)) & ~mask
    if not ring.any():
        ring = ~mask
    if not ring.any():
        return np.full(data.shape[2], 0.5)
    return data[ring].mean(axis=0)


def _mock_intrinsics(input_dir: Path, shape) -> CameraIntrinsics:
    path = input_dir / "intrinsics.json"
    if path.exists():
        meta = skio.read_json(path)
        return CameraIntrinsics(
            meta["fx"], meta["fy"], meta["cx"], meta["cy"], meta["width"], meta["height"]
        )
    h, w = shape
    return CameraIntrinsics(float(max(h, w)), float(max(h, w)), w / 2.0, h / 2.0, w, h)


def mock_backend(kind: str, rule: str) -> Callable[[dict], None]:
    """Deterministic handler writing synthetic outputs for one job kind."""
    if rule not in MOCK_RULES:
        raise ValidationError(f"unknown mock rule {rule!r}")

    def handle(record: dict):
        input_dir = Path(record["input_dir"])
        output_dir = Path(record["output_dir"])
        output_dir.mkdir(parents=True, exist_ok=True)
        if kind == "amodal_inpaint":
            noised = skio.load_image(input_dir / "noised.png")
            if rule == "identity":
                completed = noised
            elif rule == "fill_mask_with_constant":
                mask = skio.load_image(input_dir / "mask.png").data[:, :, 0] > 0.5
                data = noised.data.copy()
                data[mask] = _border_mean(noised.data, mask)
                completed = ImageBuffer(data)
            else:
                raise ValidationError(f"rule {rule!r} not defined for {kind}")
            skio.save_image(completed, output_dir / "completed.png")
        elif kind == "defurnish":
            rgba = skio.load_image(input_dir / "rgba.png")
            rgb = rgba.data[:, :, :3]
            if rule == "identity":
                out = rgb
            elif rule == "fill_mask_with_constant":
                mask = rgba.data[:, :, 3] > 0.5
                out = rgb.copy()
                out[mask] = _border_mean(rgb, mask)
            else:
                raise ValidationError(f"rule {rule!r} not defined for {kind}")
            skio.save_image(ImageBuffer(out), output_dir / "empty_room.png")
        elif kind == "image_to_3d":
            if rule != "lift_depth_to_plane_mesh":
                raise ValidationError(f"rule {rule!r} not defined for {kind}")
            depth = skio.load_depth_png16(input_dir / "depth.png")
            intrinsics = _mock_intrinsics(input_dir, depth.depth.shape)
            view = skio.load_image(input_dir / "view.png")
            colors = view.data[:, :, :3] if view.channels >= 3 else None
            mesh = depth_to_mesh(depth, intrinsics, colors=colors)
            # real image-to-3D backends emit complete objects; close the
            # visible-surface sheet by extruding to the far plane
            z_back = float(depth.depth[depth.valid].max())
            mesh = extrude_to_plane(mesh, z_back)
            skio.save_mesh_obj(mesh, output_dir / "mesh.obj")
        elif kind in ("depth_detail", "depth_coherent"):
            if rule != "identity":
                raise ValidationError(f"rule {rule!r} not defined for {kind}")
            # identity depth oracle: echo a depth map provided next to the image
            src = input_dir / "depth.png"
            if not src.exists():
                raise ValidationError(f"mock {kind} needs depth.png in the input dir")
            depth = skio.load_depth_png16(src)
            skio.save_depth_png16(depth, output_dir / "depth.png")
        else:
            raise ValidationError(f"unknown backend kind {kind!r}")

    return handle


def run_mock_backends(root=None, rules: Optional[Dict[str, str]] = None) -> Dict[str, str]:
    """Process every pending job under the root once; returns id -> status."""
    registry = JobRegistry(root)
    if rules is None:
        rules = {
            "amodal_inpaint": "identity",
            "defurnish": "fill_mask_with_constant",
            "image_to_3d": "lift_depth_to_plane_mesh",
        }
    results = {}
    for job_id in registry.job_ids():
        status = registry.poll(job_id)
        if status == "done":
            results[job_id] = "done"
            continue
        record = registry.get(job_id)
        kind = record["kind"]
        if kind not in rules:
            results[job_id] = "pending"
            continue
        try:
            mock_backend(kind, rules[kind])(record)
            results[job_id] = registry.poll(job_id)
        except Exception as exc:  # one broken job must not stall the queue
            results[job_id] = f"failed: {exc}"
    return results
