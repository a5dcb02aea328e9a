"""Shared geometric and image domain types.

All types are immutable after construction: arrays are copied, cast to a
canonical dtype and marked read-only, so instances are safe to share across
threads. Validation happens once, in ``__post_init__``; anything that
survives construction satisfies its invariants.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ContractViolation

_ORTHO_TOL = 1e-6


def _frozen_array(values, dtype, shape_hint: str):
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


def _require(cond: bool, message: str):
    if not cond:
        raise ContractViolation(message)


@dataclass(frozen=True)
class ImageBuffer:
    """Dense image with 1, 3 or 4 channels and values in [0, 1].

    ``data`` is (height, width, channels) float64, row-major.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        _require(arr.ndim == 3, "image data must be (h, w, c)")
        _require(arr.shape[2] in (1, 3, 4), f"channels must be 1, 3 or 4, got {arr.shape[2]}")
        _require(bool(np.isfinite(arr).all()), "image values must be finite")
        _require(bool((arr >= 0.0).all() and (arr <= 1.0).all()), "image values must lie in [0, 1]")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel depth in meters along the optical axis, with a validity mask.

    Depth must be finite and strictly positive wherever ``valid`` is set;
    invalid pixels carry no information and are skipped by every consumer.
    """

    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        d = np.ascontiguousarray(np.asarray(self.depth, dtype=np.float64))
        v = np.ascontiguousarray(np.asarray(self.valid, dtype=bool))
        _require(d.ndim == 2, "depth must be 2-D")
        _require(v.shape == d.shape, "valid mask shape must match depth")
        vd = d[v]
        _require(bool(np.isfinite(vd).all()), "valid depths must be finite")
        _require(bool((vd > 0).all()), "valid depths must be > 0")
        d.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "depth", d)
        object.__setattr__(self, "valid", v)

    @classmethod
    def from_array(cls, depth) -> "DepthMap":
        """Build a DepthMap marking finite, positive entries as valid."""
        d = np.asarray(depth, dtype=np.float64)
        return cls(d, np.isfinite(d) & (d > 0))

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


@dataclass(frozen=True)
class InstanceMask:
    """Binary per-instance mask with a derived tight bounding box."""

    id: int
    bitmap: np.ndarray

    def __post_init__(self):
        bm = np.ascontiguousarray(np.asarray(self.bitmap, dtype=bool))
        _require(bm.ndim == 2, "bitmap must be 2-D")
        bm.flags.writeable = False
        object.__setattr__(self, "bitmap", bm)
        rows = np.flatnonzero(bm.any(axis=1))
        cols = np.flatnonzero(bm.any(axis=0))
        if rows.size == 0:
            bbox = None
        else:
            # (x0, y0, x1, y1), half-open
            bbox = (int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)
        object.__setattr__(self, "_bbox", bbox)

    @property
    def bbox(self) -> Optional[tuple]:
        """Tight (x0, y0, x1, y1) half-open rectangle; None for an empty mask."""
        return self._bbox

    @property
    def height(self) -> int:
        return self.bitmap.shape[0]

    @property
    def width(self) -> int:
        return self.bitmap.shape[1]

    @property
    def area(self) -> int:
        return int(self.bitmap.sum())

    def is_empty(self) -> bool:
        return self._bbox is None


@dataclass(frozen=True)
class SemanticInstance:
    """An instance mask paired with its majority-vote class label."""

    mask: InstanceMask
    label: int
    label_confidence: float

    def __post_init__(self):
        _require(0.0 <= self.label_confidence <= 1.0, "label_confidence must be in [0, 1]")


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics. Image origin top-left, +x right, +y down, camera looks +z."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        _require(self.fx > 0 and self.fy > 0, "focal lengths must be > 0")
        _require(0 <= self.cx < self.width, "cx must lie inside the image")
        _require(0 <= self.cy < self.height, "cy must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class RigidScaleTransform:
    """Similarity transform p -> R @ (scale * p) + t with det(R) = +1."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        _require(self.scale > 0, "scale must be > 0")
        R = _frozen_array(self.rotation, np.float64, "3x3")
        t = _frozen_array(self.translation, np.float64, "3")
        _require(R.shape == (3, 3), "rotation must be 3x3")
        _require(t.shape == (3,), "translation must be a 3-vector")
        _require(abs(float(np.linalg.det(R)) - 1.0) < _ORTHO_TOL, "det(R) must be +1")
        _require(
            float(np.max(np.abs(R.T @ R - np.eye(3)))) < _ORTHO_TOL,
            "rotation must be orthonormal",
        )
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidScaleTransform":
        return cls(1.0, np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return (self.scale * pts) @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 form (scale folded into the linear block)."""
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "RigidScaleTransform") -> "RigidScaleTransform":
        """Return self ∘ other (apply ``other`` first)."""
        return RigidScaleTransform(
            self.scale * other.scale,
            self.rotation @ other.rotation,
            self.rotation @ (self.scale * other.translation) + self.translation,
        )

    def inverse(self) -> "RigidScaleTransform":
        inv_s = 1.0 / self.scale
        inv_R = self.rotation.T
        return RigidScaleTransform(inv_s, inv_R, -inv_s * (inv_R @ self.translation))


@dataclass(frozen=True)
class PointCloud:
    """Points in meters, optionally colored."""

    points: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64).reshape(-1, 3))
        _require(bool(np.isfinite(pts).all()), "point coordinates must be finite")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        if self.colors is not None:
            col = np.ascontiguousarray(np.asarray(self.colors, dtype=np.float64).reshape(-1, 3))
            _require(col.shape[0] == pts.shape[0], "colors must match point count")
            _require(bool((col >= 0).all() and (col <= 1).all()), "colors must lie in [0, 1]")
            col.flags.writeable = False
            object.__setattr__(self, "colors", col)

    def __len__(self) -> int:
        return self.points.shape[0]

    def diagonal(self) -> float:
        """Length of the axis-aligned bounding-box diagonal (0 for < 2 points)."""
        if len(self) < 2:
            return 0.0
        extent = self.points.max(axis=0) - self.points.min(axis=0)
        return float(np.linalg.norm(extent))


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle mesh; faces must be non-degenerate and in range."""

    vertices: np.ndarray
    faces: np.ndarray
    vertex_colors: Optional[np.ndarray] = None
    metadata: Optional[dict] = field(default=None, compare=False)

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64).reshape(-1, 3))
        _require(bool(np.isfinite(v).all()), "vertices must be finite")
        if f.size:
            _require(bool((f >= 0).all() and (f < len(v)).all()), "face index out of range")
            degenerate = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            _require(not bool(degenerate.any()), "faces must use three distinct vertices")
        v.flags.writeable = False
        f.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if self.vertex_colors is not None:
            c = np.ascontiguousarray(np.asarray(self.vertex_colors, dtype=np.float64).reshape(-1, 3))
            _require(c.shape[0] == v.shape[0], "vertex colors must match vertex count")
            c.flags.writeable = False
            object.__setattr__(self, "vertex_colors", c)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    def face_areas(self) -> np.ndarray:
        a = self.vertices[self.faces[:, 0]]
        b = self.vertices[self.faces[:, 1]]
        c = self.vertices[self.faces[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def transformed(self, transform: RigidScaleTransform) -> "TriangleMesh":
        return TriangleMesh(
            transform.apply(self.vertices),
            self.faces,
            vertex_colors=self.vertex_colors,
            metadata=self.metadata,
        )

    def diagonal(self) -> float:
        if self.n_vertices < 2:
            return 0.0
        extent = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(extent))
