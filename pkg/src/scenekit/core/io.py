"""File formats for images, masks, depth maps, meshes and point clouds.

Images and masks travel as PNG (8/16-bit), depth as 16-bit PNG with a JSON
sidecar holding ``scale_m_per_unit`` or as a portable float map (PFM),
meshes as ASCII OBJ / PLY, point clouds as ASCII PLY. All writes go through
a write-temp-then-rename helper so readers never observe partial files.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from PIL import Image

from ..errors import ValidationError
from .types import DepthMap, ImageBuffer, InstanceMask, PointCloud, TriangleMesh


def atomic_write_bytes(path, payload: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, payload: dict):
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _png_bytes(img: Image.Image) -> bytes:
    import io as _io

    buf = _io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


# ---------------------------------------------------------------- images


def save_image(image: ImageBuffer, path, bits: int = 8):
    """Write an ImageBuffer as 8- or 16-bit PNG."""
    if bits not in (8, 16):
        raise ValidationError(f"unsupported bit depth {bits}")
    arr = image.data
    maxval = 255 if bits == 8 else 65535
    q = np.round(arr * maxval).astype(np.uint8 if bits == 8 else np.uint16)
    if image.channels == 1:
        if bits == 8:
            img = Image.fromarray(q[:, :, 0], mode="L")
        else:
            img = Image.fromarray(q[:, :, 0].astype(np.uint16))
    else:
        if bits == 16:
            raise ValidationError("16-bit PNG supported for single-channel images only")
        img = Image.fromarray(q, mode="RGB" if image.channels == 3 else "RGBA")
    atomic_write_bytes(path, _png_bytes(img))


def load_image(path) -> ImageBuffer:
    with Image.open(path) as img:
        img.load()
        if img.mode in ("I;16", "I"):
            arr = np.asarray(img, dtype=np.float64)[:, :, None] / 65535.0
        elif img.mode == "L":
            arr = np.asarray(img, dtype=np.float64)[:, :, None] / 255.0
        elif img.mode in ("RGB", "RGBA"):
            arr = np.asarray(img, dtype=np.float64) / 255.0
        else:
            converted = img.convert("RGB")
            arr = np.asarray(converted, dtype=np.float64) / 255.0
    return ImageBuffer(np.clip(arr, 0.0, 1.0))


# ---------------------------------------------------------------- masks


def save_instance_masks(masks: List[InstanceMask], path, shape: Optional[Tuple[int, int]] = None):
    """Write instance masks as one indexed 16-bit PNG (pixel value = id, 0 = none).

    Overlapping masks are resolved in favor of the smaller id, matching the
    deterministic reader below; callers needing exact overlap must store
    masks individually.
    """
    if not masks and shape is None:
        raise ValidationError("shape required to save an empty mask list")
    h, w = shape if shape is not None else masks[0].bitmap.shape
    canvas = np.zeros((h, w), dtype=np.uint16)
    for m in sorted(masks, key=lambda m: m.id, reverse=True):
        if m.id <= 0 or m.id > 65535:
            raise ValidationError(f"instance id {m.id} not storable in 16-bit PNG")
        canvas[m.bitmap] = m.id
    img = Image.fromarray(canvas)
    atomic_write_bytes(path, _png_bytes(img))


def load_instance_masks(path) -> List[InstanceMask]:
    with Image.open(path) as img:
        img.load()
        arr = np.asarray(img)
    ids = np.unique(arr)
    return [InstanceMask(int(i), arr == i) for i in ids if i != 0]


def save_semantic_map(labels: np.ndarray, class_names: Dict[int, str], ignore_label: int, path):
    """Indexed 16-bit PNG plus a JSON class-name table at <path>.json."""
    arr = np.asarray(labels)
    if arr.min() < 0 or arr.max() > 65535:
        raise ValidationError("semantic labels must fit in uint16")
    img = Image.fromarray(arr.astype(np.uint16))
    atomic_write_bytes(path, _png_bytes(img))
    write_json(
        str(path) + ".json",
        {
            "ignore_label": int(ignore_label),
            "classes": {str(k): v for k, v in sorted(class_names.items())},
        },
    )


def load_semantic_map(path):
    """Returns (labels int array, class_names dict, ignore_label)."""
    with Image.open(path) as img:
        img.load()
        labels = np.asarray(img).astype(np.int64)
    meta = read_json(str(path) + ".json")
    names = {int(k): v for k, v in meta["classes"].items()}
    return labels, names, int(meta["ignore_label"])


# ---------------------------------------------------------------- depth


def save_depth_png16(depth: DepthMap, path):
    """16-bit PNG where 0 marks invalid pixels; sidecar JSON holds the scale."""
    d = depth.depth
    dmax = float(d[depth.valid].max()) if depth.valid.any() else 1.0
    scale = dmax / 65535.0 if dmax > 0 else 1.0
    q = np.zeros(d.shape, dtype=np.uint16)
    vals = np.round(d[depth.valid] / scale)
    q[depth.valid] = np.clip(vals, 1, 65535).astype(np.uint16)
    img = Image.fromarray(q)
    atomic_write_bytes(path, _png_bytes(img))
    write_json(str(path) + ".json", {"scale_m_per_unit": scale})


def load_depth_png16(path) -> DepthMap:
    with Image.open(path) as img:
        img.load()
        q = np.asarray(img).astype(np.float64)
    meta = read_json(str(path) + ".json")
    scale = float(meta["scale_m_per_unit"])
    valid = q > 0
    return DepthMap(np.where(valid, q * scale, 0.0), valid)


def save_pfm(depth: DepthMap, path):
    """Grayscale PFM, little-endian; invalid pixels stored as 0."""
    d = np.where(depth.valid, depth.depth, 0.0).astype(np.float32)
    h, w = d.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    # PFM stores rows bottom-up
    payload = header + np.ascontiguousarray(d[::-1]).tobytes()
    atomic_write_bytes(path, payload)


def load_pfm(path) -> DepthMap:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"Pf":
            raise ValidationError(f"not a grayscale PFM file: {path}")
        w, h = (int(x) for x in fh.readline().split())
        scale = float(fh.readline())
        data = fh.read(w * h * 4)
    endian = "<" if scale < 0 else ">"
    d = np.frombuffer(data, dtype=endian + "f4").reshape(h, w)[::-1].astype(np.float64)
    valid = d > 0
    return DepthMap(np.where(valid, d, 0.0), valid)


# ---------------------------------------------------------------- meshes


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def save_mesh_obj(mesh: TriangleMesh, path):
    lines = []
    if mesh.vertex_colors is not None:
        for v, c in zip(mesh.vertices, mesh.vertex_colors):
            lines.append(
                "v " + " ".join(_fmt(x) for x in v) + " " + " ".join(_fmt(x) for x in c)
            )
    else:
        for v in mesh.vertices:
            lines.append("v " + " ".join(_fmt(x) for x in v))
    for f in mesh.faces:
        lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_mesh_obj(path) -> TriangleMesh:
    verts, colors, faces = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
                if len(parts) >= 7:
                    colors.append([float(x) for x in parts[4:7]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:4]]
                faces.append(idx)
    if not verts:
        raise ValidationError(f"no vertices in OBJ file {path}")
    vc = np.array(colors) if len(colors) == len(verts) and colors else None
    return TriangleMesh(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3), vc)


def save_mesh_ply(mesh: TriangleMesh, path):
    has_color = mesh.vertex_colors is not None
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {mesh.n_vertices}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if has_color:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines += [f"element face {mesh.n_faces}", "property list uchar int vertex_indices", "end_header"]
    if has_color:
        rgb = np.clip(np.round(mesh.vertex_colors * 255), 0, 255).astype(int)
        for v, c in zip(mesh.vertices, rgb):
            lines.append(" ".join(_fmt(x) for x in v) + f" {c[0]} {c[1]} {c[2]}")
    else:
        for v in mesh.vertices:
            lines.append(" ".join(_fmt(x) for x in v))
    for f in mesh.faces:
        lines.append(f"3 {f[0]} {f[1]} {f[2]}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def _parse_ply_header(fh):
    if fh.readline().strip() != "ply":
        raise ValidationError("not a PLY file")
    fmt = fh.readline().split()
    if fmt[1] != "ascii":
        raise ValidationError("only ASCII PLY is supported")
    elements = []  # (name, count, [property names])
    while True:
        line = fh.readline()
        if not line:
            raise ValidationError("PLY header ended unexpectedly")
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "end_header":
            break
        if parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            elements[-1][2].append(parts[-1])
    return elements


def load_mesh_ply(path) -> TriangleMesh:
    with open(path, "r", encoding="utf-8") as fh:
        elements = _parse_ply_header(fh)
        verts, colors, faces = [], [], []
        for name, count, props in elements:
            for _ in range(count):
                parts = fh.readline().split()
                if name == "vertex":
                    verts.append([float(x) for x in parts[:3]])
                    if "red" in props:
                        off = props.index("red")
                        colors.append([float(parts[off + k]) / 255.0 for k in range(3)])
                elif name == "face":
                    n = int(parts[0])
                    if n != 3:
                        raise ValidationError("only triangle faces are supported")
                    faces.append([int(x) for x in parts[1:4]])
    vc = np.array(colors) if colors else None
    return TriangleMesh(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3), vc)


def save_pointcloud_ply(cloud: PointCloud, path):
    has_color = cloud.colors is not None
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if has_color:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines.append("end_header")
    if has_color:
        rgb = np.clip(np.round(cloud.colors * 255), 0, 255).astype(int)
        for p, c in zip(cloud.points, rgb):
            lines.append(" ".join(_fmt(x) for x in p) + f" {c[0]} {c[1]} {c[2]}")
    else:
        for p in cloud.points:
            lines.append(" ".join(_fmt(x) for x in p))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_pointcloud_ply(path) -> PointCloud:
    with open(path, "r", encoding="utf-8") as fh:
        elements = _parse_ply_header(fh)
        pts, colors = [], []
        for name, count, props in elements:
            for _ in range(count):
                parts = fh.readline().split()
                if name == "vertex":
                    pts.append([float(x) for x in parts[:3]])
                    if "red" in props:
                        off = props.index("red")
                        colors.append([float(parts[off + k]) / 255.0 for k in range(3)])
    return PointCloud(np.array(pts).reshape(-1, 3), np.array(colors) if colors else None)
