"""Staged pipeline orchestration with content-hash caching.

Stages run in order analyze -> amodal -> (backends) -> compose -> evaluate;
each writes its artifacts under the output root together with a stage
manifest keyed by a hash of its inputs, config section and seed, so
re-running with unchanged inputs is a no-op and re-running after an input
change recomputes exactly that stage. Timing-bearing reports live under
``reports/`` and are the only non-deterministic bytes in the tree.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import amodal as amodal_mod
from . import backend as backend_mod
from . import depthfuse, maskfuse, metrics
from .compose import (
    IcpConfig,
    RefineConfig,
    compose_scene,
    cluster_decimate,
    depth_to_mesh,
    estimate_scale,
    fill_depth_holes,
    icp_register,
    normalize_to_unit_diagonal,
    reference_points,
    refine_pose,
    visible_points,
)
from .core import io as skio
from .core.types import CameraIntrinsics, DepthMap, ImageBuffer, InstanceMask, PointCloud
from .errors import (
    ContractViolation,
    MissingArtifactError,
    SceneKitError,
    ValidationError,
)

STAGES = ("analyze", "amodal", "compose", "evaluate")


class BackendPendingError(SceneKitError, RuntimeError):
    """Required backend outputs are not ready yet."""

    def __init__(self, message, pending=()):
        super().__init__(message)
        self.pending = list(pending)


class NonConvergenceError(SceneKitError, RuntimeError):
    """Composition produced poses that did not converge."""

    def __init__(self, message, instance_ids=()):
        super().__init__(message)
        self.instance_ids = list(instance_ids)


@dataclass
class PipelineConfig:
    image: Path
    instances: Path
    semantic: Path
    depth_detail: Path
    depth_coherent: Path
    intrinsics: Path
    output_root: Path
    gt_mesh: Optional[Path] = None
    backend_root: Optional[Path] = None
    seed: int = 0
    background_classes: Tuple[str, ...] = maskfuse.DEFAULT_BACKGROUND_CLASSES
    flat_classes: Tuple[str, ...] = ("wall", "floor", "ceiling")
    fuse: depthfuse.FuseConfig = field(default_factory=depthfuse.FuseConfig)
    amodal: amodal_mod.AmodalConfig = field(default_factory=amodal_mod.AmodalConfig)
    icp: IcpConfig = field(default_factory=IcpConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    metrics_samples: int = 10_000
    metrics_tau_frac: float = 0.05
    background_jump_cut: float = 0.5
    force_compose: bool = False

    def __post_init__(self):
        for name in (
            "image",
            "instances",
            "semantic",
            "depth_detail",
            "depth_coherent",
            "intrinsics",
            "output_root",
        ):
            setattr(self, name, Path(getattr(self, name)))
        if self.gt_mesh is not None:
            self.gt_mesh = Path(self.gt_mesh)
        if self.backend_root is None:
            env = os.environ.get(backend_mod.ENV_BACKEND_ROOT)
            self.backend_root = Path(env) if env else self.output_root / "backends"
        else:
            self.backend_root = Path(self.backend_root)

    @classmethod
    def from_json_file(cls, path, overrides: Optional[dict] = None) -> "PipelineConfig":
        payload = skio.read_json(path)
        if overrides:
            payload.update({k: v for k, v in overrides.items() if v is not None})
        kwargs = dict(payload)
        for key, ctor in (
            ("fuse", depthfuse.FuseConfig),
            ("amodal", amodal_mod.AmodalConfig),
            ("icp", IcpConfig),
            ("refine", RefineConfig),
        ):
            if key in kwargs and isinstance(kwargs[key], dict):
                kwargs[key] = ctor(**kwargs[key])
        for key in ("background_classes", "flat_classes"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        known = set(cls.__dataclass_fields__)
        unknown = set(kwargs) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**kwargs)


@dataclass(frozen=True)
class StageReport:
    stage: str
    cache_hit: bool
    artifacts: Tuple[str, ...]
    elapsed_s: float
    warnings: Tuple[str, ...] = ()


def _hash_parts(parts: List[bytes]) -> str:
    digest = hashlib.sha256()
    for part in parts:
        digest.update(part)
        digest.update(b"\x00")
    return digest.hexdigest()[:16]


def _config_blob(cfg: PipelineConfig, fields: Tuple[str, ...]) -> bytes:
    view = {}
    for name in fields:
        value = getattr(cfg, name)
        if hasattr(value, "__dataclass_fields__"):
            value = {k: getattr(value, k) for k in value.__dataclass_fields__}
        elif isinstance(value, Path):
            value = str(value)
        view[name] = value
    return json.dumps(view, sort_keys=True, default=str).encode()


def _stage_key(cfg: PipelineConfig, stage: str, input_paths: List[Path], cfg_fields) -> str:
    parts = [f"seed={cfg.seed}".encode(), _config_blob(cfg, cfg_fields)]
    for path in input_paths:
        parts.append(str(path.name).encode())
        parts.append(path.read_bytes())
    return _hash_parts(parts)


def _manifest_path(cfg: PipelineConfig, stage: str) -> Path:
    return cfg.output_root / stage / "stage_manifest.json"


def _cache_valid(cfg: PipelineConfig, stage: str, key: str) -> bool:
    path = _manifest_path(cfg, stage)
    if not path.exists():
        return False
    manifest = skio.read_json(path)
    if manifest.get("key") != key:
        return False
    return all((cfg.output_root / rel).exists() for rel in manifest.get("artifacts", []))


def _write_manifest(cfg: PipelineConfig, stage: str, key: str, artifacts: List[Path]):
    rels = [str(p.relative_to(cfg.output_root)) for p in artifacts]
    skio.write_json(
        _manifest_path(cfg, stage),
        {"stage": stage, "key": key, "seed": cfg.seed, "artifacts": sorted(rels)},
    )


def _write_report(cfg: PipelineConfig, report: StageReport):
    skio.write_json(
        cfg.output_root / "reports" / f"{report.stage}.json",
        {
            "stage": report.stage,
            "cache_hit": report.cache_hit,
            "artifacts": list(report.artifacts),
            "elapsed_s": report.elapsed_s,
            "warnings": list(report.warnings),
        },
    )


def _require_stage(cfg: PipelineConfig, stage: str):
    if not _manifest_path(cfg, stage).exists():
        raise MissingArtifactError(
            f"stage '{stage}' has not produced its artifacts yet; run `scenekit {stage}` first",
            stage=stage,
        )


def _load_intrinsics(path) -> CameraIntrinsics:
    meta = skio.read_json(path)
    return CameraIntrinsics(
        meta["fx"], meta["fy"], meta["cx"], meta["cy"], meta["width"], meta["height"]
    )


def _load_inputs(cfg: PipelineConfig):
    image = skio.load_image(cfg.image)
    masks = skio.load_instance_masks(cfg.instances)
    sem_labels, class_names, ignore = skio.load_semantic_map(cfg.semantic)
    detail = skio.load_depth_png16(cfg.depth_detail)
    coherent = skio.load_depth_png16(cfg.depth_coherent)
    intrinsics = _load_intrinsics(cfg.intrinsics)
    return image, masks, sem_labels, class_names, ignore, detail, coherent, intrinsics


def _class_ids(class_names: Dict[int, str], wanted: Tuple[str, ...]) -> set:
    return {cid for cid, name in class_names.items() if name in wanted}


def run_stage(stage: str, cfg: PipelineConfig) -> StageReport:
    if stage not in STAGES:
        raise ValidationError(f"unknown stage {stage!r}; expected one of {STAGES}")
    started = time.perf_counter()
    runner = {
        "analyze": _run_analyze,
        "amodal": _run_amodal,
        "compose": _run_compose,
        "evaluate": _run_evaluate,
    }[stage]
    cache_hit, artifacts, warnings = runner(cfg)
    report = StageReport(
        stage=stage,
        cache_hit=cache_hit,
        artifacts=tuple(str(p.relative_to(cfg.output_root)) for p in artifacts),
        elapsed_s=time.perf_counter() - started,
        warnings=tuple(warnings),
    )
    _write_report(cfg, report)
    return report


# ----------------------------------------------------------------- analyze


def _run_analyze(cfg: PipelineConfig):
    inputs = [cfg.image, cfg.instances, cfg.semantic, str(cfg.semantic) + ".json",
              cfg.depth_detail, str(cfg.depth_detail) + ".json",
              cfg.depth_coherent, str(cfg.depth_coherent) + ".json", cfg.intrinsics]
    inputs = [Path(p) for p in inputs]
    for p in inputs:
        if not p.exists():
            raise ValidationError(f"input file missing: {p}")
    key = _stage_key(cfg, "analyze", inputs, ("background_classes", "flat_classes", "fuse"))
    out = cfg.output_root / "analyze"
    if _cache_valid(cfg, "analyze", key):
        manifest = skio.read_json(_manifest_path(cfg, "analyze"))
        return True, [cfg.output_root / rel for rel in manifest["artifacts"]], []

    image, masks, sem_labels, class_names, ignore, detail, coherent, intrinsics = _load_inputs(cfg)
    semantic = maskfuse.SemanticMap(sem_labels, ignore)
    fused_instances = maskfuse.fuse_semantics(masks, semantic)
    bg_ids = _class_ids(class_names, cfg.background_classes)
    foreground, background = maskfuse.classify_background(fused_instances, bg_ids)

    flat_ids = _class_ids(class_names, cfg.flat_classes)
    weights = depthfuse.structure_weights(
        fused_instances, sem_labels.shape, flat_ids, cfg.fuse.w_flat, cfg.fuse.w_detail
    )
    fused_depth, alignment = depthfuse.fuse(detail, coherent, weights, cfg.fuse)

    out.mkdir(parents=True, exist_ok=True)
    artifacts = []
    skio.save_depth_png16(fused_depth, out / "fused_depth.png")
    artifacts += [out / "fused_depth.png", out / "fused_depth.png.json"]
    instances_payload = [
        {
            "id": int(si.mask.id),
            "label": int(si.label),
            "label_name": class_names.get(si.label, f"class-{si.label}"),
            "confidence": si.label_confidence,
            "background": si.label in bg_ids,
            "area": si.mask.area,
        }
        for si in fused_instances
    ]
    skio.write_json(out / "instances.json", {"instances": instances_payload})
    artifacts.append(out / "instances.json")
    skio.write_json(
        out / "alignment.json",
        {
            "scale": alignment.scale,
            "shift": alignment.shift,
            "iterations": alignment.iterations_run,
            "final_loss": alignment.final_loss,
        },
    )
    artifacts.append(out / "alignment.json")
    _write_manifest(cfg, "analyze", key, artifacts)
    warnings = [] if foreground else ["no foreground instances detected"]
    return False, artifacts, warnings


# ------------------------------------------------------------------ amodal


def _foreground_records(cfg: PipelineConfig):
    analyze = skio.read_json(cfg.output_root / "analyze" / "instances.json")["instances"]
    return [r for r in analyze if not r["background"]], analyze


def _run_amodal(cfg: PipelineConfig):
    _require_stage(cfg, "analyze")
    inputs = [cfg.image, cfg.instances,
              cfg.output_root / "analyze" / "fused_depth.png",
              cfg.output_root / "analyze" / "instances.json"]
    key = _stage_key(cfg, "amodal", inputs, ("amodal",))
    out = cfg.output_root / "amodal"
    if _cache_valid(cfg, "amodal", key):
        manifest = skio.read_json(_manifest_path(cfg, "amodal"))
        return True, [cfg.output_root / rel for rel in manifest["artifacts"]], []

    image = skio.load_image(cfg.image)
    masks = {m.id: m for m in skio.load_instance_masks(cfg.instances)}
    fused_depth = skio.load_depth_png16(cfg.output_root / "analyze" / "fused_depth.png")
    fg_records, all_records = _foreground_records(cfg)
    class_names = {r["label"]: r["label_name"] for r in all_records}
    acfg = amodal_mod.AmodalConfig(
        adjacency_radius=cfg.amodal.adjacency_radius,
        depth_percentile=cfg.amodal.depth_percentile,
        margin_frac=cfg.amodal.margin_frac,
        noise_seed=cfg.seed,
        prompt_template=cfg.amodal.prompt_template,
        class_names=class_names,
    )

    registry = backend_mod.JobRegistry(cfg.backend_root)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = []
    jobs = {}
    warnings = []
    fg_ids = [r["id"] for r in fg_records]
    from .core.types import SemanticInstance

    for record in fg_records:
        inst_id = record["id"]
        inst = SemanticInstance(masks[inst_id], record["label"], record["confidence"])
        others = [masks[j] for j in fg_ids if j != inst_id]
        request = amodal_mod.make_request(inst, others, fused_depth, image, acfg)
        job_dir = cfg.backend_root / "amodal_inpaint" / f"inst_{inst_id:04d}"
        amodal_mod.write_request(request, job_dir / "input")
        if request.skip_inpainting:
            jobs[str(inst_id)] = {"job_id": None, "skip": True, "canvas_offset": list(request.canvas_offset)}
            continue
        job = backend_mod.BackendJob(
            kind="amodal_inpaint",
            input_dir=job_dir / "input",
            output_dir=job_dir / "output",
            manifest={"instance_id": inst_id},
        )
        jobs[str(inst_id)] = {
            "job_id": registry.submit(job),
            "skip": False,
            "canvas_offset": list(request.canvas_offset),
        }

    # defurnish request: the input image with every foreground mask as alpha
    union = np.zeros(image.data.shape[:2], dtype=bool)
    for inst_id in fg_ids:
        union |= masks[inst_id].bitmap
    rgba = backend_mod.rgba_pack(image, InstanceMask(0, union))
    defurnish_dir = cfg.backend_root / "defurnish" / "scene"
    (defurnish_dir / "input").mkdir(parents=True, exist_ok=True)
    skio.save_image(rgba, defurnish_dir / "input" / "rgba.png")
    defurnish_job = backend_mod.BackendJob(
        kind="defurnish",
        input_dir=defurnish_dir / "input",
        output_dir=defurnish_dir / "output",
        manifest={"scene": "main"},
    )
    defurnish_id = registry.submit(defurnish_job)

    payload = {"instances": jobs, "defurnish_job_id": defurnish_id}
    skio.write_json(out / "jobs.json", payload)
    artifacts.append(out / "jobs.json")
    if not fg_ids:
        warnings.append("no foreground instances; nothing to complete")
    _write_manifest(cfg, "amodal", key, artifacts)
    return False, artifacts, warnings


# ----------------------------------------------------------------- compose


def _instance_visible_depth(fused: DepthMap, mask: InstanceMask) -> DepthMap:
    keep = fused.valid & mask.bitmap
    return DepthMap(np.where(keep, fused.depth, 0.0), keep)


def _place_instance(mesh, mask, fused_depth, intrinsics, cfg):
    """Scale estimate -> ICP -> silhouette refinement for one instance."""
    norm_mesh, _ = normalize_to_unit_diagonal(mesh)
    reference = reference_points(fused_depth, mask, intrinsics)
    t0 = reference.points.mean(axis=0)
    s0 = reference.diagonal()
    from .core.types import RigidScaleTransform

    pose = RigidScaleTransform(s0, np.eye(3), t0)
    vis = visible_points(norm_mesh, pose, intrinsics)
    if len(vis) >= cfg.icp.min_points:
        try:
            pose = RigidScaleTransform(
                s0 * estimate_scale(vis, reference), np.eye(3), t0
            )
        except SceneKitError:
            pass
    vis = visible_points(norm_mesh, pose, intrinsics)
    icp_rmse = None
    if len(vis) >= cfg.icp.min_points:
        result = icp_register(vis, reference, cfg.icp)
        pose = result.transform.compose(pose)
        icp_rmse = result.rmse
    # the outline is what matters for refinement; a decimated proxy renders
    # much faster and the recovered pose applies to the full mesh
    proxy = cluster_decimate(norm_mesh)
    state = refine_pose(proxy, pose, mask, intrinsics, cfg.refine)
    return norm_mesh, state, icp_rmse


def _run_compose(cfg: PipelineConfig):
    _require_stage(cfg, "analyze")
    _require_stage(cfg, "amodal")
    jobs_payload = skio.read_json(cfg.output_root / "amodal" / "jobs.json")
    registry = backend_mod.JobRegistry(cfg.backend_root)

    # amodal completions and the defurnished room must exist before composing
    pending = []
    for inst_id, job in jobs_payload["instances"].items():
        if job["skip"]:
            continue
        status = registry.poll(job["job_id"])
        if status != "done":
            pending.append(f"amodal_inpaint:{job['job_id']}:{status}")
    d_status = registry.poll(jobs_payload["defurnish_job_id"])
    if d_status != "done":
        pending.append(f"defurnish:{jobs_payload['defurnish_job_id']}:{d_status}")
    if pending:
        raise BackendPendingError(
            "backend outputs missing; run `scenekit mock-backends` (or your backends), "
            "then rerun compose: " + ", ".join(pending),
            pending=pending,
        )

    image = skio.load_image(cfg.image)
    masks = {m.id: m for m in skio.load_instance_masks(cfg.instances)}
    fused_depth = skio.load_depth_png16(cfg.output_root / "analyze" / "fused_depth.png")
    intrinsics = _load_intrinsics(cfg.intrinsics)
    fg_records, _ = _foreground_records(cfg)

    # second hop: completed views feed the image-to-3D backend
    i23d_jobs = {}
    for record in fg_records:
        inst_id = record["id"]
        job = jobs_payload["instances"][str(inst_id)]
        job_dir = cfg.backend_root / "image_to_3d" / f"inst_{inst_id:04d}"
        input_dir = job_dir / "input"
        input_dir.mkdir(parents=True, exist_ok=True)
        if job["skip"]:
            view = amodal_mod.make_request(  # unoccluded: the visible view is complete
                _semantic_instance(record, masks), [], fused_depth, image,
                amodal_mod.AmodalConfig(noise_seed=cfg.seed),
            ).noised_image
        else:
            completed_path = (
                cfg.backend_root / "amodal_inpaint" / f"inst_{inst_id:04d}" / "output" / "completed.png"
            )
            completed = skio.load_image(completed_path)
            ox, oy = job["canvas_offset"]
            view = ImageBuffer(
                completed.data[oy : oy + image.height, ox : ox + image.width]
            )
        skio.save_image(view, input_dir / "view.png")
        skio.save_depth_png16(
            _instance_visible_depth(fused_depth, masks[inst_id]), input_dir / "depth.png"
        )
        meta = skio.read_json(cfg.intrinsics)
        skio.write_json(input_dir / "intrinsics.json", meta)
        i23d = backend_mod.BackendJob(
            kind="image_to_3d",
            input_dir=input_dir,
            output_dir=job_dir / "output",
            manifest={"instance_id": inst_id},
        )
        i23d_jobs[inst_id] = registry.submit(i23d)

    pending = [
        f"image_to_3d:{jid}:{registry.poll(jid)}"
        for jid in i23d_jobs.values()
        if registry.poll(jid) != "done"
    ]
    if pending:
        raise BackendPendingError(
            "image-to-3D outputs missing; run `scenekit mock-backends`, then rerun compose: "
            + ", ".join(pending),
            pending=pending,
        )

    inputs = [cfg.image, cfg.instances, cfg.intrinsics,
              cfg.output_root / "analyze" / "fused_depth.png",
              cfg.output_root / "amodal" / "jobs.json"]
    inputs += [
        cfg.backend_root / "image_to_3d" / f"inst_{r['id']:04d}" / "output" / "mesh.obj"
        for r in fg_records
    ]
    inputs.append(cfg.backend_root / "defurnish" / "scene" / "output" / "empty_room.png")
    key = _stage_key(cfg, "compose", inputs, ("icp", "refine", "background_jump_cut", "force_compose"))
    out = cfg.output_root / "compose"
    if _cache_valid(cfg, "compose", key):
        manifest = skio.read_json(_manifest_path(cfg, "compose"))
        return True, [cfg.output_root / rel for rel in manifest["artifacts"]], []

    empty_room = skio.load_image(
        cfg.backend_root / "defurnish" / "scene" / "output" / "empty_room.png"
    )
    fg_union = np.zeros(fused_depth.depth.shape, dtype=bool)
    for record in fg_records:
        fg_union |= masks[record["id"]].bitmap
    # the defurnished room covers what the furniture hid: complete the
    # background depth across those regions before lifting it
    bg_depth = fill_depth_holes(
        DepthMap(
            np.where(fused_depth.valid & ~fg_union, fused_depth.depth, 0.0),
            fused_depth.valid & ~fg_union,
        ),
        fg_union,
    )
    background = depth_to_mesh(
        bg_depth,
        intrinsics,
        colors=empty_room.data[:, :, :3],
        max_rel_jump=cfg.background_jump_cut,
    )

    placed = []
    manifest_rows = []
    warnings = []
    for record in fg_records:
        inst_id = record["id"]
        mesh_path = cfg.backend_root / "image_to_3d" / f"inst_{inst_id:04d}" / "output" / "mesh.obj"
        mesh = skio.load_mesh_obj(mesh_path)
        norm_mesh, state, icp_rmse = _place_instance(
            mesh, masks[inst_id], fused_depth, intrinsics, cfg
        )
        placed.append((inst_id, norm_mesh, state, icp_rmse, mesh_path))
        if not state.converged:
            warnings.append(f"instance {inst_id}: pose did not converge")

    out.mkdir(parents=True, exist_ok=True)
    # always materialize the scene; non-convergence is reported via exit code
    scene = compose_scene(background, [(m, s) for _, m, s, _, _ in placed], force=True)
    artifacts = []
    skio.save_mesh_ply(scene, out / "scene.ply")
    artifacts.append(out / "scene.ply")
    for inst_id, _, state, icp_rmse, mesh_path in placed:
        manifest_rows.append(
            {
                "instance_id": inst_id,
                "mesh_path": str(mesh_path),
                "pose": {
                    "s": state.transform.scale,
                    "R": [float(x) for x in state.transform.rotation.ravel()],
                    "t": [float(x) for x in state.transform.translation],
                },
                "converged": state.converged,
                "final_loss": state.final_loss,
                "icp_rmse": icp_rmse,
            }
        )
    skio.write_json(out / "manifest.json", {"instances": manifest_rows})
    artifacts.append(out / "manifest.json")
    _write_manifest(cfg, "compose", key, artifacts)
    bad = [row["instance_id"] for row in manifest_rows if not row["converged"]]
    if bad and not cfg.force_compose:
        raise NonConvergenceError(
            f"poses did not converge for instances {bad}", instance_ids=bad
        )
    return False, artifacts, warnings


def _semantic_instance(record, masks):
    from .core.types import SemanticInstance

    return SemanticInstance(masks[record["id"]], record["label"], record["confidence"])


# ---------------------------------------------------------------- evaluate


def _run_evaluate(cfg: PipelineConfig):
    _require_stage(cfg, "compose")
    if cfg.gt_mesh is None:
        raise ValidationError("evaluate needs gt_mesh in the config")
    inputs = [cfg.output_root / "compose" / "scene.ply", cfg.gt_mesh]
    key = _stage_key(cfg, "evaluate", inputs, ("metrics_samples", "metrics_tau_frac"))
    out = cfg.output_root / "evaluate"
    if _cache_valid(cfg, "evaluate", key):
        manifest = skio.read_json(_manifest_path(cfg, "evaluate"))
        return True, [cfg.output_root / rel for rel in manifest["artifacts"]], []

    pred = skio.load_mesh_ply(cfg.output_root / "compose" / "scene.ply")
    gt_path = Path(cfg.gt_mesh)
    gt = skio.load_mesh_ply(gt_path) if gt_path.suffix == ".ply" else skio.load_mesh_obj(gt_path)
    report = metrics.evaluate_meshes(
        pred,
        gt,
        n=cfg.metrics_samples,
        seed=cfg.seed,
        tau=metrics.default_tau(gt, cfg.metrics_tau_frac),
    )
    out.mkdir(parents=True, exist_ok=True)
    skio.atomic_write_text(out / "report.json", report.to_json() + "\n")
    skio.atomic_write_text(
        out / "report.csv",
        metrics.EvalReport.csv_header() + "\n" + report.to_csv_row() + "\n",
    )
    artifacts = [out / "report.json", out / "report.csv"]
    _write_manifest(cfg, "evaluate", key, artifacts)
    return False, artifacts, []


# ------------------------------------------------------------------ report


def gather_report(output_root) -> dict:
    """Collect stage manifests, pose table and metrics into one payload."""
    root = Path(output_root)
    payload = {"stages": {}, "instances": [], "metrics": None, "warnings": []}
    for stage in STAGES:
        manifest = root / stage / "stage_manifest.json"
        if manifest.exists():
            payload["stages"][stage] = skio.read_json(manifest)
    compose_manifest = root / "compose" / "manifest.json"
    if compose_manifest.exists():
        rows = skio.read_json(compose_manifest)["instances"]
        payload["instances"] = rows
        payload["warnings"] += [
            f"instance {r['instance_id']} pose did not converge"
            for r in rows
            if not r["converged"]
        ]
    eval_report = root / "evaluate" / "report.json"
    if eval_report.exists():
        payload["metrics"] = skio.read_json(eval_report)
    return payload


def format_report(payload: dict) -> str:
    if not payload["stages"]:
        return "no stages complete"
    lines = ["stages complete: " + ", ".join(sorted(payload["stages"]))]
    if payload["instances"]:
        lines.append("")
        lines.append(f"{'instance':>8}  {'scale':>8}  {'loss':>10}  converged")
        for row in payload["instances"]:
            lines.append(
                f"{row['instance_id']:>8}  {row['pose']['s']:>8.4f}  "
                f"{row['final_loss']:>10.3e}  {str(row['converged']).lower()}"
            )
    if payload["metrics"]:
        m = payload["metrics"]
        lines.append("")
        lines.append(
            f"chamfer {m['chamfer']:.5f} ({m['chamfer_convention']}), "
            f"f-score {m['fscore']:.4f} (tau {m['tau']:.4f}, n {m['n_samples']})"
        )
    for warning in payload["warnings"]:
        lines.append(f"warning: {warning}")
    return "\n".join(lines)
