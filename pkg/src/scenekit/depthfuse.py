"""Hybrid depth fusion.

Aligns a detail-rich, affine-invariant depth map to a metrically coherent
one: an affine fit (scale, shift) handles the global geometry, and an
optional smooth per-pixel residual field absorbs what the affine model
cannot, without flattening depth edges in detailed regions. The data term
is a weighted mean squared difference that up-weights flat structures
(walls, floors, ceilings) where the coherent depth is trustworthy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from typing import Sequence, Set, Tuple

import numpy as np

from .core.types import DepthMap, SemanticInstance
from .errors import ContractViolation, DegenerateInput, OptimizationFailure


@dataclass(frozen=True)
class AffineDepthAlignment:
    """Result of fitting aligned = scale * detail + shift."""

    scale: float
    shift: float
    iterations_run: int = 0
    final_loss: float = float("nan")

    def __post_init__(self):
        if not self.scale > 0:
            raise ContractViolation("scale must be > 0")


@dataclass(frozen=True)
class WeightMap:
    """Non-negative per-pixel loss weights, not all zero."""

    w: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.w, dtype=np.float64))
        if arr.ndim != 2:
            raise ContractViolation("weights must be 2-D")
        if not np.isfinite(arr).all() or (arr < 0).any():
            raise ContractViolation("weights must be finite and >= 0")
        if not (arr > 0).any():
            raise ContractViolation("weights must not be all zero")
        arr.flags.writeable = False
        object.__setattr__(self, "w", arr)


@dataclass(frozen=True)
class FuseConfig:
    w_flat: float = 1.0
    w_detail: float = 0.2
    beta: float = 0.1
    detail_tol: float = 0.05
    max_iters_stage1: int = 500
    max_iters_stage2: int = 200
    patience: int = 10
    run_stage2: bool = False
    # pixels whose weight is <= this count as "high detail" for edge preservation
    detail_weight_max: float = 0.5
    tol: float = 1e-14

    def to_json(self) -> str:
        return json.dumps({f.name: getattr(self, f.name) for f in fields(self)}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FuseConfig":
        payload = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ContractViolation(f"unknown FuseConfig keys: {sorted(unknown)}")
        return cls(**payload)


def init_affine(coherent: DepthMap) -> AffineDepthAlignment:
    """Initial shift = min valid depth, scale = max/min ratio of the coherent map."""
    vals = coherent.depth[coherent.valid]
    if vals.size < 2:
        raise DegenerateInput("need at least 2 valid depth pixels")
    dmin = float(vals.min())
    dmax = float(vals.max())
    if dmax <= dmin:
        raise DegenerateInput("constant depth map: scale/shift are undefined")
    return AffineDepthAlignment(scale=dmax / dmin, shift=dmin)


def structure_weights(
    semantic: Sequence[SemanticInstance],
    shape: Tuple[int, int],
    flat_classes: Set[int],
    w_flat: float = 1.0,
    w_detail: float = 0.2,
) -> WeightMap:
    """Weight map giving w_flat to pixels covered by flat-class instances.

    Everything not covered by a flat-class instance (including uncovered
    pixels) gets w_detail.
    """
    if not w_flat > w_detail or w_detail < 0:
        raise ContractViolation("need w_flat > w_detail >= 0")
    w = np.full(shape, w_detail, dtype=np.float64)
    for inst in semantic:
        if inst.mask.bitmap.shape != tuple(shape):
            raise ContractViolation("instance mask shape does not match weight map")
        if inst.label in flat_classes:
            w[inst.mask.bitmap] = w_flat
    return WeightMap(w)


def _joint_valid(aligned: DepthMap, coherent: DepthMap, w: WeightMap) -> np.ndarray:
    if aligned.depth.shape != coherent.depth.shape or aligned.depth.shape != w.w.shape:
        raise ContractViolation("aligned, coherent and weights must share dimensions")
    return aligned.valid & coherent.valid


def alignment_loss(aligned: DepthMap, coherent: DepthMap, w: WeightMap) -> float:
    """(1/N) * sum over jointly-valid pixels of w_i * (aligned_i - coherent_i)^2."""
    joint = _joint_valid(aligned, coherent, w)
    n = int(joint.sum())
    if n == 0:
        raise DegenerateInput("no jointly-valid pixels")
    r = aligned.depth[joint] - coherent.depth[joint]
    return float(np.sum(w.w[joint] * r * r) / n)


def alignment_gradients(
    detail: DepthMap,
    coherent: DepthMap,
    w: WeightMap,
    scale: float,
    shift: float,
) -> Tuple[float, float]:
    """Analytic (d loss / d scale, d loss / d shift) of the stage-1 objective."""
    joint = _joint_valid(detail, coherent, w)
    n = int(joint.sum())
    if n == 0:
        raise DegenerateInput("no jointly-valid pixels")
    d = detail.depth[joint]
    r = scale * d + shift - coherent.depth[joint]
    wr = w.w[joint] * r
    return float(2.0 * np.sum(wr * d) / n), float(2.0 * np.sum(wr) / n)


def _smoothness(r: np.ndarray) -> float:
    gx = np.diff(r, axis=1)
    gy = np.diff(r, axis=0)
    return float((np.sum(gx * gx) + np.sum(gy * gy)) / r.size)


def _smoothness_grad(r: np.ndarray) -> np.ndarray:
    # gradient of mean squared forward differences, Neumann boundaries
    g = np.zeros_like(r)
    gx = np.diff(r, axis=1)
    gy = np.diff(r, axis=0)
    g[:, :-1] -= 2.0 * gx
    g[:, 1:] += 2.0 * gx
    g[:-1, :] -= 2.0 * gy
    g[1:, :] += 2.0 * gy
    return g / r.size


def _limit_detail_gradients(r: np.ndarray, detail_region: np.ndarray, tol: float) -> np.ndarray:
    """Diffuse the residual locally until its finite differences respect tol
    inside the detail region, so fused edges stay within tol of the scaled
    detail edges there."""
    out = r.copy()
    kernel_passes = 0
    while kernel_passes < 50:
        gx = np.abs(np.diff(out, axis=1))
        gy = np.abs(np.diff(out, axis=0))
        vx = np.zeros(out.shape, dtype=bool)
        vy = np.zeros(out.shape, dtype=bool)
        bad_x = gx > tol
        bad_y = gy > tol
        vx[:, :-1] |= bad_x
        vx[:, 1:] |= bad_x
        vy[:-1, :] |= bad_y
        vy[1:, :] |= bad_y
        violating = (vx | vy) & detail_region
        if not violating.any():
            return out
        padded = np.pad(out, 1, mode="edge")
        smoothed = (
            padded[1:-1, 1:-1]
            + padded[:-2, 1:-1]
            + padded[2:, 1:-1]
            + padded[1:-1, :-2]
            + padded[1:-1, 2:]
        ) / 5.0
        # widen by one pixel so both endpoints of each violating difference move
        grow = violating.copy()
        grow[:-1, :] |= violating[1:, :]
        grow[1:, :] |= violating[:-1, :]
        grow[:, :-1] |= violating[:, 1:]
        grow[:, 1:] |= violating[:, :-1]
        out = np.where(grow, smoothed, out)
        kernel_passes += 1
    return out


def _descend(x0, loss_fn, grad_fn, max_iters, patience, tol, project=None):
    """Preconditioned gradient descent with backtracking (Armijo) line search.

    Returns (x, accepted_losses, iterations). ``grad_fn`` yields a step
    direction already scaled to parameter units; ``project`` maps a candidate
    onto the feasible set before evaluation.
    """
    x = x0
    current = loss_fn(x)
    history = [current]
    alpha = 1.0
    bad_steps = 0
    iters = 0
    for iters in range(1, max_iters + 1):
        step = grad_fn(x)
        accepted = False
        a = alpha
        for _ in range(40):
            cand = x - a * step
            if project is not None:
                cand = project(cand)
            cand_loss = loss_fn(cand)
            if np.isfinite(cand_loss) and cand_loss < current:
                x, current = cand, cand_loss
                history.append(current)
                alpha = min(a * 2.0, 1.0)
                accepted = True
                break
            a *= 0.5
        if not accepted:
            bad_steps += 1
            if bad_steps > patience:
                break
            alpha = max(alpha * 0.5, 1e-18)
            continue
        bad_steps = 0
        if len(history) >= 2 and history[-2] - history[-1] <= tol * max(history[-2], 1e-30):
            break
    if not np.isfinite(current):
        raise OptimizationFailure("loss became non-finite", best=(x, history))
    return x, history, iters


def fuse(
    detail: DepthMap,
    coherent: DepthMap,
    w: WeightMap,
    cfg: FuseConfig = FuseConfig(),
) -> Tuple[DepthMap, AffineDepthAlignment]:
    """Fuse a detail depth with a coherent depth.

    Stage 1 fits (scale, shift) by gradient descent on the weighted MSE,
    initialized from the coherent map's min/max statistics; the scale stays
    positive through a log parameterization. Stage 2 (optional) adds a
    smooth per-pixel residual field whose local gradients are capped at
    cfg.detail_tol inside high-detail regions.

    Returns the fused depth, defined as scale*detail+shift+residual wherever
    the detail map is valid, and the fitted alignment.
    """
    joint = _joint_valid(detail, coherent, w)
    n = int(joint.sum())
    if n == 0:
        raise DegenerateInput("no jointly-valid pixels")

    init = init_affine(coherent)
    d = detail.depth[joint]
    c = coherent.depth[joint]
    ww = w.w[joint]
    wsum = float(ww.sum())
    if wsum <= 0:
        raise DegenerateInput("weights vanish on every jointly-valid pixel")
    d_mean = float(np.sum(ww * d) / wsum)
    d_var = float(np.sum(ww * (d - d_mean) ** 2) / wsum)

    # Parameterize as (theta = log scale, nu = shift + scale * weighted mean
    # of detail). Centering makes the quadratic separable, and the inverse
    # diagonal Hessian scaling keeps the 500-iteration budget sufficient for
    # scales up to ~20; plain descent on (log scale, shift) conditions badly.
    def unpack(p):
        lam = float(np.exp(p[0]))
        return lam, float(p[1] - lam * d_mean)

    def loss_p(p):
        lam, mu = unpack(p)
        r = lam * d + mu - c
        return float(np.sum(ww * r * r) / n)

    def grad_p(p):
        lam, mu = unpack(p)
        r = lam * d + mu - c
        g_theta = 2.0 * lam * float(np.sum(ww * r * (d - d_mean))) / n
        g_nu = 2.0 * float(np.sum(ww * r)) / n
        h_theta = 2.0 * lam * lam * wsum * d_var / n + 1e-30
        h_nu = 2.0 * wsum / n
        return np.array([g_theta / h_theta, g_nu / h_nu])

    p0 = np.array([np.log(init.scale), init.shift + init.scale * d_mean])
    p, history1, it1 = _descend(
        p0, loss_p, grad_p, cfg.max_iters_stage1, cfg.patience, cfg.tol
    )
    lam, mu = unpack(p)
    stage1_loss = history1[-1]

    residual = np.zeros_like(detail.depth)
    iters_total = it1
    final_loss = stage1_loss
    if cfg.run_stage2:
        detail_region = w.w <= cfg.detail_weight_max
        data_scale = 2.0 * np.where(joint, w.w, 0.0) / n
        base = lam * detail.depth + mu

        def loss_r(r):
            rr = np.where(joint, base + r - coherent.depth, 0.0)
            data = float(np.sum(w.w[joint] * rr[joint] ** 2) / n)
            return data + cfg.beta * _smoothness(r)

        def grad_r(r):
            rr = np.where(joint, base + r - coherent.depth, 0.0)
            g = data_scale * rr + cfg.beta * _smoothness_grad(r)
            # scale steps to data-term curvature so early steps are useful
            return g / (data_scale.max() + 1e-30)

        def project_r(r):
            return _limit_detail_gradients(r, detail_region, cfg.detail_tol)

        residual, history2, it2 = _descend(
            residual,
            loss_r,
            grad_r,
            cfg.max_iters_stage2,
            cfg.patience,
            cfg.tol,
            project=project_r,
        )
        iters_total += it2
        final_loss = history2[-1]

    fused_depth = lam * detail.depth + mu + residual
    fused_valid = detail.valid & (fused_depth > 0) & np.isfinite(fused_depth)
    alignment = AffineDepthAlignment(
        scale=lam, shift=mu, iterations_run=iters_total, final_loss=final_loss
    )
    return DepthMap(np.where(fused_valid, fused_depth, 0.0), fused_valid), alignment
