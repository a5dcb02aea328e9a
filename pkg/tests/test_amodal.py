"""Inpainting-mask refinement: neighbour init, depth ordering, boundary
extension, and the composed request.

`reference_refined_mask` is the independent oracle: a literal, per-pixel
implementation of the three refinement steps using all-pairs distances and
plain loops, shared with the acceptance suite.
"""

import math

import numpy as np
import pytest

from scenekit.amodal import (
    AmodalConfig,
    boundary_extend,
    depth_filter,
    init_mask,
    make_request,
    read_request_meta,
    write_request,
)
from scenekit.core import io as skio
from scenekit.core.types import DepthMap, ImageBuffer, InstanceMask, SemanticInstance
from scenekit.errors import ContractViolation, DegenerateInput


def _mask(shape, coords, mid=1):
    bm = np.zeros(shape, dtype=bool)
    for r, c in coords:
        bm[r, c] = True
    return InstanceMask(mid, bm)


def _rect(shape, r0, r1, c0, c1, mid=1):
    bm = np.zeros(shape, dtype=bool)
    bm[r0:r1, c0:c1] = True
    return InstanceMask(mid, bm)


# ------------------------------------------------------------------ oracle


def reference_neighbours(target, others, radius):
    """Brute force: instance j is adjacent iff some pixel pair is within radius."""
    tpix = np.argwhere(target.bitmap)
    out = []
    for other in others:
        if other.id == target.id:
            continue
        opix = np.argwhere(other.bitmap)
        hit = False
        for tr, tc in tpix:
            for orow, ocol in opix:
                if (tr - orow) ** 2 + (tc - ocol) ** 2 <= radius * radius:
                    hit = True
                    break
            if hit:
                break
        if hit:
            out.append(other)
    return out


def reference_refined_mask(target, others, depth, radius, margin_frac):
    """Literal per-pixel refinement: neighbour union, depth exclusion,
    border extension. Returns (mask bitmap, (offset_x, offset_y))."""
    h, w = target.bitmap.shape
    m = np.zeros((h, w), dtype=bool)
    for other in reference_neighbours(target, others, radius):
        m |= other.bitmap
    m &= ~target.bitmap

    d_max = depth.depth[target.bitmap & depth.valid].max()
    for r in range(h):
        for c in range(w):
            if m[r, c] and depth.valid[r, c] and depth.depth[r, c] > d_max:
                m[r, c] = False

    if target.bbox is None or margin_frac == 0:
        return m, (0, 0)
    x0, y0, x1, y1 = target.bbox
    gx = math.ceil(margin_frac * (x1 - x0))
    gy = math.ceil(margin_frac * (y1 - y0))
    left = gx if target.bitmap[:, 0].any() else 0
    right = gx if target.bitmap[:, -1].any() else 0
    top = gy if target.bitmap[0, :].any() else 0
    bottom = gy if target.bitmap[-1, :].any() else 0
    if not (left or right or top or bottom):
        return m, (0, 0)
    big = np.zeros((h + top + bottom, w + left + right), dtype=bool)
    big[top : top + h, left : left + w] = m
    for r in range(h):
        if left and target.bitmap[r, 0]:
            big[r + top, :left] = True
        if right and target.bitmap[r, -1]:
            big[r + top, left + w :] = True
    for c in range(w):
        if top and target.bitmap[0, c]:
            big[:top, c + left] = True
        if bottom and target.bitmap[-1, c]:
            big[top + h :, c + left] = True
    return big, (left, top)


# ---------------------------------------------------------------- init_mask


class TestInitMask:
    def test_no_neighbour_within_radius(self):
        target = _rect((12, 12), 0, 2, 0, 2, mid=1)
        far = _rect((12, 12), 10, 12, 10, 12, mid=2)
        assert init_mask(target, [far], adjacency_radius=2).is_empty()

    def test_overlapping_mask_included_fully(self):
        # overlapping 20-px neighbour: full set minus target pixels
        target = _rect((10, 10), 0, 2, 0, 2, mid=1)
        other = _rect((10, 10), 1, 6, 1, 5, mid=2)  # 20 px, overlaps target
        out = init_mask(target, [other], adjacency_radius=2)
        expect = other.bitmap & ~target.bitmap
        np.testing.assert_array_equal(out.bitmap, expect)

    def test_near_contributes_far_does_not(self):
        target = _rect((16, 16), 7, 9, 7, 9, mid=1)
        near = _rect((16, 16), 7, 9, 10, 12, mid=2)  # 1 px gap
        far = _rect((16, 16), 0, 1, 0, 1, mid=3)
        out = init_mask(target, [near, far], adjacency_radius=3)
        np.testing.assert_array_equal(out.bitmap, near.bitmap)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(21)
        for _ in range(30):
            shape = (10, 10)
            target = InstanceMask(1, rng.random(shape) > 0.8)
            if target.is_empty():
                continue
            others = [InstanceMask(j + 2, rng.random(shape) > 0.85) for j in range(3)]
            radius = float(rng.integers(1, 5))
            got = init_mask(target, others, radius)
            want = np.zeros(shape, dtype=bool)
            for other in reference_neighbours(target, others, radius):
                want |= other.bitmap
            want &= ~target.bitmap
            np.testing.assert_array_equal(got.bitmap, want)

    def test_excludes_target_pixels(self):
        target = _rect((8, 8), 2, 5, 2, 5)
        other = _rect((8, 8), 3, 7, 3, 7, mid=2)
        out = init_mask(target, [other], adjacency_radius=1)
        assert not (out.bitmap & target.bitmap).any()


# -------------------------------------------------------------- depth_filter


class TestDepthFilter:
    def _fixture(self):
        shape = (3, 3)
        target = _mask(shape, [(0, 0), (0, 1), (0, 2)])
        depth = DepthMap.from_array(
            np.array([[1.0, 2.0, 3.0], [2.5, 3.5, 1.0], [1.0, 1.0, 1.0]])
        )
        return target, depth

    def test_keeps_at_or_below_max(self):
        target, depth = self._fixture()
        cand = _mask((3, 3), [(1, 0)], mid=2)  # depth 2.5 <= 3
        out = depth_filter(cand, depth, target, percentile=1.0)
        assert out.bitmap[1, 0]

    def test_excludes_beyond_max(self):
        target, depth = self._fixture()
        cand = _mask((3, 3), [(1, 1)], mid=2)  # depth 3.5 > 3
        out = depth_filter(cand, depth, target, percentile=1.0)
        assert out.is_empty()

    def test_empty_candidate(self):
        target, depth = self._fixture()
        out = depth_filter(InstanceMask(2, np.zeros((3, 3), bool)), depth, target, 1.0)
        assert out.is_empty()

    def test_pure_filter_subset(self):
        rng = np.random.default_rng(22)
        for _ in range(20):
            target = InstanceMask(1, rng.random((6, 6)) > 0.6)
            if target.is_empty():
                continue
            cand = InstanceMask(2, rng.random((6, 6)) > 0.5)
            depth = DepthMap.from_array(rng.uniform(1, 5, (6, 6)))
            out = depth_filter(cand, depth, target, 1.0)
            assert not (out.bitmap & ~cand.bitmap).any()

    def test_exhaustive_small_grid_matches_rule(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            target = InstanceMask(1, rng.random((5, 5)) > 0.6)
            if target.is_empty():
                continue
            cand = InstanceMask(2, rng.random((5, 5)) > 0.4)
            d = rng.uniform(1, 4, (5, 5))
            depth = DepthMap.from_array(d)
            out = depth_filter(cand, depth, target, 1.0)
            dmax = d[target.bitmap].max()
            for r in range(5):
                for c in range(5):
                    want = cand.bitmap[r, c] and d[r, c] <= dmax
                    assert out.bitmap[r, c] == want

    def test_percentile_knob(self):
        target = _mask((1, 5), [(0, 0), (0, 1), (0, 2), (0, 3)])
        depth = DepthMap.from_array(np.array([[1.0, 2.0, 3.0, 4.0, 3.5]]))
        cand = _mask((1, 5), [(0, 4)], mid=2)  # depth 3.5
        assert not depth_filter(cand, depth, target, percentile=0.5).bitmap[0, 4]
        assert depth_filter(cand, depth, target, percentile=1.0).bitmap[0, 4]

    def test_invalid_target_depth_degenerate(self):
        target = _mask((2, 2), [(0, 0)])
        depth = DepthMap(np.ones((2, 2)), np.zeros((2, 2), bool))
        with pytest.raises(DegenerateInput):
            depth_filter(_mask((2, 2), [(1, 1)], 2), depth, target, 1.0)


# ----------------------------------------------------------- boundary_extend


class TestBoundaryExtend:
    def test_interior_passthrough(self):
        target = _rect((10, 10), 3, 6, 3, 6)
        mask = _rect((10, 10), 2, 3, 2, 3, mid=1)
        out, offset = boundary_extend(mask, target, margin_frac=0.3)
        assert offset == (0, 0)
        np.testing.assert_array_equal(out.bitmap, mask.bitmap)

    def test_right_edge_growth_amount(self):
        # bbox width 50, margin 0.2 -> 10 extra columns
        target = _rect((60, 60), 10, 20, 10, 60)
        mask = InstanceMask(1, np.zeros((60, 60), bool))
        out, offset = boundary_extend(mask, target, margin_frac=0.2)
        assert offset == (0, 0)
        assert out.bitmap.shape == (60, 70)
        # strip rows = rows where the target touches the right border
        assert out.bitmap[10:20, 60:].all()
        assert not out.bitmap[:10, 60:].any()

    def test_two_sided(self):
        target = _rect((20, 20), 10, 20, 12, 20)  # touches right and bottom
        mask = InstanceMask(1, np.zeros((20, 20), bool))
        out, offset = boundary_extend(mask, target, margin_frac=0.25)
        gx = math.ceil(0.25 * 8)
        gy = math.ceil(0.25 * 10)
        assert out.bitmap.shape == (20 + gy, 20 + gx)
        assert offset == (0, 0)

    def test_left_top_offset(self):
        target = _rect((12, 12), 0, 4, 0, 6)
        mask = InstanceMask(1, np.zeros((12, 12), bool))
        out, offset = boundary_extend(mask, target, margin_frac=0.5)
        assert offset == (3, 2)
        assert out.bitmap.shape == (14, 15)


# --------------------------------------------------------------- make_request


def _scene(seed=0, shape=(12, 12)):
    rng = np.random.default_rng(seed)
    target = _rect(shape, 4, 8, 4, 8, mid=1)
    occluder = _rect(shape, 6, 10, 6, 10, mid=2)
    depth_arr = np.full(shape, 3.0)
    depth_arr[occluder.bitmap] = 1.5
    depth_arr[target.bitmap & ~occluder.bitmap] = 2.0
    depth = DepthMap.from_array(depth_arr)
    image = ImageBuffer(rng.random((*shape, 3)))
    return target, [occluder], depth, image


class TestMakeRequest:
    def test_unoccluded_interior_flags_skip(self):
        shape = (12, 12)
        target = _rect(shape, 4, 8, 4, 8, mid=1)
        depth = DepthMap.from_array(np.full(shape, 2.0))
        image = ImageBuffer(np.zeros((*shape, 3)))
        inst = SemanticInstance(target, 9, 1.0)
        req = make_request(inst, [], depth, image, AmodalConfig(adjacency_radius=2, margin_frac=0.3))
        assert req.skip_inpainting
        assert req.refined_mask.is_empty()

    def test_matches_reference_oracle(self):
        target, others, depth, image = _scene()
        cfg = AmodalConfig(adjacency_radius=3, margin_frac=0.3)
        req = make_request(SemanticInstance(target, 9, 1.0), others, depth, image, cfg)
        want, offset = reference_refined_mask(target, others, depth, 3, 0.3)
        assert req.canvas_offset == offset
        np.testing.assert_array_equal(req.refined_mask.bitmap, want)

    def test_out_of_frame_plus_occluded(self):
        shape = (12, 12)
        target = _rect(shape, 4, 12, 4, 8, mid=1)  # touches bottom
        occluder = _rect(shape, 5, 9, 7, 11, mid=2)
        d = np.full(shape, 3.0)
        d[occluder.bitmap] = 1.0
        d[target.bitmap & ~occluder.bitmap] = 2.0
        depth = DepthMap.from_array(d)
        image = ImageBuffer(np.zeros((*shape, 3)))
        cfg = AmodalConfig(adjacency_radius=2, margin_frac=0.25)
        req = make_request(SemanticInstance(target, 9, 1.0), [occluder], depth, image, cfg)
        want, offset = reference_refined_mask(target, [occluder], depth, 2, 0.25)
        assert req.canvas_offset == offset
        np.testing.assert_array_equal(req.refined_mask.bitmap, want)
        assert not req.skip_inpainting

    def test_visible_pixels_copied_exactly(self):
        target, others, depth, image = _scene(seed=5)
        cfg = AmodalConfig(adjacency_radius=3)
        req = make_request(SemanticInstance(target, 9, 1.0), others, depth, image, cfg)
        ox, oy = req.canvas_offset
        window = req.noised_image.data[oy : oy + 12, ox : ox + 12]
        np.testing.assert_array_equal(window[target.bitmap], image.data[target.bitmap])

    def test_noise_statistics(self):
        shape = (128, 128)
        target = _rect(shape, 60, 64, 60, 64, mid=1)
        depth = DepthMap.from_array(np.full(shape, 2.0))
        image = ImageBuffer(np.zeros((*shape, 3)))
        req = make_request(
            SemanticInstance(target, 9, 1.0), [], depth, image, AmodalConfig(adjacency_radius=2)
        )
        outside = ~target.bitmap
        vals = req.noised_image.data[outside]
        assert vals.size >= 10_000
        assert abs(vals.mean() - 0.5) < 0.05

    def test_noise_deterministic_per_seed(self):
        target, others, depth, image = _scene()
        cfg = AmodalConfig(adjacency_radius=3, noise_seed=42)
        a = make_request(SemanticInstance(target, 9, 1.0), others, depth, image, cfg)
        b = make_request(SemanticInstance(target, 9, 1.0), others, depth, image, cfg)
        np.testing.assert_array_equal(a.noised_image.data, b.noised_image.data)

    def test_prompt_uses_class_name(self):
        target, others, depth, image = _scene()
        cfg = AmodalConfig(adjacency_radius=3, class_names={9: "sofa"})
        req = make_request(SemanticInstance(target, 9, 1.0), others, depth, image, cfg)
        assert "sofa" in req.prompt

    def test_refined_never_covers_target(self):
        rng = np.random.default_rng(31)
        for trial in range(10):
            shape = (10, 10)
            target = InstanceMask(1, rng.random(shape) > 0.7)
            if target.is_empty():
                continue
            others = [InstanceMask(2, rng.random(shape) > 0.7)]
            depth = DepthMap.from_array(rng.uniform(1, 4, shape))
            image = ImageBuffer(rng.random((*shape, 3)))
            req = make_request(
                SemanticInstance(target, 3, 1.0), others, depth, image,
                AmodalConfig(adjacency_radius=2, margin_frac=0.3),
            )
            ox, oy = req.canvas_offset
            window = req.refined_mask.bitmap[oy : oy + 10, ox : ox + 10]
            assert not (window & target.bitmap).any()


def test_request_serialization_round_trip(tmp_path):
    target, others, depth, image = _scene()
    cfg = AmodalConfig(adjacency_radius=3, class_names={9: "table"})
    req = make_request(SemanticInstance(target, 9, 1.0), others, depth, image, cfg)
    write_request(req, tmp_path / "req")
    meta = read_request_meta(tmp_path / "req")
    assert meta["instance_id"] == 1
    assert meta["prompt"] == req.prompt
    assert tuple(meta["canvas_offset"]) == req.canvas_offset
    mask_img = skio.load_image(tmp_path / "req" / "mask.png")
    np.testing.assert_array_equal(mask_img.data[:, :, 0] > 0.5, req.refined_mask.bitmap)
