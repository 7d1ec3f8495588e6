import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from macvi_eval.core import BBox, OBSTACLE, SKY, WATER
from macvi_eval.fixtures import ScenarioSpec, generate_scenario
from macvi_eval.seg import (DimensionMismatch, EdgeMetricConfig, EmptyEdge, ObstacleRecord, SegDetectionConfig,
                            TooFewObstacles, avg_score, evaluate_seg, obstacle_detection_from_mask,
                            precision_recall_f1, size_binned_f1, water_edge_metrics)

from oracles import edge_metrics_oracle, flood_fill_components

W, H = 64, 48
FLAT = [[(0, 20), (W - 1, 20)]]


def layered(edge_row, width=W, height=H):
    """Sky above ``edge_row``, water from it downwards."""
    arr = np.full((height, width), WATER, dtype=np.uint8)
    arr[:edge_row] = SKY
    return arr


def no_fp_cfg(**kw):
    return SegDetectionConfig(**{"fp_min_area": 1, **kw})


# --- water edge -------------------------------------------------------------------

def test_edge_on_ground_truth_is_exact():
    assert tuple(water_edge_metrics(layered(20), FLAT)) == (0.0, 100.0)


@pytest.mark.parametrize("offset, mu_a, mu_r", [(5, 5.0, 100.0), (-5, 5.0, 100.0), (25, 25.0, 0.0), (20, 20.0, 0.0),
                                                (19, 19.0, 100.0)])
def test_constant_vertical_offset(offset, mu_a, mu_r):
    res = water_edge_metrics(layered(20 + offset), FLAT)
    assert tuple(res) == (mu_a, mu_r)
    assert tuple(res) == edge_metrics_oracle(layered(20 + offset).tolist(), FLAT)


def test_column_without_transition_counts_against_robustness_only():
    arr = layered(22)
    arr[:, :16] = WATER  # a quarter of the columns are all water
    mu_a, mu_r = water_edge_metrics(arr, FLAT)
    assert mu_a == 2.0
    assert mu_r == 75.0


def test_empty_edge():
    with pytest.raises(EmptyEdge):
        water_edge_metrics(layered(20), [])
    with pytest.raises(ValueError):
        EdgeMetricConfig(theta_w=0)


@st.composite
def column_masks(draw):
    h, w = draw(st.integers(2, 12)), draw(st.integers(1, 10))
    cells = draw(st.lists(st.sampled_from([OBSTACLE, WATER, SKY]), min_size=h * w, max_size=h * w))
    arr = np.array(cells, dtype=np.uint8).reshape(h, w)
    pts = draw(st.lists(st.tuples(st.floats(-2, w + 2), st.floats(0, h - 1)), min_size=2, max_size=4))
    pts.sort()
    return arr, [pts]


@given(column_masks(), st.floats(0.5, 10))
def test_edge_metrics_match_column_scan(inst, theta):
    arr, polys = inst
    try:
        res = water_edge_metrics(arr, polys, EdgeMetricConfig(theta))
    except EmptyEdge:
        return
    mu_a, mu_r = edge_metrics_oracle(arr.tolist(), polys, theta)
    assert res.mu_R == mu_r
    assert (math.isnan(res.mu_A) and math.isnan(mu_a)) or res.mu_A == pytest.approx(mu_a, abs=1e-9)


@given(column_masks(), st.floats(0.5, 10), st.floats(0.5, 10))
def test_robustness_monotone_and_accuracy_independent_of_threshold(inst, t1, t2):
    arr, polys = inst
    lo, hi = sorted((t1, t2))
    try:
        a = water_edge_metrics(arr, polys, EdgeMetricConfig(lo))
    except EmptyEdge:
        return
    b = water_edge_metrics(arr, polys, EdgeMetricConfig(hi))
    assert a.mu_R <= b.mu_R
    assert (math.isnan(a.mu_A) and math.isnan(b.mu_A)) or a.mu_A == b.mu_A


# --- obstacle detection ---------------------------------------------------------------

def test_perfect_rasterization_detects_every_box():
    scn = generate_scenario(ScenarioSpec(seed=4, frames=3, width=160, height=120, size_range=(6, 16)))
    for f in scn.frames:
        boxes = scn.boxes_by_frame()[f]
        r = obstacle_detection_from_mask(scn.seg_masks[f], boxes, scn.edges.polylines(f), scn.zone_masks[f])
        assert (r.tp, r.fp, r.fn) == (len(boxes), 0, 0)


def test_spurious_blob_on_open_water_is_one_false_positive():
    arr = layered(20)
    arr[30:40, 30:40] = OBSTACLE
    assert obstacle_detection_from_mask(arr, [], FLAT).fp == 1


def test_blob_above_edge_is_not_a_false_positive():
    arr = layered(20)
    arr[5:15, 30:40] = OBSTACLE
    assert obstacle_detection_from_mask(arr, [], FLAT).fp == 0


def test_columns_outside_a_partial_edge_are_treated_as_above():
    arr = layered(20)
    arr[30:40, 50:60] = OBSTACLE
    partial = [[(0, 20), (40, 20)]]
    assert obstacle_detection_from_mask(arr, [], partial).fp == 0
    assert obstacle_detection_from_mask(arr, [], FLAT).fp == 1


def test_small_components_are_noise():
    arr = layered(20)
    arr[30:34, 30:34] = OBSTACLE  # 16 px < 25
    assert obstacle_detection_from_mask(arr, [], FLAT).fp == 0
    assert obstacle_detection_from_mask(arr, [], FLAT, cfg=no_fp_cfg()).fp == 1


def test_diagonal_bridge_merges_blobs_under_eight_connectivity():
    arr = layered(20)
    arr[25:31, 10:16] = OBSTACLE
    arr[31:37, 16:22] = OBSTACLE  # touches the first blob only at a corner
    mask = (arr == OBSTACLE)
    assert len(flood_fill_components(mask.tolist(), 8)) == 1
    assert len(flood_fill_components(mask.tolist(), 4)) == 2
    assert obstacle_detection_from_mask(arr, [], FLAT).fp == 1
    assert obstacle_detection_from_mask(arr, [], FLAT, cfg=SegDetectionConfig(fp_connectivity=4)).fp == 2


def test_pixels_inside_ground_truth_boxes_never_count_as_false_positives():
    arr = layered(20)
    arr[25:35, 10:50] = OBSTACLE  # a box plus a bigger spill
    r = obstacle_detection_from_mask(arr, [BBox(10, 25, 40, 10)], FLAT)
    assert (r.tp, r.fp, r.fn) == (1, 0, 0)


def test_coverage_threshold_decides_hit():
    arr = layered(20)
    arr[30:40, 10:15] = OBSTACLE  # half of a 10x10 box
    box = [BBox(10, 30, 10, 10)]
    assert obstacle_detection_from_mask(arr, box, FLAT).tp == 1
    assert obstacle_detection_from_mask(arr, box, FLAT, cfg=SegDetectionConfig(coverage_threshold=0.6)).tp == 0


def test_danger_zone_split():
    arr = layered(20)
    zone = np.zeros((H, W), dtype=np.uint8)
    zone[32:, :] = 1
    arr[36:42, 40:48] = OBSTACLE                       # blob fully in the zone
    arr[22:28, 2:10] = OBSTACLE                        # blob outside
    boxes = [BBox(10, 24, 10, 10), BBox(30, 22, 6, 6)]  # 20 % and 0 % in zone
    boxes.append(BBox(50, 31, 8, 4))                   # 3 of 4 rows in zone
    r = obstacle_detection_from_mask(arr, boxes, FLAT, zone)
    assert (r.fp, r.fp_d) == (2, 1)
    assert (r.fn, r.fn_d) == (3, 1)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        obstacle_detection_from_mask(layered(20), [], FLAT, np.zeros((3, 3)))


def random_mask(rng, size=64, density=0.45):
    return rng.random((size, size)) < density


@pytest.mark.parametrize("seed", range(10))
def test_component_counts_match_flood_fill(seed):
    rng = np.random.default_rng(seed)
    mask = random_mask(rng)
    arr = np.where(mask, OBSTACLE, WATER).astype(np.uint8)
    top = [[(0, 0), (63, 0)]]
    for conn in (4, 8):
        r = obstacle_detection_from_mask(arr, [], top, cfg=no_fp_cfg(fp_connectivity=conn))
        sizes = flood_fill_components(mask.tolist(), conn)
        assert r.fp == len(sizes)
        assert sorted(o.area for o in r.obstacles) == sorted(sizes)


box_st = st.builds(BBox, st.integers(0, 30), st.integers(20, 40), st.integers(1, 12), st.integers(1, 8))


@given(st.integers(0, 2 ** 32 - 1), st.lists(box_st, max_size=5), st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_tp_monotone_in_threshold_and_counts_partition(seed, boxes, t1, t2):
    arr = np.where(random_mask(np.random.default_rng(seed), 48, 0.5)[:H, :W], OBSTACLE, WATER).astype(np.uint8)
    lo, hi = sorted((t1, t2))
    a = obstacle_detection_from_mask(arr, boxes, FLAT, cfg=SegDetectionConfig(coverage_threshold=lo))
    b = obstacle_detection_from_mask(arr, boxes, FLAT, cfg=SegDetectionConfig(coverage_threshold=hi))
    assert b.tp <= a.tp
    assert a.tp + a.fn == b.tp + b.fn == len(boxes)


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.1, 0.7))
def test_eight_connectivity_never_counts_more_components(seed, density):
    arr = np.where(random_mask(np.random.default_rng(seed), 32, density), OBSTACLE, WATER).astype(np.uint8)
    top = [[(0, 0), (31, 0)]]
    fp8 = obstacle_detection_from_mask(arr, [], top, cfg=no_fp_cfg(fp_connectivity=8)).fp
    fp4 = obstacle_detection_from_mask(arr, [], top, cfg=no_fp_cfg(fp_connectivity=4)).fp
    assert fp8 <= fp4


def test_minimum_area_can_reverse_the_connectivity_order():
    # two 15-px pieces touching at a corner: one 30-px component under 8-connectivity,
    # two sub-threshold components under 4-connectivity
    arr = np.full((20, 20), WATER, dtype=np.uint8)
    arr[2:5, 2:7] = OBSTACLE
    arr[5:8, 7:12] = OBSTACLE
    top = [[(0, 0), (19, 0)]]
    fp8 = obstacle_detection_from_mask(arr, [], top, cfg=SegDetectionConfig(fp_connectivity=8)).fp
    fp4 = obstacle_detection_from_mask(arr, [], top, cfg=SegDetectionConfig(fp_connectivity=4)).fp
    assert (fp8, fp4) == (1, 0)


# --- size bins ---------------------------------------------------------------------------

def gt_records(detected):
    return [ObstacleRecord(10 * (i + 1), "gt", d, False) for i, d in enumerate(detected)]


def test_all_detected_gives_unit_bins():
    assert size_binned_f1(gt_records([True] * 30)) == [1.0] * 12


def test_twenty_four_obstacles_form_bins_of_two():
    # pairs alternate between detected and missed, so any other bin size would blur the pattern
    detected = [(i // 2) % 2 == 0 for i in range(24)]
    assert size_binned_f1(gt_records(detected)) == [1.0, 0.0] * 6


def test_small_misses_lower_the_first_bin():
    detected = [i >= 4 for i in range(36)]
    bins = size_binned_f1(gt_records(detected))
    assert bins[0] < bins[-1]


def test_false_positives_join_the_bin_of_their_area():
    recs = gt_records([True] * 24) + [ObstacleRecord(15, "fp", False, False), ObstacleRecord(10_000, "fp", False, False)]
    bins = size_binned_f1(recs)
    assert bins[0] < 1.0 and bins[-1] < 1.0 and bins[1:-1] == [1.0] * 10


def test_too_few_obstacles():
    with pytest.raises(TooFewObstacles):
        size_binned_f1(gt_records([True] * 11))


# --- report --------------------------------------------------------------------------------

def test_f1_definition():
    assert precision_recall_f1(3, 1, 1) == (0.75, 0.75, 0.75)
    assert precision_recall_f1(0, 2, 3)[2] == 0.0
    assert precision_recall_f1(0, 0, 0) == (1.0, 1.0, 1.0)


LEADERBOARD = [  # F1, F1 in the danger zone, leaderboard average (percent)
    (94.3, 92.7, 93.5), (93.4, 92.9, 93.2), (93.7, 89.6, 91.6), (94.1, 88.4, 91.3),
    (92.9, 86.9, 89.9), (93.6, 85.5, 89.6), (91.5, 87.6, 89.5),
]


@pytest.mark.parametrize("f1, f1d, avg", LEADERBOARD)
def test_average_score_reproduces_leaderboard_within_rounding(f1, f1d, avg):
    assert abs(avg_score(f1, f1d) - avg) <= 0.05 + 1e-9


def test_average_score_examples():
    assert avg_score(1.0, 1.0) == 1.0
    assert round(avg_score(93.5, 92.9), 1) == 93.2


def test_evaluate_seg_on_perfect_fixture():
    scn = generate_scenario(ScenarioSpec(seed=2, frames=4, width=160, height=120, size_range=(6, 16)))
    r = evaluate_seg(scn.seg_masks, scn.boxes_by_frame(), scn.edges, scn.zone_masks, frames=scn.frames)
    assert (r.mu_A, r.mu_R) == (0.0, 100.0)
    assert (r.F1, r.F1_danger, r.avg_score) == (1.0, 1.0, 100.0)
    assert r.TP == len(scn.gts)


def test_macro_and_micro_pooling_differ_on_unbalanced_frames():
    a = layered(20)
    a[30:40, 10:20] = OBSTACLE
    b = layered(20)
    masks = {1: a, 2: b}
    boxes = {1: [BBox(10, 30, 10, 10)], 2: [BBox(10, 30, 10, 10), BBox(30, 30, 10, 10), BBox(50, 30, 10, 10)]}
    edges = type("E", (), {"polylines": staticmethod(lambda f: FLAT)})()
    micro = evaluate_seg(masks, boxes, edges, frames=[1, 2])
    macro = evaluate_seg(masks, boxes, edges, frames=[1, 2], macro=True)
    assert micro.Re == 0.25
    assert macro.Re == 0.5
