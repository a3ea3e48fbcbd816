import math
import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coopsim.core import AgentClass, GridSpec, LaneClass, OccupiedMask
from coopsim.metrics import (
    Detection,
    EvalReport,
    GroundTruth,
    average_precision,
    bev_iou,
    lane_iou,
    occupancy_iou,
    planning_metrics,
    tracking_metrics,
)
from coopsim.planner import Trajectory, arc
from coopsim.scenario import LanePolyline
from detection_cases import random_detection_case
from oracles import axis_aligned_iou, eleven_point_ap, greedy_tp_flags, shapely_iou

GRID = GridSpec(200, 200, 0.5, -50.0, -50.0)
CAR = AgentClass.CAR


# --- IoU ------------------------------------------------------------------------

def test_bev_iou_examples():
    box = (1.0, 2.0, 0.3, 4.0, 2.0)
    assert bev_iou(box, box) == 1.0
    assert bev_iou((0, 0, 0, 2, 2), (10, 0, 0, 2, 2)) == 0.0
    assert bev_iou((0, 0, 0, 2, 2), (1, 0, 0, 2, 2)) == pytest.approx(1 / 3, abs=1e-12)
    with pytest.raises(ValueError):
        bev_iou((0, 0, 0, 0, 2), box)


rect = st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.2, 6), st.floats(0.2, 6))


@given(rect, rect, st.floats(-math.pi, math.pi))
def test_bev_iou_matches_closed_form_overlap(a, b, yaw):
    expected = axis_aligned_iou(a, b)
    got = bev_iou((a[0], a[1], 0.0, a[2], a[3]), (b[0], b[1], 0.0, b[2], b[3]))
    assert got == pytest.approx(expected, abs=1e-9)
    # rotating both boxes about the origin leaves the overlap unchanged
    c, s = math.cos(yaw), math.sin(yaw)
    ra = (c * a[0] - s * a[1], s * a[0] + c * a[1], yaw, a[2], a[3])
    rb = (c * b[0] - s * b[1], s * b[0] + c * b[1], yaw, b[2], b[3])
    assert bev_iou(ra, rb) == pytest.approx(expected, abs=1e-9)


oriented = st.tuples(st.floats(-4, 4), st.floats(-4, 4), st.floats(-math.pi, math.pi),
                     st.floats(0.2, 6), st.floats(0.2, 6))


@given(oriented, oriented)
def test_bev_iou_matches_polygon_library(a, b):
    assert bev_iou(a, b) == pytest.approx(shapely_iou(a, b), abs=1e-9)
    assert bev_iou(a, b) == pytest.approx(bev_iou(b, a), abs=1e-12)


# --- AP ---------------------------------------------------------------------------

def test_ap_examples():
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always")
        assert average_precision([], []) == 0.0
    gts = [GroundTruth(0, (0, 0, 0, 4, 2), CAR), GroundTruth(0, (20, 0, 0, 4, 2), CAR)]
    perfect = [Detection(0, 0.9, g.box, CAR) for g in gts]
    assert average_precision(perfect, gts) == 1.0
    dets = [Detection(0, 0.9, gts[0].box, CAR), Detection(0, 0.8, (50, 50, 0, 4, 2), CAR),
            Detection(0, 0.7, gts[1].box, CAR)]
    assert average_precision(dets, gts) == float((6 * Fraction(1) + 5 * Fraction(2, 3)) / 11)


def test_ap_matches_brute_force_oracle_case_sample():
    rng = np.random.default_rng(7)
    for _ in range(50):
        dets, gts = random_detection_case(rng)
        if not gts:
            continue
        flags = greedy_tp_flags(dets, gts, shapely_iou)
        expected = float(eleven_point_ap(flags, len(gts)))
        got = average_precision([Detection(*d) for d in dets], [GroundTruth(*g) for g in gts])
        assert got == expected


def test_ap_never_drops_when_a_false_positive_is_removed():
    rng = np.random.default_rng(8)
    for _ in range(50):
        dets, gts = random_detection_case(rng)
        if not gts or not dets:
            continue
        flags = greedy_tp_flags(dets, gts, shapely_iou)
        order = sorted(range(len(dets)), key=lambda i: (-dets[i][1], i))
        fps = [order[k] for k, hit in enumerate(flags) if not hit]
        if not fps:
            continue
        full = average_precision([Detection(*d) for d in dets], [GroundTruth(*g) for g in gts])
        pruned = [Detection(*d) for i, d in enumerate(dets) if i != fps[0]]
        assert average_precision(pruned, [GroundTruth(*g) for g in gts]) >= full
        assert 0.0 <= full <= 1.0


# --- tracking -------------------------------------------------------------------------

def test_tracking_examples():
    gt = [[(1, (0.0, 0.0))], [(1, (1.0, 0.0))], [(1, (2.0, 0.0))], [(1, (3.0, 0.0))]]
    same = [[(7, xy)] for ((_, xy),) in gt]
    assert tracking_metrics(same, gt) == (1.0, 0)
    assert tracking_metrics([[] for _ in gt], gt) == (0.0, 0)
    switched = [[(7, gt[0][0][1])], [(7, gt[1][0][1])], [(8, gt[2][0][1])], [(8, gt[3][0][1])]]
    mota, idsw = tracking_metrics(switched, gt)
    assert idsw == 1 and mota == 1 - 1 / 4


# --- occupancy and lanes ---------------------------------------------------------------

def test_occupancy_iou_examples():
    g = GridSpec(2, 2, 1.0, -1.0, -1.0)
    a = np.zeros((2, 2), dtype=bool)
    a[0, 0] = a[0, 1] = True
    b = np.zeros((2, 2), dtype=bool)
    b[0, 1] = b[1, 1] = True
    assert occupancy_iou(a, a, g, 5.0) == 1.0
    assert occupancy_iou(a, b, g, 5.0) == pytest.approx(1 / 3)
    pred = np.zeros(GRID.shape, dtype=bool)
    pred[0, 0] = True
    gt = np.zeros(GRID.shape, dtype=bool)
    gt[100, 100] = True
    assert occupancy_iou(OccupiedMask(pred, GRID, 0.5), gt, GRID, 15.0) == 0.0


@given(st.integers(0, 2**32 - 1))
def test_iou_is_symmetric(seed):
    rng = np.random.default_rng(seed)
    a = rng.random(GRID.shape) < 0.05
    b = rng.random(GRID.shape) < 0.05
    assert occupancy_iou(a, b, GRID, 25.0) == occupancy_iou(b, a, GRID, 25.0)


def test_lane_iou_examples():
    l1 = LanePolyline([(-20, 0), (20, 0)], LaneClass.LANE)
    l2 = LanePolyline([(-20, 10), (20, 10)], LaneClass.LANE)
    assert lane_iou([l1, l2], [l1, l2], GRID)[LaneClass.LANE] == 1.0
    assert lane_iou([l1], [l2], GRID)[LaneClass.LANE] == 0.0
    l3 = LanePolyline([(-20, -10), (20, -10)], LaneClass.LANE)
    assert lane_iou([l1, l3], [l1, l2], GRID)[LaneClass.LANE] == pytest.approx(1 / 3)
    assert lane_iou([l1], [l2], GRID) == {k: v for k, v in lane_iou([l2], [l1], GRID).items()}


# --- planning ---------------------------------------------------------------------------

def empty_masks():
    return {h: np.zeros(GRID.shape, dtype=bool) for h in (2.5, 3.5, 4.5)}


def test_planning_examples():
    road = np.ones(GRID.shape, dtype=bool)
    traj = arc(4.0, 0.0, 9, 0.5)
    truth = {h: tuple(traj.at(h)) for h in (2.5, 3.5, 4.5)}
    s = planning_metrics(traj, truth, empty_masks(), road, GRID)
    assert s.l2 == {2.5: 0.0, 3.5: 0.0, 4.5: 0.0}
    assert not any(s.collision.values()) and not any(s.offroad.values())

    xy = traj.xy.copy()
    xy[5] = (10.0, 0.0)
    bent = Trajectory(traj.times, xy, traj.headings)
    s = planning_metrics(bent, {2.5: (13.0, 4.0), 3.5: truth[3.5], 4.5: truth[4.5]}, empty_masks(), road, GRID)
    assert s.l2[2.5] == 5.0

    masks = empty_masks()
    masks[2.5][100, 120] = True  # center (10.25, 0.25)
    assert planning_metrics(traj, truth, masks, road, GRID).collision[2.5]
    with pytest.raises(ValueError):
        planning_metrics(arc(4.0, 0.0, 4, 0.5), truth, empty_masks(), road, GRID)


@given(st.integers(0, 2**32 - 1))
def test_collision_flags_survive_dilation(seed):
    rng = np.random.default_rng(seed)
    road = np.ones(GRID.shape, dtype=bool)
    traj = arc(float(rng.uniform(0, 8)), float(rng.uniform(-0.1, 0.1)), 9, 0.5)
    truth = {h: (0.0, 0.0) for h in (2.5, 3.5, 4.5)}
    masks = {h: rng.random(GRID.shape) < 0.002 for h in (2.5, 3.5, 4.5)}
    grown = {}
    for h, m in masks.items():
        g = m.copy()
        g[1:] |= m[:-1]
        g[:-1] |= m[1:]
        g[:, 1:] |= m[:, :-1]
        g[:, :-1] |= m[:, 1:]
        grown[h] = g
    before = planning_metrics(traj, truth, masks, road, GRID).collision
    after = planning_metrics(traj, truth, grown, road, GRID).collision
    assert all(after[h] or not before[h] for h in before)


def test_report_dict_round_trip():
    r = EvalReport(ap_per_class={"car": 0.5}, recall=0.25, l2_at={2.5: 1.0}, collision_rate_at={2.5: 0.1},
                   offroad_rate_at={2.5: 0.0}, avg_bps=12.0)
    assert EvalReport.from_dict(r.to_dict()).to_dict() == r.to_dict()
