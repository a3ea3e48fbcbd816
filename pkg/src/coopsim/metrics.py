"""Detection, tracking, occupancy, lane and planning metrics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import kernels
from .core import AgentClass, GridSpec, LaneClass, OccupiedMask
from .fusion import gated_hungarian
from .planner import Trajectory, offroad_flags

PLANNING_HORIZONS = (2.5, 3.5, 4.5)
NEAR_HALF_EXTENT = 15.0
FAR_HALF_EXTENT = 25.0
LANE_HALF_WIDTH = 0.5


# ---------------------------------------------------------------------------
# Oriented box IoU
# ---------------------------------------------------------------------------

def box_corners(box) -> np.ndarray:
    """Counter-clockwise corners of ``(cx, cy, yaw, length, width)``."""
    cx, cy, yaw, length, width = (float(v) for v in box)
    c, s = math.cos(yaw), math.sin(yaw)
    hl, hw = length / 2, width / 2
    local = ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))
    return np.array([(cx + c * x - s * y, cy + s * x + c * y) for x, y in local])


def polygon_area(poly) -> float:
    if len(poly) < 3:
        return 0.0
    p = np.asarray(poly)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def clip_convex(subject, clip) -> list:
    """Sutherland-Hodgman: part of ``subject`` inside the CCW convex polygon ``clip``."""
    out = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not out:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]

        def side(p):
            return (bx - ax) * (p[1] - ay) - (by - ay) * (p[0] - ax)

        inp = out
        out = []
        for j in range(len(inp)):
            cur, prev = inp[j], inp[j - 1]
            sc, sp = side(cur), side(prev)
            if sc >= 0:
                if sp < 0:
                    t = sp / (sp - sc)
                    out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
                out.append(cur)
            elif sp >= 0:
                t = sp / (sp - sc)
                out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
    return out


def bev_iou(box_a, box_b) -> float:
    a = tuple(float(v) for v in box_a)
    b = tuple(float(v) for v in box_b)
    if a[3] <= 0 or a[4] <= 0 or b[3] <= 0 or b[4] <= 0:
        raise ValueError("box dimensions must be positive")
    if a == b:
        return 1.0
    reach = 0.5 * (math.hypot(a[3], a[4]) + math.hypot(b[3], b[4]))
    if math.hypot(a[0] - b[0], a[1] - b[1]) >= reach:
        return 0.0
    inter = polygon_area(clip_convex(box_corners(a), box_corners(b)))
    union = a[3] * a[4] + b[3] * b[4] - inter
    return min(max(inter / union, 0.0), 1.0) if union > 0 else 0.0


# ---------------------------------------------------------------------------
# Detection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Detection:
    frame: int
    confidence: float
    box: tuple
    cls: AgentClass


@dataclass(frozen=True)
class GroundTruth:
    frame: int
    box: tuple
    cls: AgentClass


def match_detections(detections, ground_truths, iou_thresh: float = 0.5) -> list[bool]:
    """Greedy by confidence; returns the TP flag of each detection in ranked order."""
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].confidence, i))
    by_frame: dict[int, list[int]] = {}
    for g, gt in enumerate(ground_truths):
        by_frame.setdefault(gt.frame, []).append(g)
    claimed = set()
    flags = []
    for i in order:
        d = detections[i]
        best, best_iou = None, iou_thresh
        for g in by_frame.get(d.frame, ()):
            gt = ground_truths[g]
            if g in claimed or gt.cls != d.cls:
                continue
            iou = bev_iou(d.box, gt.box)
            if iou >= best_iou and (best is None or iou > best_iou):
                best, best_iou = g, iou
        if best is not None:
            claimed.add(best)
        flags.append(best is not None)
    return flags


def average_precision(detections, ground_truths, iou_thresh: float = 0.5) -> float:
    """11-point interpolated AP; zero ground truths give 0."""
    n_gt = len(ground_truths)
    if n_gt == 0:
        warnings.warn("average precision with zero ground truths is defined as 0", stacklevel=2)
        return 0.0
    flags = match_detections(detections, ground_truths, iou_thresh)
    precisions, recalls = [], []
    tp = 0
    for k, hit in enumerate(flags, start=1):
        tp += hit
        precisions.append(Fraction(tp, k))
        recalls.append(Fraction(tp, n_gt))
    # envelope: best precision at recall >= r, scanning from the right
    envelope = [Fraction(0)] * len(precisions)
    running = Fraction(0)
    for k in range(len(precisions) - 1, -1, -1):
        running = max(running, precisions[k])
        envelope[k] = running
    total = Fraction(0)
    for i in range(11):
        r = Fraction(i, 10)
        k = next((k for k, rec in enumerate(recalls) if rec >= r), None)
        total += envelope[k] if k is not None else 0
    return float(total / 11)


def detection_recall(detections, ground_truths, iou_thresh: float = 0.5) -> tuple[int, int]:
    """``(true positives, ground truths)`` so recall can be pooled."""
    return sum(match_detections(detections, ground_truths, iou_thresh)), len(ground_truths)


# ---------------------------------------------------------------------------
# Tracking
# ---------------------------------------------------------------------------

def tracking_metrics(pred_frames, gt_frames, gate: float = 2.0) -> tuple[float, int]:
    """MOTA and id switches from per-frame ``[(id, (x, y)), ...]`` lists."""
    if len(pred_frames) != len(gt_frames):
        raise ValueError("prediction and ground-truth sequences differ in length")
    fn = fp = idsw = total = 0
    last_track: dict[int, int] = {}
    for preds, gts in zip(pred_frames, gt_frames):
        total += len(gts)
        pairs = gated_hungarian([xy for _, xy in gts], [xy for _, xy in preds], gate) \
            if gts and preds else []
        fn += len(gts) - len(pairs)
        fp += len(preds) - len(pairs)
        for g, p in pairs:
            gid, tid = gts[g][0], preds[p][0]
            if gid in last_track and last_track[gid] != tid:
                idsw += 1
            last_track[gid] = tid
    if total == 0:
        return 0.0, idsw
    return 1.0 - (fn + fp + idsw) / total, idsw


# ---------------------------------------------------------------------------
# Occupancy and lanes
# ---------------------------------------------------------------------------

def window_mask(grid: GridSpec, half_extent: float) -> np.ndarray:
    xs, ys = grid.cell_centers()
    return (np.abs(xs) < half_extent) & (np.abs(ys) < half_extent)


def occupancy_counts(pred, gt, grid: GridSpec, half_extent: float) -> tuple[int, int]:
    p = pred.cells if isinstance(pred, OccupiedMask) else np.asarray(pred, dtype=bool)
    g = np.asarray(gt, dtype=bool)
    if p.shape != grid.shape or g.shape != grid.shape:
        raise ValueError("masks must match the grid")
    w = window_mask(grid, half_extent)
    return int((p & g & w).sum()), int(((p | g) & w).sum())


def _ratio(inter: int, union: int) -> float:
    return inter / union if union else 0.0


def occupancy_iou(pred, gt, grid: GridSpec, half_extent: float) -> float:
    """IoU inside the centered window; an empty union reads 0."""
    return _ratio(*occupancy_counts(pred, gt, grid, half_extent))


def rasterize_lanes(lanes, grid: GridSpec, half_width: float = LANE_HALF_WIDTH) -> dict:
    out = {}
    for cls in LaneClass:
        segs = [np.concatenate([pts[:-1], pts[1:]], axis=1)
                for pts in (np.asarray(lane.points) for lane in lanes if lane.cls == cls)]
        segs = np.concatenate(segs) if segs else np.zeros((0, 4))
        out[cls] = kernels.rasterize_segments(segs, half_width, grid.origin, grid.resolution, grid.shape)
    return out


def lane_counts(pred_lanes, gt_lanes, grid: GridSpec, half_width: float = LANE_HALF_WIDTH) -> dict:
    pr = rasterize_lanes(pred_lanes, grid, half_width)
    gr = rasterize_lanes(gt_lanes, grid, half_width)
    return {cls: (int((pr[cls] & gr[cls]).sum()), int((pr[cls] | gr[cls]).sum())) for cls in LaneClass}


def lane_iou(pred_lanes, gt_lanes, grid: GridSpec, half_width: float = LANE_HALF_WIDTH) -> dict:
    return {cls: _ratio(*c) for cls, c in lane_counts(pred_lanes, gt_lanes, grid, half_width).items()}


# ---------------------------------------------------------------------------
# Planning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlanningSample:
    l2: dict
    collision: dict
    offroad: dict


def planning_metrics(planned: Trajectory, gt_future: dict, gt_masks: dict, drivable: np.ndarray,
                     grid: GridSpec, horizons=PLANNING_HORIZONS, ego_length: float = 4.6,
                     ego_width: float = 1.8) -> PlanningSample:
    """Per horizon: L2 to the logged ego position, collision and off-road flags.

    ``gt_future`` and ``gt_masks`` map each horizon to the ego position and the
    ground-truth occupancy (ego excluded) in the current ego frame.
    """
    l2, col, off = {}, {}, {}
    for h in horizons:
        k = planned.index_at(h)
        p = planned.xy[k]
        g = np.asarray(gt_future[h], dtype=np.float64)
        l2[h] = math.hypot(p[0] - g[0], p[1] - g[1])
        box = np.array([[p[0], p[1], planned.headings[k], ego_length, ego_width]])
        mask = gt_masks[h].cells if isinstance(gt_masks[h], OccupiedMask) else gt_masks[h]
        col[h] = bool(kernels.box_hits(mask, box, grid.origin, grid.resolution)[0] > 0)
        off[h] = bool(offroad_flags(planned, drivable, grid)[k])
    return PlanningSample(l2, col, off)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

def _hkey(h: float) -> str:
    return f"{h:g}"


@dataclass
class EvalReport:
    ap_per_class: dict = field(default_factory=dict)
    mean_ap: float = 0.0
    recall: float = 0.0
    mota: float = 0.0
    id_switches: int = 0
    iou_lane: float = 0.0
    iou_crosswalk: float = 0.0
    iou_n: float = 0.0
    iou_f: float = 0.0
    l2_at: dict = field(default_factory=dict)
    collision_rate_at: dict = field(default_factory=dict)
    offroad_rate_at: dict = field(default_factory=dict)
    avg_bps: float = 0.0

    def to_dict(self) -> dict:
        return {
            "ap_per_class": {c: float(v) for c, v in sorted(self.ap_per_class.items())},
            "mean_ap": float(self.mean_ap),
            "recall": float(self.recall),
            "mota": float(self.mota),
            "id_switches": int(self.id_switches),
            "iou_lane": float(self.iou_lane),
            "iou_crosswalk": float(self.iou_crosswalk),
            "iou_n": float(self.iou_n),
            "iou_f": float(self.iou_f),
            "l2_at": {_hkey(h): float(v) for h, v in sorted(self.l2_at.items())},
            "collision_rate_at": {_hkey(h): float(v) for h, v in sorted(self.collision_rate_at.items())},
            "offroad_rate_at": {_hkey(h): float(v) for h, v in sorted(self.offroad_rate_at.items())},
            "avg_bps": float(self.avg_bps),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            ap_per_class=dict(d["ap_per_class"]), mean_ap=d["mean_ap"], recall=d["recall"],
            mota=d["mota"], id_switches=d["id_switches"], iou_lane=d["iou_lane"],
            iou_crosswalk=d["iou_crosswalk"], iou_n=d["iou_n"], iou_f=d["iou_f"],
            l2_at={float(k): v for k, v in d["l2_at"].items()},
            collision_rate_at={float(k): v for k, v in d["collision_rate_at"].items()},
            offroad_rate_at={float(k): v for k, v in d["offroad_rate_at"].items()},
            avg_bps=d["avg_bps"],
        )


def flatten_report(d: dict, prefix: str = "") -> dict:
    """Nested report dict to ``{"a.b": number}`` with sorted keys."""
    out = {}
    for k in sorted(d):
        v = d[k]
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten_report(v, key + "."))
        else:
            out[key] = v
    return out


__all__ = [
    "Detection", "EvalReport", "FAR_HALF_EXTENT", "GroundTruth", "NEAR_HALF_EXTENT",
    "PLANNING_HORIZONS", "PlanningSample", "average_precision", "bev_iou", "box_corners",
    "clip_convex", "detection_recall", "flatten_report", "lane_counts", "lane_iou",
    "match_detections", "occupancy_counts", "occupancy_iou", "planning_metrics", "polygon_area",
    "rasterize_lanes", "tracking_metrics", "window_mask",
]
