"""Ego-side cross-view fusion: sync, match, fuse agents, lanes and occupancy."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np

from . import kernels
from .core import (
    AgentQuery,
    GridSpec,
    LaneQuery,
    OccupancyMessage,
    OccupiedMask,
    Pose,
    ego_grid,
    invert,
    relative_pose,
    rotate_pairs,
    transform_point,
    transform_xy,
    wrap_angle,
)
from .infra import V2XPayload
from .scenario import ID_STRIDE, PerceivedFrame


@dataclass(frozen=True)
class FusionConfig:
    gate_distance: float = 2.0
    conf_keep_threshold: float = 0.3
    occ_threshold: float = 0.5
    ego_length: float = 4.6
    ego_width: float = 1.8
    ego_margin: float = 0.5
    unmatched_conf_decay: float = 0.8
    lane_dedup_distance: float = 0.5
    flow_compensation: bool = True
    use_agents: bool = True
    use_lanes: bool = True
    use_occupancy: bool = True

    def __post_init__(self):
        if not self.gate_distance > 0:
            raise ValueError("gate_distance must be positive")
        for name in ("conf_keep_threshold", "occ_threshold"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.ego_length <= 0 or self.ego_width <= 0 or self.ego_margin < 0:
            raise ValueError("invalid ego rectangle")

    @property
    def ego_half_extent(self) -> tuple[float, float]:
        return (self.ego_length / 2 + self.ego_margin, self.ego_width / 2 + self.ego_margin)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "FusionConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown fusion keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# Synchronization
# ---------------------------------------------------------------------------

def temporal_sync_queries(queries, t_v: float, use_flow: bool = True) -> list[AgentQuery]:
    """Extrapolate reference points and features linearly to ``t_v``."""
    out = []
    for q in queries:
        dt = t_v - q.timestamp
        if dt < -1e-12:
            raise ValueError(f"cannot sync a query from t={q.timestamp} back to t={t_v}")
        if not use_flow or dt == 0.0:
            out.append(replace(q, timestamp=t_v))
            continue
        ref = q.ref_point.copy()
        ref[:2] += dt * q.flow_ref
        out.append(replace(q, ref_point=ref, feature=q.feature + dt * q.flow_feature, timestamp=t_v))
    return out


def temporal_sync_occupancy(msg: OccupancyMessage, t: float, use_flow: bool = True) -> np.ndarray:
    dt = t - msg.timestamp
    if dt < -1e-12:
        raise ValueError(f"cannot sync occupancy from t={msg.timestamp} back to t={t}")
    if not use_flow or dt == 0.0:
        return np.array(msg.p0)
    return np.clip(msg.p0 + dt * msg.p1, 0.0, 1.0)


def spatial_sync_queries(queries, relative: Pose) -> list[AgentQuery]:
    """Re-express queries through ``relative`` (target_from_source).

    Geometry is transformed directly; the feature is rotated pairwise by the
    relative yaw, the same group action that encoded heading into it.
    """
    yaw = relative.yaw
    out = []
    for q in queries:
        out.append(replace(
            q,
            ref_point=transform_point(relative, q.ref_point),
            heading=wrap_angle(q.heading + yaw),
            velocity=rotate_pairs(q.velocity, yaw),
            flow_ref=rotate_pairs(q.flow_ref, yaw),
            feature=rotate_pairs(q.feature, yaw) if q.feature.size else q.feature,
            flow_feature=rotate_pairs(q.flow_feature, yaw) if q.flow_feature.size else q.flow_feature,
        ))
    return out


def spatial_sync_lanes(lanes, relative: Pose) -> list[LaneQuery]:
    yaw = relative.yaw
    return [replace(lane, points=transform_xy(relative, lane.points),
                    feature=rotate_pairs(lane.feature, yaw)) for lane in lanes]


# ---------------------------------------------------------------------------
# Assignment
# ---------------------------------------------------------------------------

def _solve(cost: np.ndarray):
    assign, u, v = kernels.hungarian_square(cost)
    total = float(cost[np.arange(cost.shape[0]), assign].sum())
    return assign, u, v, total


def hungarian(cost) -> list[tuple[int, int]]:
    """Minimum-cost assignment of an ``n x m`` matrix; ``inf`` marks forbidden pairs.

    Forbidden and padding cells become a sentinel large enough that the
    solver first maximizes the number of permitted pairs, then minimizes
    their cost.  Among optimal assignments the lexicographically smallest
    ``(row, col)`` list is returned.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    n, m = c.shape
    if n == 0 or m == 0:
        return []
    if np.isnan(c).any() or (c == -np.inf).any():
        raise ValueError("cost entries must be finite or +inf")
    allowed = np.isfinite(c)
    if not allowed.any():
        return []
    k = max(n, m)
    maxabs = float(np.abs(c[allowed]).max())
    sentinel = 2.0 * (k + 1) * (maxabs + 1.0)
    huge = 4.0 * (k + 1) * sentinel
    work = np.full((k, k), sentinel)
    work[:n, :m] = np.where(allowed, c, sentinel)
    permitted = np.zeros((k, k), dtype=np.bool_)
    permitted[:n, :m] = allowed

    assign, u, v, best = _solve(work)
    tol = 1e-9 * max(abs(best), 1.0)
    tight_tol = 1e-9 * (sentinel + 1.0)

    for i in range(n):
        cur = int(assign[i])
        cur_ok = permitted[i, cur]
        reduced = work[i] - u[i] - v
        limit = cur if cur_ok else k
        candidates = [j for j in range(limit)
                      if permitted[i, j] and abs(reduced[j]) <= tight_tol]
        chosen = None
        for j in candidates:
            trial = work.copy()
            trial[i, :] = huge
            trial[:, j] = huge
            trial[i, j] = work[i, j]
            t_assign, t_u, t_v, t_total = _solve(trial)
            if t_total <= best + tol:
                chosen, work = j, trial
                assign, u, v = t_assign, t_u, t_v
                break
        if chosen is None:
            if cur_ok:
                col = work[:, cur].copy()
                work[i, :] = huge
                work[:, cur] = huge
                work[i, cur] = col[i]
            else:
                # keep row i off every permitted column
                work[i, permitted[i]] = huge
    return [(i, int(assign[i])) for i in range(n) if permitted[i, int(assign[i])]]


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[tuple[int, int], ...]
    unmatched_infra: tuple[int, ...]
    unmatched_ego: tuple[int, ...]


def distance_matrix(a_xy: np.ndarray, b_xy: np.ndarray) -> np.ndarray:
    a = np.asarray(a_xy, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b_xy, dtype=np.float64).reshape(-1, 2)
    return np.hypot(a[:, None, 0] - b[None, :, 0], a[:, None, 1] - b[None, :, 1])


def gated_hungarian(a_xy, b_xy, gate: float) -> list[tuple[int, int]]:
    d = distance_matrix(a_xy, b_xy)
    if d.size == 0:
        return []
    return hungarian(np.where(d <= gate, d, np.inf))


def match_queries(infra, ego, gate: float) -> MatchResult:
    pairs = gated_hungarian([q.xy for q in infra], [q.xy for q in ego], gate)
    mi = {i for i, _ in pairs}
    me = {j for _, j in pairs}
    return MatchResult(tuple(pairs),
                       tuple(i for i in range(len(infra)) if i not in mi),
                       tuple(j for j in range(len(ego)) if j not in me))


# ---------------------------------------------------------------------------
# Agent fusion
# ---------------------------------------------------------------------------

def fuse_matched(infra_q: AgentQuery, ego_q: AgentQuery, cfg: FusionConfig | None = None) -> AgentQuery:
    """Confidence-weighted merge of one matched pair; identity keeps the ego's."""
    del cfg
    s = infra_q.confidence + ego_q.confidence
    wi = 0.5 if s == 0 else infra_q.confidence / s
    we = 1.0 - wi

    def mix(a, b):
        return wi * np.asarray(a) + we * np.asarray(b)

    if infra_q.heading == ego_q.heading:
        heading = ego_q.heading
    else:
        heading = math.atan2(wi * math.sin(infra_q.heading) + we * math.sin(ego_q.heading),
                             wi * math.cos(infra_q.heading) + we * math.cos(ego_q.heading))
    same_dim = infra_q.feature.shape == ego_q.feature.shape
    return AgentQuery(
        feature=mix(infra_q.feature, ego_q.feature) if same_dim else ego_q.feature,
        ref_point=mix(infra_q.ref_point, ego_q.ref_point),
        heading=heading,
        velocity=mix(infra_q.velocity, ego_q.velocity) if same_dim else ego_q.velocity,
        track_id=ego_q.track_id,
        confidence=max(infra_q.confidence, ego_q.confidence),
        box_size=mix(infra_q.box_size, ego_q.box_size),
        cls=infra_q.cls if infra_q.confidence > ego_q.confidence else ego_q.cls,
        timestamp=ego_q.timestamp,
        flow_ref=mix(infra_q.flow_ref, ego_q.flow_ref) if same_dim else ego_q.flow_ref,
        flow_feature=mix(infra_q.flow_feature, ego_q.flow_feature) if same_dim else ego_q.flow_feature,
    )


def appended_track_id(track_id: int) -> int:
    """Move an infrastructure id into a namespace disjoint from both views."""
    return track_id + ID_STRIDE if track_id >= 0 else track_id - ID_STRIDE


def fuse_agents(synced_infra, ego_queries, cfg: FusionConfig) -> list[AgentQuery]:
    infra = list(synced_infra)
    ego = list(ego_queries)
    match = match_queries(infra, ego, cfg.gate_distance)
    partner = {j: i for i, j in match.pairs}
    merged = []
    for j, q in enumerate(ego):
        out = fuse_matched(infra[partner[j]], q) if j in partner else q
        merged.append((q.track_id, j, out))
    merged.sort(key=lambda t: (t[0], t[1]))
    result = [q for _, _, q in merged]
    for i in match.unmatched_infra:
        q = infra[i]
        result.append(replace(q, track_id=appended_track_id(q.track_id),
                              confidence=q.confidence * cfg.unmatched_conf_decay))
    return [q for q in result if q.confidence >= cfg.conf_keep_threshold]


def ego_filter(queries, occupancy: np.ndarray | None, grid: GridSpec, cfg: FusionConfig):
    """Remove queries and occupied cells inside the (margin-expanded) ego rectangle."""
    hx, hy = cfg.ego_half_extent
    kept = [q for q in queries if not (abs(q.ref_point[0]) <= hx and abs(q.ref_point[1]) <= hy)]
    if occupancy is None:
        return kept, None
    xs, ys = grid.cell_centers()
    inside = (np.abs(xs) <= hx) & (np.abs(ys) <= hy)
    cleared = np.where(inside, 0.0, occupancy)
    return kept, cleared


def crop_to_grid(queries, grid: GridSpec) -> list[AgentQuery]:
    return [q for q in queries if grid.contains(q.ref_point[0], q.ref_point[1])]


# ---------------------------------------------------------------------------
# Lanes
# ---------------------------------------------------------------------------

def point_to_polyline(points: np.ndarray, polyline: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest segment of ``polyline``."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    a = polyline[:-1]
    b = polyline[1:]
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    ap = p[:, None, :] - a[None, :, :]
    t = np.where(denom > 0, np.einsum("kij,ij->ki", ap, ab) / np.where(denom > 0, denom, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    return np.sqrt(((p[:, None, :] - closest) ** 2).sum(-1)).min(axis=1)


def fuse_lanes(synced_infra_lanes, ego_lanes, dedup_distance: float = 0.5) -> list[LaneQuery]:
    ego = list(ego_lanes)
    boxes = [(e.points.min(axis=0) - dedup_distance, e.points.max(axis=0) + dedup_distance) for e in ego]
    out = list(ego)
    for lane in synced_infra_lanes:
        # a mean distance below the threshold needs at least one point that close
        duplicate = any(
            e.cls == lane.cls
            and np.any(np.all((lane.points >= lo) & (lane.points <= hi), axis=1))
            and float(point_to_polyline(lane.points, e.points).mean()) < dedup_distance
            for e, (lo, hi) in zip(ego, boxes)
        )
        if not duplicate:
            out.append(lane)
    return out


# ---------------------------------------------------------------------------
# Occupancy
# ---------------------------------------------------------------------------

def warp_occupancy(src: np.ndarray, src_grid: GridSpec, ego_from_infra: Pose, dst: GridSpec,
                   clamp: bool = True) -> np.ndarray:
    """Bilinear resample of an infrastructure-frame grid onto an ego-frame grid."""
    infra_from_ego = invert(ego_from_infra)
    out = kernels.sample_grid(src, src_grid.origin, src_grid.resolution, dst.shape, dst.origin,
                              dst.resolution, infra_from_ego.rotation[:2, :2],
                              infra_from_ego.translation[:2])
    return np.clip(out, 0.0, 1.0) if clamp else out


def fuse_occupancy(a: np.ndarray, b: np.ndarray, theta: float, grid: GridSpec | None = None):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"grid shapes differ: {a.shape} vs {b.shape}")
    grid = ego_grid() if grid is None else grid
    fused = np.maximum(a, b)
    return fused, OccupiedMask(fused >= theta, grid, theta)


# ---------------------------------------------------------------------------
# Whole-scene pipeline
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FusedScene:
    agents: tuple[AgentQuery, ...]
    lanes: tuple[LaneQuery, ...]
    occupancy: OccupancyMessage
    mask: OccupiedMask
    timestamp: float

    def __eq__(self, other):
        if not isinstance(other, FusedScene):
            return NotImplemented
        return (self.timestamp == other.timestamp and list(self.agents) == list(other.agents)
                and list(self.lanes) == list(other.lanes) and self.occupancy == other.occupancy
                and self.mask == other.mask)

    __hash__ = None


def fuse_scene(ego: PerceivedFrame, payload: V2XPayload | None, world_from_ego: Pose,
               cfg: FusionConfig) -> FusedScene:
    """Full ego-side pipeline; ``payload=None`` is the ego-only path.

    ``ego`` must be in the ego frame with its occupancy on the ego grid.
    """
    grid = ego.occupancy.grid
    t_v = ego.timestamp
    infra_agents: list[AgentQuery] = []
    infra_lanes: list[LaneQuery] = []
    infra_p0 = infra_p1 = None
    if payload is not None:
        ego_from_infra = relative_pose(world_from_ego, payload.world_from_sensor)
        if cfg.use_agents and payload.agent_queries:
            synced = temporal_sync_queries(payload.agent_queries, t_v, cfg.flow_compensation)
            infra_agents = crop_to_grid(spatial_sync_queries(synced, ego_from_infra), grid)
        if cfg.use_lanes and payload.lane_queries:
            infra_lanes = spatial_sync_lanes(payload.lane_queries, ego_from_infra)
        occ = payload.occupancy
        if cfg.use_occupancy and occ is not None:
            p0 = temporal_sync_occupancy(occ, t_v, cfg.flow_compensation)
            infra_p0 = warp_occupancy(p0, occ.grid, ego_from_infra, grid)
            infra_p1 = warp_occupancy(occ.p1, occ.grid, ego_from_infra, grid, clamp=False)

    agents = fuse_agents(infra_agents, ego.agent_queries, cfg)
    lanes = fuse_lanes(infra_lanes, ego.lane_queries, cfg.lane_dedup_distance)
    p0 = np.array(ego.occupancy.p0)
    p1 = np.array(ego.occupancy.p1)
    if infra_p0 is not None:
        take = infra_p0 >= p0
        p0 = np.maximum(p0, infra_p0)
        p1 = np.where(take, infra_p1, p1)
    agents, p0 = ego_filter(agents, p0, grid, cfg)
    _, p1 = ego_filter([], p1, grid, cfg)
    _, mask = fuse_occupancy(p0, np.zeros_like(p0), cfg.occ_threshold, grid)
    occupancy = OccupancyMessage(p0, p1, grid, t_v)
    return FusedScene(tuple(agents), tuple(lanes), occupancy, mask, t_v)


__all__ = [
    "FusedScene", "FusionConfig", "MatchResult", "appended_track_id", "crop_to_grid",
    "distance_matrix", "ego_filter", "fuse_agents", "fuse_lanes", "fuse_matched",
    "fuse_occupancy", "fuse_scene", "gated_hungarian", "hungarian", "match_queries",
    "point_to_polyline", "spatial_sync_lanes", "spatial_sync_queries", "temporal_sync_occupancy",
    "temporal_sync_queries", "warp_occupancy",
]
