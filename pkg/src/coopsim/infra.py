"""Roadside-side payload assembly: filtering, flow estimation, packaging."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import AgentQuery, LaneQuery, OccupancyMessage, Pose
from .scenario import PerceivedFrame

DEFAULT_CONF_THRESHOLD = 0.3


@dataclass(frozen=True, eq=False)
class V2XPayload:
    """One transmission: header plus sparse queries and an optional occupancy map."""

    sender_id: int
    timestamp: float
    world_from_sensor: Pose
    agent_queries: tuple[AgentQuery, ...] = ()
    lane_queries: tuple[LaneQuery, ...] = ()
    occupancy: OccupancyMessage | None = None

    def __post_init__(self):
        object.__setattr__(self, "agent_queries", tuple(self.agent_queries))
        object.__setattr__(self, "lane_queries", tuple(self.lane_queries))
        object.__setattr__(self, "timestamp", float(self.timestamp))
        object.__setattr__(self, "sender_id", int(self.sender_id))
        t = self.timestamp
        stale = [q for q in (*self.agent_queries, *self.lane_queries) if q.timestamp != t]
        if stale or (self.occupancy is not None and self.occupancy.timestamp != t):
            raise ValueError("every payload element must carry the header timestamp")

    @property
    def is_empty(self) -> bool:
        return not self.agent_queries and not self.lane_queries and self.occupancy is None

    def __eq__(self, other):
        if not isinstance(other, V2XPayload):
            return NotImplemented
        return (self.sender_id == other.sender_id and self.timestamp == other.timestamp
                and self.world_from_sensor == other.world_from_sensor
                and list(self.agent_queries) == list(other.agent_queries)
                and list(self.lane_queries) == list(other.lane_queries)
                and self.occupancy == other.occupancy)

    __hash__ = None


def filter_queries(queries, conf_threshold: float) -> list:
    """Queries (agent or lane) with confidence >= threshold, order kept."""
    return [q for q in queries if q.confidence >= conf_threshold]


def estimate_query_flow(prev: PerceivedFrame | None, curr: PerceivedFrame, dt: float) -> PerceivedFrame:
    """Two-frame finite-difference flow for every current agent query.

    Tracks absent from ``prev`` (or every track, when ``prev`` is None) fall
    back to their velocity and a zero feature flow.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    previous = {} if prev is None else {q.track_id: q for q in prev.agent_queries}
    out = []
    for q in curr.agent_queries:
        p = previous.get(q.track_id)
        if p is None:
            out.append(replace(q, flow_ref=q.velocity.copy(), flow_feature=np.zeros_like(q.feature)))
        else:
            out.append(replace(q, flow_ref=(q.ref_point[:2] - p.ref_point[:2]) / dt,
                               flow_feature=(q.feature - p.feature) / dt))
    return replace(curr, agent_queries=tuple(out))


def estimate_occupancy_flow(p_prev: np.ndarray, p_curr: np.ndarray, dt: float) -> np.ndarray:
    if dt <= 0:
        raise ValueError("dt must be positive")
    p_prev = np.asarray(p_prev, dtype=np.float64)
    p_curr = np.asarray(p_curr, dtype=np.float64)
    if p_prev.shape != p_curr.shape:
        raise ValueError(f"grid shapes differ: {p_prev.shape} vs {p_curr.shape}")
    return (p_curr - p_prev) / dt


def attach_flows(prev: PerceivedFrame | None, curr: PerceivedFrame, dt: float) -> PerceivedFrame:
    """Query flow plus occupancy flow (zero when there is no previous frame)."""
    frame = estimate_query_flow(prev, curr, dt)
    occ = curr.occupancy
    p1 = occ.grid.zeros() if prev is None else estimate_occupancy_flow(prev.occupancy.p0, occ.p0, dt)
    return replace(frame, occupancy=replace(occ, p1=p1))


def build_payload(frame: PerceivedFrame, sensor_pose: Pose, sender_id: int,
                  conf_threshold: float = DEFAULT_CONF_THRESHOLD) -> V2XPayload:
    return V2XPayload(
        sender_id=sender_id,
        timestamp=frame.timestamp,
        world_from_sensor=sensor_pose,
        agent_queries=tuple(filter_queries(frame.agent_queries, conf_threshold)),
        lane_queries=tuple(filter_queries(frame.lane_queries, conf_threshold)),
        occupancy=frame.occupancy,
    )


__all__ = ["DEFAULT_CONF_THRESHOLD", "V2XPayload", "attach_flows", "build_payload",
           "estimate_occupancy_flow", "estimate_query_flow", "filter_queries"]
