"""Wire codec, transmission-cost accounting and the simulated V2X link.

Layout (little-endian)::

    magic "UVX1"
    header   sender u32 | t f64 | rotation 9 x f64 (row-major) | translation 3 x f64
    AGT      count u32, then per query:
             track_id i32 | class u8 | conf f32 | ref 3f32 | heading f32 | velocity 2f32
             | flow_ref 2f32 | box 3f32 | feature D f32 | flow_feature D f32
    LAN      count u32, then per query:
             class u8 | conf f32 | n_pts u16 | points n_pts x 2f32 | feature D f32
    OCC      kind u8 (0 absent, 1 dense, 2 sparse)
             dense:  W u16 | H u16 | res f32 | x_min f32 | y_min f32 | p0 W*H f32 | p1 W*H f32
             sparse: W u16 | H u16 | res f32 | x_min f32 | y_min f32 | k u32
                     | k x (cell u32 | p0 f32 | p1 f32)

``D`` is not on the wire; both ends agree on it out of band.  Every decoded
element takes the header timestamp.
"""

from __future__ import annotations

import math
import struct
from collections import deque
from dataclasses import dataclass, fields, replace

import numpy as np

from .core import (
    DEFAULT_FEATURE_DIM,
    AgentClass,
    AgentQuery,
    GridSpec,
    LaneClass,
    LaneQuery,
    OccupancyMessage,
    Pose,
)
from .infra import V2XPayload
from .scenario import STREAM_CORRUPTION, rng_stream

MAGIC = b"UVX1"
BOX_MAGIC = b"UVB1"

_HEADER = struct.Struct("<Id12d")
_COUNT = struct.Struct("<I")
_AGENT = struct.Struct("<iBf3ff2f2f3f")
_LANE = struct.Struct("<BfH")
_KIND = struct.Struct("<B")
_OCC = struct.Struct("<HHfff")
_CELL = struct.Struct("<Iff")
_BOX = struct.Struct("<7fHBx")

AGENT_GEOMETRY_BYTES = _AGENT.size          # 53
LANE_GEOMETRY_BYTES = _LANE.size            # 7 (+ 8 per point)
OCC_OVERHEAD_BYTES = 13
SPARSE_CELL_BYTES = _CELL.size              # 12
SPARSE_COUNT_BYTES = _COUNT.size
BOX_RECORD_BYTES = _BOX.size                # 32
BOX_COUNT_BYTES = _COUNT.size

OCC_ABSENT, OCC_DENSE, OCC_SPARSE = 0, 1, 2


class CodecError(ValueError):
    """Base class for malformed wire data."""


class FormatError(CodecError):
    pass


class TruncationError(CodecError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class StructureError(CodecError):
    pass


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------

def _f32(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def _header_bytes(p: V2XPayload) -> bytes:
    pose = p.world_from_sensor
    return _HEADER.pack(p.sender_id, p.timestamp, *pose.rotation.reshape(-1), *pose.translation)


def _feature_dim(p: V2XPayload) -> int | None:
    dims = {q.feature.shape[0] for q in (*p.agent_queries, *p.lane_queries)}
    if len(dims) > 1:
        raise ValueError(f"mixed feature dimensions in one payload: {sorted(dims)}")
    return dims.pop() if dims else None


def encode(payload: V2XPayload) -> bytes:
    _feature_dim(payload)
    parts = [MAGIC, _header_bytes(payload), _COUNT.pack(len(payload.agent_queries))]
    for q in payload.agent_queries:
        parts.append(_AGENT.pack(q.track_id, int(q.cls), q.confidence, *q.ref_point, q.heading,
                                 *q.velocity, *q.flow_ref, *q.box_size))
        parts.append(_f32(q.feature))
        parts.append(_f32(q.flow_feature))
    parts.append(_COUNT.pack(len(payload.lane_queries)))
    for lane in payload.lane_queries:
        parts.append(_LANE.pack(int(lane.cls), lane.confidence, lane.points.shape[0]))
        parts.append(_f32(lane.points))
        parts.append(_f32(lane.feature))
    occ = payload.occupancy
    if occ is None:
        parts.append(_KIND.pack(OCC_ABSENT))
    else:
        g = occ.grid
        if occ.cells is None:
            parts.append(_KIND.pack(OCC_DENSE))
            parts.append(_OCC.pack(g.width, g.height, g.resolution, g.x_min, g.y_min))
            parts.append(_f32(occ.p0))
            parts.append(_f32(occ.p1))
        else:
            cells = occ.cells
            parts.append(_KIND.pack(OCC_SPARSE))
            parts.append(_OCC.pack(g.width, g.height, g.resolution, g.x_min, g.y_min))
            parts.append(_COUNT.pack(cells.shape[0]))
            rec = np.empty(cells.shape[0], dtype=[("i", "<u4"), ("p0", "<f4"), ("p1", "<f4")])
            rec["i"] = cells
            rec["p0"] = occ.p0.reshape(-1)[cells]
            rec["p1"] = occ.p1.reshape(-1)[cells]
            parts.append(rec.tobytes())
    return b"".join(parts)


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------

class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int, what: str) -> memoryview:
        end = self.pos + n
        if end > len(self.data):
            raise TruncationError(f"stream ends inside {what}", self.pos)
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def unpack(self, st: struct.Struct, what: str):
        return st.unpack(self.take(st.size, what))

    def floats(self, n: int, what: str) -> np.ndarray:
        return np.frombuffer(self.take(4 * n, what), dtype="<f4").astype(np.float64)


def _enum(kind, value: int, offset: int):
    try:
        return kind(value)
    except ValueError:
        raise StructureError(f"invalid {kind.__name__} value {value} at offset {offset}") from None


def _decode_header(r: _Reader, magic: bytes):
    if bytes(r.take(4, "magic")) != magic:
        raise FormatError(f"bad magic, expected {magic!r}")
    vals = r.unpack(_HEADER, "header")
    try:
        pose = Pose(np.array(vals[2:11]).reshape(3, 3), np.array(vals[11:14]))
    except ValueError as exc:
        raise StructureError(str(exc)) from None
    return int(vals[0]), float(vals[1]), pose


def decode(data: bytes, feature_dim: int = DEFAULT_FEATURE_DIM) -> V2XPayload:
    r = _Reader(data)
    sender, t, pose = _decode_header(r, MAGIC)
    per_agent = _AGENT.size + 8 * feature_dim

    (n_agents,) = r.unpack(_COUNT, "agent count")
    if n_agents * per_agent > len(r.data) - r.pos:
        raise TruncationError(f"{n_agents} agent records exceed the remaining stream", r.pos)
    agents = []
    for _ in range(n_agents):
        at = r.pos
        tid, cls, conf, x, y, z, heading, vx, vy, fx, fy, bl, bw, bh = r.unpack(_AGENT, "agent record")
        feat = r.floats(feature_dim, "agent feature")
        flow_feat = r.floats(feature_dim, "agent flow feature")
        try:
            agents.append(AgentQuery(feat, (x, y, z), heading, (vx, vy), tid, conf, (bl, bw, bh),
                                     _enum(AgentClass, cls, at), t, (fx, fy), flow_feat))
        except StructureError:
            raise
        except ValueError as exc:
            raise StructureError(f"agent record at offset {at}: {exc}") from None

    (n_lanes,) = r.unpack(_COUNT, "lane count")
    lanes = []
    for _ in range(n_lanes):
        at = r.pos
        cls, conf, n_pts = r.unpack(_LANE, "lane record")
        if n_pts < 2:
            raise StructureError(f"lane at offset {at} has {n_pts} points")
        pts = r.floats(2 * n_pts, "lane points").reshape(-1, 2)
        feat = r.floats(feature_dim, "lane feature")
        try:
            lanes.append(LaneQuery(feat, pts, _enum(LaneClass, cls, at), conf, t))
        except StructureError:
            raise
        except ValueError as exc:
            raise StructureError(f"lane record at offset {at}: {exc}") from None

    at = r.pos
    (kind,) = r.unpack(_KIND, "occupancy flag")
    occ = None
    if kind not in (OCC_ABSENT, OCC_DENSE, OCC_SPARSE):
        raise StructureError(f"unknown occupancy kind {kind} at offset {at}")
    if kind != OCC_ABSENT:
        w, h, res, x0, y0 = r.unpack(_OCC, "occupancy grid")
        try:
            grid = GridSpec(w, h, res, x0, y0)
        except ValueError as exc:
            raise StructureError(str(exc)) from None
        if kind == OCC_DENSE:
            p0 = r.floats(w * h, "occupancy p0").reshape(h, w)
            p1 = r.floats(w * h, "occupancy p1").reshape(h, w)
            cells = None
        else:
            (k,) = r.unpack(_COUNT, "sparse cell count")
            rec = np.frombuffer(r.take(k * _CELL.size, "sparse cells"),
                                dtype=[("i", "<u4"), ("p0", "<f4"), ("p1", "<f4")])
            cells = rec["i"].astype(np.int64)
            if k and (cells.max() >= w * h or np.unique(cells).size != k):
                raise StructureError("sparse cell indices out of range or repeated")
            p0 = np.zeros(w * h)
            p1 = np.zeros(w * h)
            p0[cells] = rec["p0"]
            p1[cells] = rec["p1"]
            p0, p1 = p0.reshape(h, w), p1.reshape(h, w)
        try:
            occ = OccupancyMessage(p0, p1, grid, t, cells)
        except ValueError as exc:
            raise StructureError(f"occupancy block: {exc}") from None
    if r.pos != len(r.data):
        raise StructureError(f"{len(r.data) - r.pos} trailing bytes after payload")
    return V2XPayload(sender, t, pose, tuple(agents), tuple(lanes), occ)


# ---------------------------------------------------------------------------
# Cost accounting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CostReport:
    feature_bytes: int
    geometry_bytes: int
    occupancy_bytes: int
    total_body_bytes: int
    bps: float

    @classmethod
    def zero(cls) -> "CostReport":
        return cls(0, 0, 0, 0, 0.0)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def agent_cost(dim: int) -> int:
    return AGENT_GEOMETRY_BYTES + 8 * dim


def lane_cost(n_points: int, dim: int) -> int:
    return LANE_GEOMETRY_BYTES + 8 * n_points + 4 * dim


def dense_occupancy_cost(grid: GridSpec) -> int:
    return 2 * grid.width * grid.height * 4 + OCC_OVERHEAD_BYTES


def sparse_occupancy_cost(n_cells: int) -> int:
    return SPARSE_CELL_BYTES * n_cells + OCC_OVERHEAD_BYTES + SPARSE_COUNT_BYTES


def occupancy_cost(occ: OccupancyMessage | None) -> int:
    if occ is None:
        return 0
    if occ.cells is None:
        return dense_occupancy_cost(occ.grid)
    return sparse_occupancy_cost(occ.cells.shape[0])


def _report(feature: int, geometry: int, occupancy: int, frequency_hz: float) -> CostReport:
    total = feature + geometry + occupancy
    return CostReport(feature, geometry, occupancy, total, total * float(frequency_hz))


def cost(payload: V2XPayload, frequency_hz: float = 2.0) -> CostReport:
    """Body bytes of one payload; magic, header and section counts are not charged."""
    feature = 0
    geometry = 0
    for q in payload.agent_queries:
        feature += 8 * q.feature.shape[0]
        geometry += AGENT_GEOMETRY_BYTES
    for lane in payload.lane_queries:
        feature += 4 * lane.feature.shape[0]
        geometry += LANE_GEOMETRY_BYTES + 8 * lane.points.shape[0]
    return _report(feature, geometry, occupancy_cost(payload.occupancy), frequency_hz)


def dense_tensor_cost(shape, frequency_hz: float = 2.0) -> CostReport:
    """Cost of shipping a dense f32 feature tensor of ``shape``."""
    n = math.prod(int(s) for s in shape)
    return _report(4 * n, 0, 0, frequency_hz)


# ---------------------------------------------------------------------------
# Late-fusion box payloads
# ---------------------------------------------------------------------------

def box_payload(payload: V2XPayload) -> V2XPayload:
    """Strip a hybrid payload down to plain detection boxes."""
    boxes = tuple(
        replace(q, feature=np.zeros(0), flow_feature=np.zeros(0), velocity=np.zeros(2),
                flow_ref=np.zeros(2), track_id=0)
        for q in payload.agent_queries
    )
    return V2XPayload(payload.sender_id, payload.timestamp, payload.world_from_sensor, boxes)


def box_cost(payload: V2XPayload, frequency_hz: float = 2.0) -> CostReport:
    n = len(payload.agent_queries)
    geometry = BOX_COUNT_BYTES + BOX_RECORD_BYTES * n if n else 0
    return _report(0, geometry, 0, frequency_hz)


def encode_boxes(payload: V2XPayload) -> bytes:
    parts = [BOX_MAGIC, _header_bytes(payload), _COUNT.pack(len(payload.agent_queries))]
    for q in payload.agent_queries:
        conf = int(round(min(max(q.confidence, 0.0), 1.0) * 65535))
        parts.append(_BOX.pack(*q.ref_point, *q.box_size, q.heading, conf, int(q.cls)))
    return b"".join(parts)


def decode_boxes(data: bytes) -> V2XPayload:
    r = _Reader(data)
    sender, t, pose = _decode_header(r, BOX_MAGIC)
    (n,) = r.unpack(_COUNT, "box count")
    if n * _BOX.size != len(r.data) - r.pos:
        if n * _BOX.size > len(r.data) - r.pos:
            raise TruncationError(f"{n} box records exceed the remaining stream", r.pos)
        raise StructureError("trailing bytes after box records")
    boxes = []
    for _ in range(n):
        at = r.pos
        x, y, z, bl, bw, bh, heading, conf, cls = r.unpack(_BOX, "box record")
        try:
            boxes.append(AgentQuery(np.zeros(0), (x, y, z), heading, (0.0, 0.0), 0, conf / 65535.0,
                                    (bl, bw, bh), _enum(AgentClass, cls, at), t))
        except StructureError:
            raise
        except ValueError as exc:
            raise StructureError(f"box record at offset {at}: {exc}") from None
    return V2XPayload(sender, t, pose, tuple(boxes))


# ---------------------------------------------------------------------------
# Budget fitting and corruption
# ---------------------------------------------------------------------------

def _by_confidence(items) -> list[int]:
    return sorted(range(len(items)), key=lambda i: (-items[i].confidence, i))


def sparse_cell_ranking(occ: OccupancyMessage) -> np.ndarray:
    """Candidate cells for sparse transmission, best first (p0 desc, index asc)."""
    p0 = occ.p0.reshape(-1)
    p1 = occ.p1.reshape(-1)
    if occ.cells is not None:
        cand = np.sort(occ.cells)
    else:
        cand = np.flatnonzero((p0 > 0.0) | (p1 != 0.0))
    order = np.lexsort((cand, -p0[cand]))
    return cand[order]


def sparsify(occ: OccupancyMessage, cells: np.ndarray) -> OccupancyMessage:
    cells = np.asarray(cells, dtype=np.int64)
    p0 = np.zeros(occ.p0.size)
    p1 = np.zeros(occ.p1.size)
    p0[cells] = occ.p0.reshape(-1)[cells]
    p1[cells] = occ.p1.reshape(-1)[cells]
    shape = occ.grid.shape
    return OccupancyMessage(p0.reshape(shape), p1.reshape(shape), occ.grid, occ.timestamp, cells)


def fit_to_budget(payload: V2XPayload, budget_bytes: float | None, boxes_only: bool = False) -> V2XPayload:
    """Keep the longest priority prefix whose cost fits ``budget_bytes``.

    Priority: agent queries by confidence, then lane queries by confidence,
    then occupancy (dense if it fits, else the best-ranked sparse cells).
    The first item that does not fit ends the prefix, which makes retained
    sets nested across budgets.
    """
    if budget_bytes is None:
        return payload
    if budget_bytes < 0:
        raise ValueError("budget must be >= 0")
    full = (box_cost if boxes_only else cost)(payload).total_body_bytes
    if full <= budget_bytes:
        return payload

    remaining = float(budget_bytes)
    agents = payload.agent_queries
    kept_agents: set[int] = set()
    blocked = False
    for i in _by_confidence(agents):
        if boxes_only:
            c = BOX_RECORD_BYTES + (BOX_COUNT_BYTES if not kept_agents else 0)
        else:
            c = agent_cost(agents[i].feature.shape[0])
        if c > remaining:
            blocked = True
            break
        kept_agents.add(i)
        remaining -= c
    out_agents = tuple(q for i, q in enumerate(agents) if i in kept_agents)
    if boxes_only:
        return V2XPayload(payload.sender_id, payload.timestamp, payload.world_from_sensor, out_agents)

    lanes = payload.lane_queries
    kept_lanes: set[int] = set()
    if not blocked:
        for i in _by_confidence(lanes):
            c = lane_cost(lanes[i].points.shape[0], lanes[i].feature.shape[0])
            if c > remaining:
                blocked = True
                break
            kept_lanes.add(i)
            remaining -= c
    out_lanes = tuple(q for i, q in enumerate(lanes) if i in kept_lanes)

    occ = payload.occupancy
    out_occ = None
    if not blocked and occ is not None:
        if occ.cells is None and dense_occupancy_cost(occ.grid) <= remaining:
            out_occ = occ
        else:
            k = int((remaining - OCC_OVERHEAD_BYTES - SPARSE_COUNT_BYTES) // SPARSE_CELL_BYTES)
            ranked = sparse_cell_ranking(occ)
            if k > 0 and ranked.size:
                out_occ = sparsify(occ, np.sort(ranked[:k]))
    return V2XPayload(payload.sender_id, payload.timestamp, payload.world_from_sensor,
                      out_agents, out_lanes, out_occ)


def corrupt(payload: V2XPayload, drop_fraction: float, rng: np.random.Generator) -> V2XPayload:
    """Drop ``floor(drop_fraction * N)`` agent queries chosen uniformly at random.

    The permutation is always drawn, so for one stream the dropped sets are
    nested as the fraction grows.
    """
    if not 0.0 <= drop_fraction <= 1.0:
        raise ValueError("drop_fraction must lie in [0, 1]")
    n = len(payload.agent_queries)
    perm = rng.permutation(n)
    n_drop = int(math.floor(drop_fraction * n + 1e-9))
    if n_drop == 0:
        return payload
    dropped = set(perm[:n_drop].tolist())
    kept = tuple(q for i, q in enumerate(payload.agent_queries) if i not in dropped)
    return replace(payload, agent_queries=kept)


# ---------------------------------------------------------------------------
# Link
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelConfig:
    latency: float = 0.0
    bandwidth_budget: float | None = None
    drop_fraction: float = 0.0
    frequency_hz: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.latency < 0:
            raise ValueError("latency must be >= 0")
        if not 0.0 <= self.drop_fraction <= 1.0:
            raise ValueError("drop_fraction must lie in [0, 1]")
        if not self.frequency_hz > 0:
            raise ValueError("frequency_hz must be positive")
        if self.bandwidth_budget is not None and self.bandwidth_budget < 0:
            raise ValueError("bandwidth_budget must be >= 0")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown channel keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Delivery:
    payload: V2XPayload
    send_time: float
    cost: CostReport
    wire_bytes: int


class Channel:
    """Single-owner FIFO link: budget, corruption and encoding at submit time."""

    def __init__(self, config: ChannelConfig, boxes_only: bool = False,
                 feature_dim: int = DEFAULT_FEATURE_DIM):
        self.config = config
        self.boxes_only = boxes_only
        self.feature_dim = feature_dim
        self._queue: deque = deque()
        self._last_send = -math.inf
        self._submitted = 0

    def submit(self, payload: V2XPayload, send_time: float, tick: int | None = None) -> None:
        if send_time < self._last_send:
            raise ValueError("send times must be non-decreasing")
        self._last_send = send_time
        tick = self._submitted if tick is None else tick
        self._submitted += 1
        cfg = self.config
        if self.boxes_only:
            payload = box_payload(payload)
        payload = fit_to_budget(payload, cfg.bandwidth_budget, self.boxes_only)
        payload = corrupt(payload, cfg.drop_fraction, rng_stream(cfg.seed, STREAM_CORRUPTION, tick))
        if self.boxes_only:
            data, report = encode_boxes(payload), box_cost(payload, cfg.frequency_hz)
        else:
            data, report = encode(payload), cost(payload, cfg.frequency_hz)
        self._queue.append((send_time + cfg.latency, send_time, data, report))

    def poll(self, now: float) -> list[Delivery]:
        out = []
        while self._queue and now >= self._queue[0][0] - 1e-9:
            _, sent, data, report = self._queue.popleft()
            payload = decode_boxes(data) if self.boxes_only else decode(data, self.feature_dim)
            out.append(Delivery(payload, sent, report, len(data)))
        return out

    def __len__(self) -> int:
        return len(self._queue)


__all__ = [
    "BOX_RECORD_BYTES", "Channel", "ChannelConfig", "CodecError", "CostReport", "Delivery",
    "FormatError", "MAGIC", "StructureError", "TruncationError", "agent_cost", "box_cost",
    "box_payload", "corrupt", "cost", "decode", "decode_boxes", "dense_occupancy_cost",
    "dense_tensor_cost", "encode", "encode_boxes", "fit_to_budget", "lane_cost",
    "occupancy_cost", "sparse_cell_ranking", "sparse_occupancy_cost", "sparsify",
]
