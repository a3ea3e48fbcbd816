"""Deterministic synthetic intersections and per-view oracle perception.

The oracle stands in for camera perception on both sides: it reads ground
truth agents, applies seeded detection noise, and emits the same records a
learned tracker, mapper and occupancy head would.
"""

from __future__ import annotations

import base64
import enum
import json
import math
from dataclasses import dataclass, fields, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import kernels
from .core import (
    DEFAULT_FEATURE_DIM,
    AgentClass,
    AgentQuery,
    GridSpec,
    LaneClass,
    LaneQuery,
    OccupancyMessage,
    Pose,
    compose,
    ego_grid,
    infra_grid,
    invert,
    rotate_pairs,
    transform_point,
    transform_xy,
    wrap_angle,
)

# Track-id namespace width per view; view v owns [v * ID_STRIDE, (v + 1) * ID_STRIDE).
ID_STRIDE = 1_000_000
EGO_VIEW = 0
INFRA_VIEW = 1
EGO_AGENT_ID = 0

# RNG stream purposes (first tag after the seed)
STREAM_WORLD = 0
STREAM_PERCEPTION = 1
STREAM_CORRUPTION = 2

BOX_SIZES = {
    AgentClass.CAR: (4.5, 1.9, 1.6),
    AgentClass.BICYCLE: (1.8, 0.6, 1.5),
    AgentClass.PEDESTRIAN: (0.7, 0.7, 1.75),
    AgentClass.TRAFFIC_CONE: (0.4, 0.4, 0.8),
}
EGO_BOX = (4.6, 1.8, 1.6)

ROAD_HALF_WIDTH = 7.0
LANE_WIDTH = 3.5
CROSSWALK_OFFSET = 9.0
WORLD_GRID = GridSpec(400, 400, 0.5, -100.0, -100.0)


def rng_stream(seed: int, *tags: int) -> np.random.Generator:
    """Counter-based stream keyed by ``(seed, *tags)``; independent of call order."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, tags)])))


class Layout(str, enum.Enum):
    CROSS = "cross_intersection"
    T = "t_intersection"


class EgoCommand(str, enum.Enum):
    """Scripted ego behaviour through the intersection."""

    TURN_LEFT = "TurnLeft"
    KEEP_FORWARD = "KeepForward"
    TURN_RIGHT = "TurnRight"


# ---------------------------------------------------------------------------
# World state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AgentState:
    id: int
    position: tuple[float, float]
    heading: float
    speed: float
    turn_rate: float
    box_size: tuple[float, float, float]
    cls: AgentClass

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError(f"agent {self.id}: negative speed {self.speed}")
        if min(self.box_size) <= 0:
            raise ValueError(f"agent {self.id}: non-positive box {self.box_size}")

    def to_dict(self) -> dict:
        return {"id": self.id, "position": list(self.position), "heading": self.heading,
                "speed": self.speed, "turn_rate": self.turn_rate,
                "box_size": list(self.box_size), "class": self.cls.name.lower()}

    @classmethod
    def from_dict(cls, d: dict) -> "AgentState":
        return cls(int(d["id"]), (float(d["position"][0]), float(d["position"][1])),
                   float(d["heading"]), float(d["speed"]), float(d["turn_rate"]),
                   tuple(float(v) for v in d["box_size"]), AgentClass[d["class"].upper()])


def advance(state: AgentState, dt: float) -> AgentState:
    """Unicycle step: turn first, then move along the updated heading."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    heading = state.heading + state.turn_rate * dt
    x = state.position[0] + state.speed * dt * math.cos(heading)
    y = state.position[1] + state.speed * dt * math.sin(heading)
    return replace(state, position=(x, y), heading=heading)


@dataclass(frozen=True, eq=False)
class LanePolyline:
    points: np.ndarray
    cls: LaneClass

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 2)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "cls", LaneClass(self.cls))


@dataclass(frozen=True, eq=False)
class GridMask:
    """Boolean raster attached to a grid (drivable area, ground truth masks)."""

    cells: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        c = np.array(self.cells, dtype=np.bool_)
        if c.shape != self.grid.shape:
            raise ValueError(f"mask shape {c.shape} does not match grid {self.grid.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "cells", c)


@dataclass(frozen=True, eq=False)
class WorldFrame:
    time: float
    agents: tuple[AgentState, ...]
    ego: AgentState
    ego_pose: Pose
    lanes: tuple[LanePolyline, ...]
    drivable_mask: GridMask


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    duration: float = 10.0
    dt: float = 0.5
    n_agents: int = 12
    layout: Layout = Layout.CROSS
    ego_command: EgoCommand = EgoCommand.KEEP_FORWARD
    ego_speed: float = 7.0
    occluded_crossing: bool = False
    turn_rate_sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "layout", Layout(self.layout))
        object.__setattr__(self, "ego_command", EgoCommand(self.ego_command))
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.duration < self.dt:
            raise ValueError(f"duration {self.duration} shorter than dt {self.dt}")
        if self.n_agents < 0:
            raise ValueError("n_agents must be >= 0")
        if self.ego_speed < 0:
            raise ValueError("ego_speed must be >= 0")
        if self.layout is Layout.T and self.ego_command is EgoCommand.TURN_LEFT:
            raise ValueError("t_intersection has no northern arm for a left turn")

    @property
    def n_frames(self) -> int:
        return int(math.floor(self.duration / self.dt + 1e-9)) + 1

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["layout"] = self.layout.value
        d["ego_command"] = self.ego_command.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Scenario:
    config: ScenarioConfig
    frames: tuple[WorldFrame, ...]
    lanes: tuple[LanePolyline, ...]
    drivable: GridMask


# ---------------------------------------------------------------------------
# Map
# ---------------------------------------------------------------------------

def _line(p0, p1, spacing: float) -> np.ndarray:
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    n = max(int(math.ceil(np.linalg.norm(p1 - p0) / spacing)), 1) + 1
    return np.linspace(p0, p1, n)


def build_map(layout: Layout) -> tuple[tuple[LanePolyline, ...], GridMask]:
    hw = ROAD_HALF_WIDTH
    offsets = (-hw, -LANE_WIDTH, 0.0, LANE_WIDTH, hw)
    far = 100.0
    lanes: list[LanePolyline] = []
    # horizontal arms
    for off in offsets:
        lanes.append(LanePolyline(_line((-far, off), (-hw, off), 5.0), LaneClass.LANE))
        lanes.append(LanePolyline(_line((hw, off), (far, off), 5.0), LaneClass.LANE))
    arms = [(0.0, -1.0), (-1.0, 0.0), (1.0, 0.0)]
    if layout is Layout.CROSS:
        arms.append((0.0, 1.0))
    # vertical arms
    for sx, sy in arms:
        if sx != 0.0:
            continue
        for off in offsets:
            a, b = (off, sy * hw), (off, sy * far)
            lanes.append(LanePolyline(_line(a, b, 5.0), LaneClass.LANE))
    if layout is Layout.T:
        # continuous northern road edge across the junction
        lanes.append(LanePolyline(_line((-hw, hw), (hw, hw), 5.0), LaneClass.LANE))
    # crosswalks, one per arm
    c = CROSSWALK_OFFSET
    for sx, sy in arms:
        if sx == 0.0:
            lanes.append(LanePolyline(_line((-hw, sy * c), (hw, sy * c), 1.75), LaneClass.CROSSWALK))
        else:
            lanes.append(LanePolyline(_line((sx * c, -hw), (sx * c, hw), 1.75), LaneClass.CROSSWALK))

    xs, ys = WORLD_GRID.cell_centers()
    drivable = np.abs(ys) <= hw
    if layout is Layout.CROSS:
        drivable |= np.abs(xs) <= hw
    else:
        drivable |= (np.abs(xs) <= hw) & (ys <= 0.0)
    return tuple(lanes), GridMask(drivable, WORLD_GRID)


# ---------------------------------------------------------------------------
# Ego script
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _EgoPath:
    x_start: float
    lane_y: float
    command: EgoCommand
    speed: float
    x_turn: float = -ROAD_HALF_WIDTH

    @property
    def radius(self) -> float:
        if self.command is EgoCommand.TURN_LEFT:
            return LANE_WIDTH / 2 - self.x_turn
        return -LANE_WIDTH / 2 - self.x_turn

    def state(self, t: float) -> tuple[float, float, float, float]:
        """``(x, y, heading, turn_rate)`` at time ``t``."""
        s = self.speed * t
        s_turn = self.x_turn - self.x_start
        if self.command is EgoCommand.KEEP_FORWARD or s <= s_turn:
            return self.x_start + s, self.lane_y, 0.0, 0.0
        r = self.radius
        sign = 1.0 if self.command is EgoCommand.TURN_LEFT else -1.0
        arc_len = r * math.pi / 2
        d = s - s_turn
        if d <= arc_len:
            phi = d / r
            x = self.x_turn + r * math.sin(phi)
            y = self.lane_y + sign * r * (1.0 - math.cos(phi))
            return x, y, sign * phi, sign * self.speed / r
        x = self.x_turn + r
        y = self.lane_y + sign * (r + (d - arc_len))
        return x, y, sign * math.pi / 2, 0.0


def _make_ego_path(config: ScenarioConfig, rng: np.random.Generator) -> _EgoPath:
    x_start = -35.0 + rng.uniform(-5.0, 5.0)
    lane_y = -1.5 * LANE_WIDTH if config.ego_command is EgoCommand.TURN_RIGHT else -0.5 * LANE_WIDTH
    return _EgoPath(x_start, lane_y, config.ego_command, config.ego_speed)


# ---------------------------------------------------------------------------
# Agent spawning
# ---------------------------------------------------------------------------

def _lane_centers(layout: Layout):
    """``(fixed_coord, axis, heading, outer)`` for each travel lane."""
    h = LANE_WIDTH
    out = [
        (-0.5 * h, "x", 0.0, False), (-1.5 * h, "x", 0.0, True),
        (0.5 * h, "x", math.pi, False), (1.5 * h, "x", math.pi, True),
        (0.5 * h, "y", math.pi / 2, False), (1.5 * h, "y", math.pi / 2, True),
    ]
    if layout is Layout.CROSS:
        out += [(-0.5 * h, "y", -math.pi / 2, False), (-1.5 * h, "y", -math.pi / 2, True)]
    return out


def _spawn_agents(config: ScenarioConfig, rng: np.random.Generator, ego_xy) -> list[AgentState]:
    lanes = _lane_centers(config.layout)
    agents: list[AgentState] = []
    classes = [AgentClass.CAR, AgentClass.BICYCLE, AgentClass.PEDESTRIAN, AgentClass.TRAFFIC_CONE]
    for agent_id in range(1, config.n_agents + 1):
        cls = classes[int(rng.choice(4, p=[0.7, 0.1, 0.1, 0.1]))]
        box = BOX_SIZES[cls]
        for _attempt in range(30):
            turn_rate = 0.0
            if cls is AgentClass.PEDESTRIAN:
                arm = int(rng.integers(0, 4 if config.layout is Layout.CROSS else 3))
                along = rng.uniform(-ROAD_HALF_WIDTH, ROAD_HALF_WIDTH)
                direction = 1.0 if rng.random() < 0.5 else -1.0
                speed = rng.uniform(1.0, 1.6)
                c = CROSSWALK_OFFSET
                # arms: west, east, south, north
                pos, heading = [
                    ((-c, along), direction * math.pi / 2),
                    ((c, along), direction * math.pi / 2),
                    ((along, -c), 0.0 if direction > 0 else math.pi),
                    ((along, c), 0.0 if direction > 0 else math.pi),
                ][arm]
            elif cls is AgentClass.TRAFFIC_CONE:
                side = 1.0 if rng.random() < 0.5 else -1.0
                s = rng.uniform(12.0, 60.0) * (1.0 if rng.random() < 0.5 else -1.0)
                pos, heading, speed = (s, side * 6.3), 0.0, 0.0
            else:
                fixed, axis, heading, outer = lanes[int(rng.integers(0, len(lanes)))]
                if cls is AgentClass.BICYCLE and not outer:
                    fixed = math.copysign(1.5 * LANE_WIDTH, fixed)
                lo, hi = (-90.0, 90.0)
                if axis == "y" and config.layout is Layout.T:
                    hi = -12.0
                s = rng.uniform(lo, hi)
                pos = (s, fixed) if axis == "x" else (fixed, s)
                speed = rng.uniform(4.0, 9.0) if cls is AgentClass.CAR else rng.uniform(3.0, 5.0)
                if config.turn_rate_sigma > 0:
                    turn_rate = float(rng.normal(0.0, config.turn_rate_sigma))
            if math.hypot(pos[0] - ego_xy[0], pos[1] - ego_xy[1]) < 12.0:
                continue
            if any(math.hypot(pos[0] - a.position[0], pos[1] - a.position[1]) < 6.0 for a in agents):
                continue
            agents.append(AgentState(agent_id, (float(pos[0]), float(pos[1])), float(heading),
                                     float(speed), turn_rate, box, cls))
            break
    return agents


def _crossing_agent(agent_id: int, path: _EgoPath, rng: np.random.Generator) -> AgentState:
    """A car on a collision course with the scripted ego, arriving at t*."""
    t_star = rng.uniform(3.5, 5.5)
    speed = rng.uniform(6.0, 9.0)
    ex, ey, eh, _ = path.state(t_star)
    heading = eh + math.pi / 2
    x = ex - speed * t_star * math.cos(heading)
    y = ey - speed * t_star * math.sin(heading)
    return AgentState(agent_id, (x, y), heading, speed, 0.0, BOX_SIZES[AgentClass.CAR], AgentClass.CAR)


def generate_scenario(config: ScenarioConfig) -> Scenario:
    rng = rng_stream(config.seed, STREAM_WORLD)
    lanes, drivable = build_map(config.layout)
    path = _make_ego_path(config, rng)
    x0, y0, _, _ = path.state(0.0)
    agents = _spawn_agents(config, rng, (x0, y0))
    if config.occluded_crossing:
        agents.append(_crossing_agent(config.n_agents + 1, path, rng))

    frames = []
    for k in range(config.n_frames):
        t = k * config.dt
        ex, ey, eh, ew = path.state(t)
        ego = AgentState(EGO_AGENT_ID, (ex, ey), eh, config.ego_speed, ew, EGO_BOX, AgentClass.CAR)
        frames.append(WorldFrame(t, tuple(agents), ego, Pose.from_yaw(eh, (ex, ey, 0.0)),
                                 lanes, drivable))
        agents = [advance(a, config.dt) for a in agents]
    return Scenario(config, tuple(frames), lanes, drivable)


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------

def agent_boxes(agents, frame_from_world: Pose) -> np.ndarray:
    """``(n, 5)`` BEV boxes ``(cx, cy, yaw, l, w)`` expressed in another frame."""
    if not agents:
        return np.zeros((0, 5))
    xy = transform_xy(frame_from_world, np.array([a.position for a in agents]))
    yaw = frame_from_world.yaw
    out = np.empty((len(agents), 5))
    out[:, :2] = xy
    out[:, 2] = [a.heading + yaw for a in agents]
    out[:, 3] = [a.box_size[0] for a in agents]
    out[:, 4] = [a.box_size[1] for a in agents]
    return out


def rasterize_agents(frame: WorldFrame, grid: GridSpec, frame_pose: Pose) -> np.ndarray:
    """Ground-truth occupancy: cells whose centers fall inside any non-ego footprint.

    ``frame_pose`` is world_from_grid-frame.
    """
    boxes = agent_boxes(frame.agents, invert(frame_pose))
    return kernels.rasterize_boxes(boxes, grid.origin, grid.resolution, grid.shape)


def blur_probability(raster: np.ndarray) -> np.ndarray:
    """3x3 kernel (1 at center, 0.25 on the ring), clamped to [0, 1]."""
    src = raster.astype(np.float64)
    padded = np.pad(src, 1)
    h, w = src.shape
    ring = np.zeros_like(src)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            ring += padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
    return np.clip(src + 0.25 * ring, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Embeddings
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _base_vector(key: int, dim: int) -> np.ndarray:
    v = np.random.default_rng(1000 + key).normal(size=dim)
    v /= np.linalg.norm(v)
    v.setflags(write=False)
    return v


def deterministic_embedding(cls, box_size, heading: float, dim: int = DEFAULT_FEATURE_DIM) -> np.ndarray:
    """Unit-norm class vector with every feature pair rotated by ``heading``.

    Rotating the pairs makes a frame change act on the feature exactly like
    it acts on the heading.  The base vector depends on the class only;
    ``box_size`` is carried for interface parity with learned encoders.
    """
    del box_size
    if dim % 2:
        raise ValueError("feature dimension must be even")
    return rotate_pairs(_base_vector(int(cls), dim), heading)


def lane_embedding(cls: LaneClass, points: np.ndarray, dim: int = DEFAULT_FEATURE_DIM) -> np.ndarray:
    d = points[-1] - points[0]
    return rotate_pairs(_base_vector(100 + int(cls), dim), math.atan2(d[1], d[0]))


# ---------------------------------------------------------------------------
# Sensors and perception
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SensorSpec:
    """A camera-equivalent oracle sensor.

    For ``on_ego`` sensors ``mount_pose`` is ego_from_sensor; otherwise it is
    world_from_sensor.  ``grid`` is the BEV grid of this view in sensor frame.
    """

    mount_pose: Pose
    fov_rect: tuple[float, float, float, float]
    grid: GridSpec
    view: int
    on_ego: bool = False
    pos_noise_sigma: float = 0.15
    heading_noise_sigma: float = 0.02
    miss_prob: float = 0.1
    false_pos_rate: float = 0.3
    conf_base: float = 0.95
    conf_decay: float = 0.005
    feature_dim: int = DEFAULT_FEATURE_DIM

    def __post_init__(self):
        x0, x1, y0, y1 = self.fov_rect
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"fov extents must be ordered, got {self.fov_rect}")
        if self.pos_noise_sigma < 0 or self.heading_noise_sigma < 0:
            raise ValueError("noise sigmas must be >= 0")
        if not 0.0 <= self.miss_prob <= 1.0:
            raise ValueError("miss_prob must lie in [0, 1]")

    def world_from_sensor(self, frame: WorldFrame) -> Pose:
        return compose(frame.ego_pose, self.mount_pose) if self.on_ego else self.mount_pose

    def in_fov(self, x: float, y: float) -> bool:
        x0, x1, y0, y1 = self.fov_rect
        return x0 <= x <= x1 and y0 <= y <= y1

    def noise_params(self) -> dict:
        return {"pos_noise_sigma": self.pos_noise_sigma,
                "heading_noise_sigma": self.heading_noise_sigma, "miss_prob": self.miss_prob,
                "false_pos_rate": self.false_pos_rate, "conf_base": self.conf_base,
                "conf_decay": self.conf_decay}


INFRA_MOUNT = Pose.from_yaw(math.pi / 4, (-30.0, -30.0, 0.0))


def ego_sensor(**overrides) -> SensorSpec:
    """Forward-facing ego camera: 45 m ahead, +-15 m laterally."""
    kw = dict(mount_pose=Pose.identity(), fov_rect=(0.0, 45.0, -15.0, 15.0), grid=ego_grid(),
              view=EGO_VIEW, on_ego=True)
    kw.update(overrides)
    return SensorSpec(**kw)


def infra_sensor(**overrides) -> SensorSpec:
    """Roadside camera on the south-west corner looking across the junction."""
    kw = dict(mount_pose=INFRA_MOUNT, fov_rect=(0.0, 100.0, -50.0, 50.0), grid=infra_grid(),
              view=INFRA_VIEW, pos_noise_sigma=0.2, heading_noise_sigma=0.03,
              false_pos_rate=0.5)
    kw.update(overrides)
    return SensorSpec(**kw)


@dataclass(frozen=True, eq=False)
class PerceivedFrame:
    agent_queries: tuple[AgentQuery, ...]
    lane_queries: tuple[LaneQuery, ...]
    occupancy: OccupancyMessage
    timestamp: float
    view: int = EGO_VIEW

    def __eq__(self, other):
        if not isinstance(other, PerceivedFrame):
            return NotImplemented
        return (self.timestamp == other.timestamp and self.view == other.view
                and list(self.agent_queries) == list(other.agent_queries)
                and list(self.lane_queries) == list(other.lane_queries)
                and self.occupancy == other.occupancy)

    __hash__ = None


def _clip_segment(p, q, rect):
    """Liang-Barsky clip of segment p->q; returns (t0, t1) or None."""
    x0, x1, y0, y1 = rect
    dx, dy = q[0] - p[0], q[1] - p[1]
    t0, t1 = 0.0, 1.0
    for pk, qk in ((-dx, p[0] - x0), (dx, x1 - p[0]), (-dy, p[1] - y0), (dy, y1 - p[1])):
        if pk == 0.0:
            if qk < 0.0:
                return None
            continue
        r = qk / pk
        if pk < 0.0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
        if t0 > t1:
            return None
    return t0, t1


def clip_polyline(points: np.ndarray, rect) -> list[np.ndarray]:
    """Pieces of a polyline inside an axis-aligned rectangle (each >= 2 points)."""
    x0, x1, y0, y1 = rect
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    if lo[0] >= x0 and hi[0] <= x1 and lo[1] >= y0 and hi[1] <= y1:
        return [np.array(points, dtype=np.float64)]
    if hi[0] < x0 or lo[0] > x1 or hi[1] < y0 or lo[1] > y1:
        return []
    pieces: list[list[np.ndarray]] = []
    current: list[np.ndarray] = []
    for i in range(len(points) - 1):
        p, q = points[i], points[i + 1]
        clip = _clip_segment(p, q, rect)
        if clip is None:
            if len(current) >= 2:
                pieces.append(current)
            current = []
            continue
        t0, t1 = clip
        a = p + t0 * (q - p)
        b = p + t1 * (q - p)
        if current and (t0 > 0.0 or not np.array_equal(current[-1], a)):
            if len(current) >= 2:
                pieces.append(current)
            current = []
        if not current:
            current = [a]
        if not np.array_equal(current[-1], b):
            current.append(b)
        if t1 < 1.0:
            if len(current) >= 2:
                pieces.append(current)
            current = []
    if len(current) >= 2:
        pieces.append(current)
    return [np.array(piece) for piece in pieces]


def perceive(frame: WorldFrame, sensor: SensorSpec, rng: np.random.Generator) -> PerceivedFrame:
    """Oracle detection, mapping and occupancy for one sensor at one frame."""
    world_from_sensor = sensor.world_from_sensor(frame)
    sensor_from_world = invert(world_from_sensor)
    sensor_yaw = world_from_sensor.yaw
    t = frame.time
    prefix = sensor.view * ID_STRIDE
    dim = sensor.feature_dim

    targets = list(frame.agents)
    if not sensor.on_ego:
        targets.append(frame.ego)
    targets.sort(key=lambda a: a.id)

    queries: list[AgentQuery] = []
    for agent in targets:
        p = transform_point(sensor_from_world, (agent.position[0], agent.position[1], 0.0))
        if not sensor.in_fov(p[0], p[1]):
            continue
        u = rng.random()
        noise = rng.normal(size=3)
        if u < sensor.miss_prob:
            continue
        x = p[0] + sensor.pos_noise_sigma * noise[0]
        y = p[1] + sensor.pos_noise_sigma * noise[1]
        if not sensor.in_fov(x, y):
            continue
        heading = wrap_angle(agent.heading - sensor_yaw + sensor.heading_noise_sigma * noise[2])
        conf = min(max(sensor.conf_base - sensor.conf_decay * math.hypot(x, y), 0.0), 1.0)
        queries.append(AgentQuery(
            feature=deterministic_embedding(agent.cls, agent.box_size, heading, dim),
            ref_point=(x, y, p[2]),
            heading=heading,
            velocity=(agent.speed * math.cos(heading), agent.speed * math.sin(heading)),
            track_id=prefix + agent.id,
            confidence=conf,
            box_size=agent.box_size,
            cls=agent.cls,
            timestamp=t,
            flow_ref=(0.0, 0.0),
        ))

    n_fp = min(int(rng.poisson(sensor.false_pos_rate)), 19)
    x0, x1, y0, y1 = sensor.fov_rect
    tick = int(round(t * 10))
    for j in range(n_fp):
        cls = AgentClass(int(rng.integers(0, 4)))
        heading = rng.uniform(-math.pi, math.pi)
        queries.append(AgentQuery(
            feature=deterministic_embedding(cls, BOX_SIZES[cls], heading, dim),
            ref_point=(rng.uniform(x0, x1), rng.uniform(y0, y1), 0.0),
            heading=heading,
            velocity=(0.0, 0.0),
            track_id=-(prefix + (tick % 40_000) * 20 + j + 1),
            confidence=rng.uniform(0.05, 0.4),
            box_size=BOX_SIZES[cls],
            cls=cls,
            timestamp=t,
        ))

    lane_queries: list[LaneQuery] = []
    for lane in frame.lanes:
        local = transform_xy(sensor_from_world, lane.points)
        for piece in clip_polyline(local, sensor.fov_rect):
            lane_queries.append(LaneQuery(lane_embedding(lane.cls, piece, dim), piece, lane.cls,
                                          1.0, t))

    grid = sensor.grid
    if queries:
        boxes = np.array([q.bev_box() for q in queries])
        raster = kernels.rasterize_boxes(boxes, grid.origin, grid.resolution, grid.shape)
    else:
        raster = grid.zeros(dtype=np.bool_)
    occupancy = OccupancyMessage(blur_probability(raster), grid.zeros(), grid, t)
    return PerceivedFrame(tuple(queries), tuple(lane_queries), occupancy, t, sensor.view)


# ---------------------------------------------------------------------------
# Scenario files
# ---------------------------------------------------------------------------

def scenario_to_dict(scenario: Scenario) -> dict:
    d = scenario.drivable
    return {
        "config": scenario.config.to_dict(),
        "map": {
            "lanes": [{"class": lane.cls.name.lower(), "points": lane.points.tolist()}
                      for lane in scenario.lanes],
            "drivable": {"grid": d.grid.to_dict(),
                         "bits": base64.b64encode(np.packbits(d.cells).tobytes()).decode("ascii")},
        },
        "frames": [
            {"time": f.time, "ego": f.ego.to_dict(), "ego_pose": f.ego_pose.to_dict(),
             "agents": [a.to_dict() for a in f.agents]}
            for f in scenario.frames
        ],
    }


def scenario_from_dict(doc: dict) -> Scenario:
    config = ScenarioConfig.from_dict(doc["config"])
    lanes = tuple(LanePolyline(np.array(l["points"], dtype=np.float64), LaneClass[l["class"].upper()])
                  for l in doc["map"]["lanes"])
    grid = GridSpec.from_dict(doc["map"]["drivable"]["grid"])
    bits = np.frombuffer(base64.b64decode(doc["map"]["drivable"]["bits"]), dtype=np.uint8)
    cells = np.unpackbits(bits)[: grid.width * grid.height].astype(bool).reshape(grid.shape)
    drivable = GridMask(cells, grid)
    frames = tuple(
        WorldFrame(float(f["time"]), tuple(AgentState.from_dict(a) for a in f["agents"]),
                   AgentState.from_dict(f["ego"]), Pose.from_dict(f["ego_pose"]), lanes, drivable)
        for f in doc["frames"]
    )
    return Scenario(config, frames, lanes, drivable)


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), sort_keys=True))


def load_scenario(path) -> Scenario:
    return scenario_from_dict(json.loads(Path(path).read_text()))


__all__ = [
    "AgentState", "EgoCommand", "GridMask", "LanePolyline", "Layout", "PerceivedFrame", "Scenario",
    "ScenarioConfig", "SensorSpec", "WorldFrame", "advance", "agent_boxes", "blur_probability",
    "build_map", "clip_polyline", "deterministic_embedding", "ego_sensor", "generate_scenario",
    "infra_sensor", "lane_embedding", "load_scenario", "perceive", "rasterize_agents",
    "rng_stream", "save_scenario",
]
