"""Command-conditioned trajectory selection over a fused scene."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields

import numpy as np

from . import kernels
from .core import GridSpec, OccupiedMask

SPEED_FACTORS = (1.0, 0.8, 1.2, 0.6)
FORWARD_CURVATURES = (0.0, -0.01, 0.01, -0.02, 0.02)
TURN_CURVATURE_RANGE = (0.03, 0.2)


class Command(str, enum.Enum):
    TURN_LEFT = "TurnLeft"
    KEEP_FORWARD = "KeepForward"
    TURN_RIGHT = "TurnRight"


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Waypoints ``(t, x, y)`` at a fixed step, starting at the ego origin."""

    times: np.ndarray
    xy: np.ndarray
    headings: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=np.float64)
        xy = np.array(self.xy, dtype=np.float64).reshape(-1, 2)
        hd = np.array(self.headings, dtype=np.float64)
        if t.shape[0] != xy.shape[0] or hd.shape[0] != t.shape[0] or t.shape[0] < 2:
            raise ValueError("times, xy and headings must align and hold >= 2 waypoints")
        steps = np.diff(t)
        if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=0, atol=1e-9):
            raise ValueError("waypoint times must increase with a constant step")
        for a in (t, xy, hd):
            a.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "headings", hd)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def waypoints(self) -> list[tuple[float, float, float]]:
        return [(float(t), float(x), float(y)) for t, (x, y) in zip(self.times, self.xy)]

    def index_at(self, t: float) -> int:
        k = int(round((t - self.times[0]) / self.dt))
        if k < 0 or k >= len(self.times) or abs(self.times[k] - t) > 1e-9:
            raise ValueError(f"no waypoint at t={t} (horizon {self.times[-1]})")
        return k

    def at(self, t: float) -> np.ndarray:
        return self.xy[self.index_at(t)]

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (np.array_equal(self.times, other.times) and np.array_equal(self.xy, other.xy)
                and np.array_equal(self.headings, other.headings))

    __hash__ = None


@dataclass(frozen=True)
class PlannerConfig:
    horizon: float = 4.5
    dt: float = 0.5
    n_per_command: int = 5
    w_col: float = 1000.0
    w_road: float = 10.0
    w_smooth: float = 1.0
    snap_radius: float = 1.0
    ego_length: float = 4.6
    ego_width: float = 1.8
    max_ego_speed: float = 10.0

    def __post_init__(self):
        if not (self.dt > 0 and self.horizon >= self.dt):
            raise ValueError("need 0 < dt <= horizon")
        if self.n_per_command < 1:
            raise ValueError("n_per_command must be >= 1")
        check_safety_bound(self)

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.horizon / self.dt + 1e-9))

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "PlannerConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown planner keys: {sorted(unknown)}")
        return cls(**d)


def curvatures(command: Command, n: int) -> list[float]:
    command = Command(command)
    if command is Command.KEEP_FORWARD:
        base = list(FORWARD_CURVATURES)
        return base[:n] if n <= len(base) else list(np.linspace(-0.02, 0.02, n))
    left = [float(k) for k in np.linspace(*TURN_CURVATURE_RANGE, n)]
    return left if command is Command.TURN_LEFT else [-k for k in left]


def arc(speed: float, kappa: float, n_steps: int, dt: float) -> Trajectory:
    """Constant-speed, constant-curvature path from the origin heading +x."""
    t = np.arange(n_steps + 1) * dt
    s = speed * t
    if kappa == 0.0:
        xy = np.stack([s, np.zeros_like(s)], axis=1)
        heading = np.zeros_like(s)
    else:
        heading = kappa * s
        xy = np.stack([np.sin(heading) / kappa, (1.0 - np.cos(heading)) / kappa], axis=1)
    return Trajectory(t, xy, heading)


def generate_candidates(ego_speed: float, command: Command, n_per_command: int = 5,
                        horizon: float = 4.5, dt: float = 0.5) -> list[Trajectory]:
    """Curvature-major grid of arcs; speeds in order 1.0, 0.8, 1.2, 0.6 of ``ego_speed``."""
    n_steps = int(math.floor(horizon / dt + 1e-9))
    return [arc(f * ego_speed, k, n_steps, dt)
            for k in curvatures(command, n_per_command) for f in SPEED_FACTORS]


def smoothness(traj: Trajectory) -> float:
    d2 = traj.xy[2:] - 2.0 * traj.xy[1:-1] + traj.xy[:-2]
    return float((d2 ** 2).sum())


def check_safety_bound(cfg: PlannerConfig) -> float:
    """Largest non-collision cost in the candidate family; must stay below ``w_col``."""
    worst = 0.0
    for cmd in Command:
        for traj in generate_candidates(cfg.max_ego_speed, cmd, cfg.n_per_command, cfg.horizon, cfg.dt):
            worst = max(worst, cfg.w_road * cfg.n_steps + cfg.w_smooth * smoothness(traj))
    if worst >= cfg.w_col:
        raise ValueError(f"w_col={cfg.w_col} does not dominate the worst non-collision cost {worst}")
    return worst


def footprints(traj: Trajectory, length: float, width: float) -> np.ndarray:
    boxes = np.empty((len(traj.times), 5))
    boxes[:, :2] = traj.xy
    boxes[:, 2] = traj.headings
    boxes[:, 3] = length
    boxes[:, 4] = width
    return boxes


def collision_flags(traj: Trajectory, step_masks, grid: GridSpec, length: float = 4.6,
                    width: float = 1.8) -> np.ndarray:
    """Per waypoint, whether the ego footprint covers an occupied cell of that step's mask."""
    boxes = footprints(traj, length, width)
    flags = np.zeros(len(boxes), dtype=np.bool_)
    for k, mask in enumerate(step_masks):
        if k >= len(boxes):
            break
        cells = mask.cells if isinstance(mask, OccupiedMask) else mask
        flags[k] = kernels.box_hits(cells, boxes[k:k + 1], grid.origin, grid.resolution)[0] > 0
    return flags


def offroad_flags(traj: Trajectory, drivable: np.ndarray, grid: GridSpec) -> np.ndarray:
    col = np.floor((traj.xy[:, 0] - grid.x_min) / grid.resolution).astype(np.int64)
    row = np.floor((traj.xy[:, 1] - grid.y_min) / grid.resolution).astype(np.int64)
    inside = (col >= 0) & (col < grid.width) & (row >= 0) & (row < grid.height)
    on = np.zeros(len(col), dtype=np.bool_)
    on[inside] = drivable[row[inside], col[inside]]
    return ~on


def trajectory_cost(traj: Trajectory, step_masks, drivable: np.ndarray, grid: GridSpec,
                    cfg: PlannerConfig | None = None) -> float:
    cfg = PlannerConfig() if cfg is None else cfg
    n_col = int(collision_flags(traj, step_masks, grid, cfg.ego_length, cfg.ego_width)[1:].sum())
    n_off = int(offroad_flags(traj, drivable, grid)[1:].sum())
    return cfg.w_col * n_col + cfg.w_road * n_off + cfg.w_smooth * smoothness(traj)


def forecast_agents(queries, horizon: float, dt: float, grid: GridSpec, occupancy=None,
                    threshold: float = 0.5) -> list[OccupiedMask]:
    """Per-step occupied masks: constant-velocity footprints plus extrapolated occupancy."""
    n_steps = int(math.floor(horizon / dt + 1e-9))
    base = np.array([q.bev_box() for q in queries]).reshape(-1, 5)
    vel = np.array([q.velocity for q in queries]).reshape(-1, 2)
    masks = []
    for k in range(n_steps + 1):
        boxes = base.copy()
        boxes[:, :2] += vel * (k * dt)
        cells = kernels.rasterize_boxes(boxes, grid.origin, grid.resolution, grid.shape)
        if occupancy is not None:
            p = occupancy.p0 if k == 0 else np.clip(occupancy.p0 + (k * dt) * occupancy.p1, 0.0, 1.0)
            cells = cells | (p >= threshold)
        masks.append(OccupiedMask(cells, grid, threshold))
    return masks


def adjust_to_road(traj: Trajectory, drivable: np.ndarray, grid: GridSpec, radius: float = 1.0) -> Trajectory:
    """Snap off-road waypoints (after the origin) to the nearest drivable cell center within ``radius``."""
    off = offroad_flags(traj, drivable, grid)
    if not off[1:].any():
        return traj
    xy = traj.xy.copy()
    reach = int(math.ceil(radius / grid.resolution)) + 1
    for k in np.flatnonzero(off):
        if k == 0:
            continue
        x, y = xy[k]
        c0 = int(math.floor((x - grid.x_min) / grid.resolution))
        r0 = int(math.floor((y - grid.y_min) / grid.resolution))
        best = None
        for r in range(max(r0 - reach, 0), min(r0 + reach, grid.height - 1) + 1):
            for c in range(max(c0 - reach, 0), min(c0 + reach, grid.width - 1) + 1):
                if not drivable[r, c]:
                    continue
                cx = grid.x_min + (c + 0.5) * grid.resolution
                cy = grid.y_min + (r + 0.5) * grid.resolution
                d = math.hypot(cx - x, cy - y)
                if d <= radius and (best is None or d < best[0]):
                    best = (d, cx, cy)
        if best is not None:
            xy[k] = best[1:]
    return Trajectory(traj.times, xy, traj.headings)


def plan(queries, occupancy, command: Command, ego_speed: float, drivable: np.ndarray,
         grid: GridSpec, cfg: PlannerConfig | None = None, step_masks=None) -> Trajectory:
    """Lowest-cost candidate (first index on ties), then on-road adjustment.

    The adjustment is kept only when it does not add collisions.
    """
    cfg = PlannerConfig() if cfg is None else cfg
    if step_masks is None:
        step_masks = forecast_agents(queries, cfg.horizon, cfg.dt, grid, occupancy)
    speed = min(max(ego_speed, 0.0), cfg.max_ego_speed)
    candidates = generate_candidates(speed, command, cfg.n_per_command, cfg.horizon, cfg.dt)
    costs = [trajectory_cost(c, step_masks, drivable, grid, cfg) for c in candidates]
    best = candidates[int(np.argmin(costs))]
    adjusted = adjust_to_road(best, drivable, grid, cfg.snap_radius)
    if adjusted is best:
        return best
    before = collision_flags(best, step_masks, grid, cfg.ego_length, cfg.ego_width)[1:].sum()
    after = collision_flags(adjusted, step_masks, grid, cfg.ego_length, cfg.ego_width)[1:].sum()
    return adjusted if after <= before else best


__all__ = [
    "Command", "PlannerConfig", "Trajectory", "adjust_to_road", "arc", "check_safety_bound",
    "collision_flags", "curvatures", "forecast_agents", "footprints", "generate_candidates",
    "offroad_flags", "plan", "smoothness", "trajectory_cost",
]
