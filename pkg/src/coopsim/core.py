"""Rigid-body geometry, BEV grid specs, and the shared record types."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_FEATURE_DIM = 256


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.remainder(a, 2.0 * math.pi)
    if w <= -math.pi:
        w += 2.0 * math.pi
    return w


def rot2(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s], [s, c]])


def rotate_pairs(vec: np.ndarray, angle: float) -> np.ndarray:
    """Rotate consecutive pairs (2k, 2k+1) of an even-length vector in-plane."""
    v = np.asarray(vec, dtype=np.float64).reshape(-1, 2)
    c, s = math.cos(angle), math.sin(angle)
    out = np.empty_like(v)
    out[:, 0] = c * v[:, 0] - s * v[:, 1]
    out[:, 1] = s * v[:, 0] + c * v[:, 1]
    return out.reshape(-1)


# ---------------------------------------------------------------------------
# Pose
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``x -> rotation @ x + translation`` (meters)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _frozen(self.rotation)
        t = _frozen(self.translation)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError(f"pose needs 3x3 rotation and 3-vector, got {r.shape}, {t.shape}")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        r = np.eye(3)
        r[:2, :2] = rot2(yaw)
        return cls(r, np.asarray(translation, dtype=np.float64))

    @property
    def yaw(self) -> float:
        return math.atan2(self.rotation[1, 0], self.rotation[0, 0])

    def is_valid(self, tol: float = 1e-9) -> bool:
        r = self.rotation
        return bool(np.all(np.abs(r.T @ r - np.eye(3)) <= tol)
                    and abs(np.linalg.det(r) - 1.0) <= tol)

    def almost_equal(self, other: "Pose", tol: float = 1e-9) -> bool:
        return bool(np.allclose(self.rotation, other.rotation, rtol=0, atol=tol)
                    and np.allclose(self.translation, other.translation, rtol=0, atol=tol))

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return (np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation))

    __hash__ = None

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(np.asarray(d["rotation"], dtype=np.float64),
                   np.asarray(d["translation"], dtype=np.float64))


def compose(a: Pose, b: Pose) -> Pose:
    """Map b-frame coordinates into a's parent frame."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(p: Pose) -> Pose:
    rt = p.rotation.T
    return Pose(rt, -(rt @ p.translation))


def transform_point(p: Pose, x) -> np.ndarray:
    return p.rotation @ np.asarray(x, dtype=np.float64) + p.translation


def transform_points(p: Pose, pts: np.ndarray) -> np.ndarray:
    """Row-wise transform for an ``(n, 3)`` array."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    return pts @ p.rotation.T + p.translation


def transform_xy(p: Pose, xy: np.ndarray) -> np.ndarray:
    """Transform ``(n, 2)`` ground-plane points (z = 0)."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    return xy @ p.rotation[:2, :2].T + p.translation[:2]


def relative_pose(world_from_a: Pose, world_from_b: Pose) -> Pose:
    """``a_from_b``: maps b-frame coordinates into the a-frame."""
    return compose(invert(world_from_a), world_from_b)


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Row-major BEV grid; cell (0, 0) has its corner at (x_min, y_min)."""

    width: int
    height: int
    resolution: float
    x_min: float
    y_min: float

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or self.resolution <= 0:
            raise ValueError(f"invalid grid {self}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def origin(self) -> tuple[float, float]:
        return (self.x_min, self.y_min)

    @property
    def extent(self) -> tuple[float, float]:
        return (self.width * self.resolution, self.height * self.resolution)

    @property
    def x_max(self) -> float:
        return self.x_min + self.width * self.resolution

    @property
    def y_max(self) -> float:
        return self.y_min + self.height * self.resolution

    def contains(self, x: float, y: float) -> bool:
        return self.x_min <= x < self.x_max and self.y_min <= y < self.y_max

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """``(xs, ys)`` meshgrids of cell-center coordinates, each of ``shape``."""
        xs = self.x_min + (np.arange(self.width) + 0.5) * self.resolution
        ys = self.y_min + (np.arange(self.height) + 0.5) * self.resolution
        return np.meshgrid(xs, ys)

    def zeros(self, dtype=np.float64) -> np.ndarray:
        return np.zeros(self.shape, dtype=dtype)

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height, "resolution": self.resolution,
                "x_min": self.x_min, "y_min": self.y_min}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(int(d["width"]), int(d["height"]), float(d["resolution"]),
                   float(d["x_min"]), float(d["y_min"]))


def world_to_cell(grid: GridSpec, xy) -> tuple[int, int] | None:
    """``(row, col)`` of the cell containing ``xy``, or None outside the grid."""
    col = math.floor((xy[0] - grid.x_min) / grid.resolution)
    row = math.floor((xy[1] - grid.y_min) / grid.resolution)
    if 0 <= col < grid.width and 0 <= row < grid.height:
        return (row, col)
    return None


def cell_to_center(grid: GridSpec, row: int, col: int) -> tuple[float, float]:
    return (grid.x_min + (col + 0.5) * grid.resolution,
            grid.y_min + (row + 0.5) * grid.resolution)


def ego_grid() -> GridSpec:
    return GridSpec(200, 200, 0.5, -50.0, -50.0)


def infra_grid() -> GridSpec:
    return GridSpec(200, 200, 0.5, 0.0, -50.0)


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

class AgentClass(enum.IntEnum):
    CAR = 0
    BICYCLE = 1
    PEDESTRIAN = 2
    TRAFFIC_CONE = 3


class LaneClass(enum.IntEnum):
    LANE = 0
    CROSSWALK = 1


def _arrays_equal(a, b) -> bool:
    return np.array_equal(a, b)


@dataclass(frozen=True, eq=False)
class AgentQuery:
    """Instance-level record for one dynamic object in some sensor frame."""

    feature: np.ndarray
    ref_point: np.ndarray
    heading: float
    velocity: np.ndarray
    track_id: int
    confidence: float
    box_size: np.ndarray
    cls: AgentClass
    timestamp: float
    flow_ref: np.ndarray = field(default_factory=lambda: np.zeros(2))
    flow_feature: np.ndarray | None = None

    def __post_init__(self):
        feat = _frozen(self.feature)
        object.__setattr__(self, "feature", feat)
        object.__setattr__(self, "ref_point", _frozen(self.ref_point))
        object.__setattr__(self, "velocity", _frozen(self.velocity))
        object.__setattr__(self, "box_size", _frozen(self.box_size))
        object.__setattr__(self, "flow_ref", _frozen(self.flow_ref))
        ff = np.zeros_like(feat) if self.flow_feature is None else self.flow_feature
        object.__setattr__(self, "flow_feature", _frozen(ff))
        object.__setattr__(self, "cls", AgentClass(self.cls))
        object.__setattr__(self, "heading", float(self.heading))
        object.__setattr__(self, "confidence", float(self.confidence))
        object.__setattr__(self, "track_id", int(self.track_id))
        object.__setattr__(self, "timestamp", float(self.timestamp))
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if self.ref_point.shape != (3,) or self.velocity.shape != (2,):
            raise ValueError("ref_point must be a 3-vector and velocity a 2-vector")
        if self.box_size.shape != (3,) or np.any(self.box_size <= 0):
            raise ValueError(f"box_size must be three positive lengths, got {self.box_size}")
        if self.flow_feature.shape != feat.shape:
            raise ValueError("flow_feature must match feature length")

    @property
    def xy(self) -> np.ndarray:
        return self.ref_point[:2]

    def bev_box(self) -> tuple[float, float, float, float, float]:
        return (float(self.ref_point[0]), float(self.ref_point[1]), self.heading,
                float(self.box_size[0]), float(self.box_size[1]))

    def __eq__(self, other):
        if not isinstance(other, AgentQuery):
            return NotImplemented
        return (self.track_id == other.track_id and self.cls == other.cls
                and self.heading == other.heading and self.confidence == other.confidence
                and self.timestamp == other.timestamp
                and _arrays_equal(self.feature, other.feature)
                and _arrays_equal(self.ref_point, other.ref_point)
                and _arrays_equal(self.velocity, other.velocity)
                and _arrays_equal(self.box_size, other.box_size)
                and _arrays_equal(self.flow_ref, other.flow_ref)
                and _arrays_equal(self.flow_feature, other.flow_feature))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class LaneQuery:
    feature: np.ndarray
    points: np.ndarray
    cls: LaneClass
    confidence: float
    timestamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "feature", _frozen(self.feature))
        pts = _frozen(self.points).reshape(-1, 2)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "cls", LaneClass(self.cls))
        object.__setattr__(self, "confidence", float(self.confidence))
        object.__setattr__(self, "timestamp", float(self.timestamp))
        if pts.shape[0] < 2:
            raise ValueError("lane polyline needs at least 2 points")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    def __eq__(self, other):
        if not isinstance(other, LaneQuery):
            return NotImplemented
        return (self.cls == other.cls and self.confidence == other.confidence
                and self.timestamp == other.timestamp
                and _arrays_equal(self.feature, other.feature)
                and _arrays_equal(self.points, other.points))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class OccupancyMessage:
    """Occupied-probability map ``p0`` plus its per-second flow ``p1``.

    ``cells`` is set when only a subset of cells was transmitted (flat
    row-major indices); untransmitted cells read 0 in both grids.
    """

    p0: np.ndarray
    p1: np.ndarray
    grid: GridSpec
    timestamp: float
    cells: np.ndarray | None = None

    def __post_init__(self):
        p0 = _frozen(self.p0)
        p1 = _frozen(self.p1)
        if p0.shape != self.grid.shape or p1.shape != self.grid.shape:
            raise ValueError(f"grid shape {self.grid.shape} does not match p0 {p0.shape} / p1 {p1.shape}")
        if p0.size and (p0.min() < 0.0 or p0.max() > 1.0):
            raise ValueError("p0 values must lie in [0, 1]")
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "p1", p1)
        object.__setattr__(self, "timestamp", float(self.timestamp))
        if self.cells is not None:
            object.__setattr__(self, "cells", _frozen(self.cells, dtype=np.int64))

    @classmethod
    def empty(cls, grid: GridSpec, timestamp: float) -> "OccupancyMessage":
        return cls(grid.zeros(), grid.zeros(), grid, timestamp)

    def __eq__(self, other):
        if not isinstance(other, OccupancyMessage):
            return NotImplemented
        if (self.cells is None) != (other.cells is None):
            return False
        return (self.grid == other.grid and self.timestamp == other.timestamp
                and _arrays_equal(self.p0, other.p0) and _arrays_equal(self.p1, other.p1)
                and (self.cells is None or _arrays_equal(self.cells, other.cells)))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class OccupiedMask:
    cells: np.ndarray
    grid: GridSpec
    threshold_used: float

    def __post_init__(self):
        c = _frozen(self.cells, dtype=np.bool_)
        if c.shape != self.grid.shape:
            raise ValueError(f"mask shape {c.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "cells", c)

    def __eq__(self, other):
        if not isinstance(other, OccupiedMask):
            return NotImplemented
        return (self.grid == other.grid and self.threshold_used == other.threshold_used
                and _arrays_equal(self.cells, other.cells))

    __hash__ = None

