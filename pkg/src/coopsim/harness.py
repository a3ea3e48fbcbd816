"""Experiment configuration, per-seed simulation, sweeps and reports."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import kernels
from .channel import Channel, ChannelConfig, CostReport, dense_tensor_cost
from .core import AgentClass, Pose, invert, relative_pose, transform_point, transform_xy
from .fusion import FusionConfig, FusedScene, fuse_scene, temporal_sync_queries, warp_occupancy
from .infra import DEFAULT_CONF_THRESHOLD, attach_flows, build_payload
from .metrics import (
    FAR_HALF_EXTENT,
    NEAR_HALF_EXTENT,
    PLANNING_HORIZONS,
    Detection,
    EvalReport,
    GroundTruth,
    average_precision,
    detection_recall,
    flatten_report,
    lane_counts,
    occupancy_counts,
    planning_metrics,
    tracking_metrics,
)
from .planner import Command, PlannerConfig, forecast_agents, plan
from .scenario import (
    EGO_VIEW,
    ID_STRIDE,
    INFRA_VIEW,
    STREAM_PERCEPTION,
    LanePolyline,
    PerceivedFrame,
    Scenario,
    ScenarioConfig,
    agent_boxes,
    ego_sensor,
    generate_scenario,
    infra_sensor,
    load_scenario,
    perceive,
    rasterize_agents,
    rng_stream,
)

MODES = ("no_fusion", "late_fusion", "univ2x", "dense_bev")
AXES = ("bandwidth", "latency", "corruption")
DENSE_CHANNELS = 256
LATE_ID_BASE = INFRA_VIEW * ID_STRIDE + 500_000
COMMAND_OFFSET = 2.0

_SENSOR_KEYS = {"fov_rect", "pos_noise_sigma", "heading_noise_sigma", "miss_prob",
                "false_pos_rate", "conf_base", "conf_decay", "feature_dim"}


class ConfigError(ValueError):
    """Raised for malformed or inconsistent experiment configuration."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    mode: str = "univ2x"
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    sensors: dict = field(default_factory=dict)
    seeds: tuple = (0,)
    output: str | None = None
    scenario_path: str | None = None
    conf_threshold: float = DEFAULT_CONF_THRESHOLD
    label: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        seeds = tuple(int(s) for s in self.seeds)
        if not seeds:
            raise ConfigError("at least one seed is required")
        object.__setattr__(self, "seeds", seeds)
        unknown_views = set(self.sensors) - {"ego", "infra"}
        if unknown_views:
            raise ConfigError(f"unknown sensor views: {sorted(unknown_views)}")
        for view, overrides in self.sensors.items():
            bad = set(overrides) - _SENSOR_KEYS
            if bad:
                raise ConfigError(f"unknown {view} sensor keys: {sorted(bad)}")

    @property
    def display_label(self) -> str:
        return self.label or self.mode

    def ego_sensor(self):
        return ego_sensor(**_sensor_kwargs(self.sensors.get("ego", {})))

    def infra_sensor(self):
        return infra_sensor(**_sensor_kwargs(self.sensors.get("infra", {})))

    def to_dict(self) -> dict:
        d = {
            "mode": self.mode,
            "channel": self.channel.to_dict(),
            "fusion": self.fusion.to_dict(),
            "planner": self.planner.to_dict(),
            "sensors": {k: dict(sorted(v.items())) for k, v in sorted(self.sensors.items())},
            "seeds": list(self.seeds),
            "output": self.output,
            "conf_threshold": self.conf_threshold,
            "label": self.label,
        }
        if self.scenario_path is not None:
            d["scenario_path"] = self.scenario_path
        else:
            d["scenario"] = self.scenario.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("experiment config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "scenario" in d and "scenario_path" in d:
            raise ConfigError("give either scenario or scenario_path, not both")
        try:
            kw = dict(d)
            kw["scenario"] = ScenarioConfig.from_dict(d.get("scenario", {}))
            kw["channel"] = ChannelConfig.from_dict(d.get("channel", {}))
            kw["fusion"] = FusionConfig.from_dict(d.get("fusion", {}))
            kw["planner"] = PlannerConfig.from_dict(d.get("planner", {}))
            kw["sensors"] = {k: dict(v) for k, v in d.get("sensors", {}).items()}
            if "seeds" in d:
                kw["seeds"] = tuple(d["seeds"])
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _sensor_kwargs(overrides: dict) -> dict:
    kw = dict(overrides)
    if "fov_rect" in kw:
        kw["fov_rect"] = tuple(float(v) for v in kw["fov_rect"])
    return kw


def load_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(doc)


def worker_count(default: int = 1) -> int:
    raw = os.environ.get("COOPSIM_THREADS")
    if raw is None or not raw.strip():
        return default
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"COOPSIM_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("COOPSIM_THREADS must be >= 1")
    return n


# ---------------------------------------------------------------------------
# Per-seed simulation
# ---------------------------------------------------------------------------

@dataclass
class SeedResult:
    seed: int
    report: EvalReport
    cost: CostReport
    diagnostics: dict
    scenes: list | None = None

    def to_dict(self) -> dict:
        return {"seed": self.seed, "report": self.report.to_dict(), "cost": self.cost.to_dict(),
                "diagnostics": dict(sorted(self.diagnostics.items()))}


def build_scenario(cfg: ExperimentConfig, seed: int) -> Scenario:
    if cfg.scenario_path is not None:
        return load_scenario(cfg.scenario_path)
    return generate_scenario(replace(cfg.scenario, seed=seed))


def ego_occupancy_flow(prev: PerceivedFrame | None, prev_pose: Pose | None, curr: PerceivedFrame,
                       curr_pose: Pose, dt: float) -> PerceivedFrame:
    """Ego-motion-compensated finite difference of the ego occupancy map."""
    occ = curr.occupancy
    if prev is None:
        return curr
    ego_from_prev = relative_pose(curr_pose, prev_pose)
    warped = warp_occupancy(prev.occupancy.p0, occ.grid, ego_from_prev, occ.grid)
    return replace(curr, occupancy=replace(occ, p1=(occ.p0 - warped) / dt))


def drivable_in_ego(scenario: Scenario, world_from_ego: Pose, grid) -> np.ndarray:
    d = scenario.drivable
    out = kernels.sample_grid(d.cells.astype(np.float64), d.grid.origin, d.grid.resolution,
                              grid.shape, grid.origin, grid.resolution,
                              world_from_ego.rotation[:2, :2], world_from_ego.translation[:2],
                              nearest=True)
    return out > 0.5


def command_from_future(offset_y: float) -> Command:
    if offset_y > COMMAND_OFFSET:
        return Command.TURN_LEFT
    if offset_y < -COMMAND_OFFSET:
        return Command.TURN_RIGHT
    return Command.KEEP_FORWARD


def _outgoing(payload, fusion: FusionConfig):
    """Leave out sections the receiver has switched off; they would only cost bandwidth."""
    return replace(payload,
                   agent_queries=payload.agent_queries if fusion.use_agents else (),
                   lane_queries=payload.lane_queries if fusion.use_lanes else (),
                   occupancy=payload.occupancy if fusion.use_occupancy else None)


def _relabel_boxes(payload):
    boxes = tuple(replace(q, track_id=LATE_ID_BASE + i) for i, q in enumerate(payload.agent_queries))
    return replace(payload, agent_queries=boxes)


class _Accumulator:
    def __init__(self):
        self.dets: list[Detection] = []
        self.gts: list[GroundTruth] = []
        self.track_pred: list = []
        self.track_gt: list = []
        self.occ = {"n": [0, 0], "f": [0, 0]}
        self.lanes: dict = {}
        self.l2: dict = {h: [] for h in PLANNING_HORIZONS}
        self.col: dict = {h: [] for h in PLANNING_HORIZONS}
        self.off: dict = {h: [] for h in PLANNING_HORIZONS}
        self.costs: list[CostReport] = []

    def report(self) -> tuple[EvalReport, CostReport]:
        ap = {}
        for cls in AgentClass:
            gts = [g for g in self.gts if g.cls == cls]
            if gts:
                ap[cls.name.lower()] = average_precision([d for d in self.dets if d.cls == cls], gts)
        tp, n_gt = detection_recall(self.dets, self.gts)
        mota, idsw = tracking_metrics(self.track_pred, self.track_gt)

        def ratio(pair):
            return pair[0] / pair[1] if pair[1] else 0.0

        def mean(xs):
            return float(np.mean(xs)) if xs else 0.0

        lane = self.lanes.get("lane", [0, 0])
        cross = self.lanes.get("crosswalk", [0, 0])
        if self.costs:
            n = len(self.costs)
            cost = CostReport(
                round(sum(c.feature_bytes for c in self.costs) / n),
                round(sum(c.geometry_bytes for c in self.costs) / n),
                round(sum(c.occupancy_bytes for c in self.costs) / n),
                round(sum(c.total_body_bytes for c in self.costs) / n),
                sum(c.bps for c in self.costs) / n,
            )
        else:
            cost = CostReport.zero()
        report = EvalReport(
            ap_per_class=ap,
            mean_ap=mean(list(ap.values())),
            recall=tp / n_gt if n_gt else 0.0,
            mota=mota,
            id_switches=idsw,
            iou_lane=ratio(lane),
            iou_crosswalk=ratio(cross),
            iou_n=ratio(self.occ["n"]),
            iou_f=ratio(self.occ["f"]),
            l2_at={h: mean(v) for h, v in self.l2.items()},
            collision_rate_at={h: mean(v) for h, v in self.col.items()},
            offroad_rate_at={h: mean(v) for h, v in self.off.items()},
            avg_bps=cost.bps,
        )
        return report, cost


def simulate_seed(cfg: ExperimentConfig, seed: int, keep_scenes: bool = False) -> SeedResult:
    scenario = build_scenario(cfg, seed)
    ego_s = cfg.ego_sensor()
    inf_s = cfg.infra_sensor()
    grid = ego_s.grid
    dt = scenario.config.dt
    mode = cfg.mode
    pcfg = cfg.planner
    chan = None
    if mode != "no_fusion":
        chan = Channel(replace(cfg.channel, seed=seed), boxes_only=(mode == "late_fusion"),
                       feature_dim=inf_s.feature_dim)
    dense_cost = dense_tensor_cost((DENSE_CHANNELS, *inf_s.grid.shape), cfg.channel.frequency_hz)

    acc = _Accumulator()
    diag = {"sync_error_sum": 0.0, "sync_expected_sum": 0.0, "sync_count": 0}
    scenes = []
    frames = scenario.frames
    n_frames = len(frames)
    plan_steps = [int(round(h / dt)) for h in PLANNING_HORIZONS]
    traj_steps = int(round(pcfg.horizon / dt))

    prev_ego = prev_infra = None
    prev_pose = None
    latest = None
    for k, frame in enumerate(frames):
        t = frame.time
        world_from_ego = frame.ego_pose
        ego_from_world = invert(world_from_ego)
        ego_pf = perceive(frame, ego_s, rng_stream(seed, STREAM_PERCEPTION, EGO_VIEW, k))
        ego_flowed = ego_occupancy_flow(prev_ego, prev_pose, ego_pf, world_from_ego, dt)
        prev_ego, prev_pose = ego_pf, world_from_ego

        payload = None
        if chan is not None:
            inf_pf = perceive(frame, inf_s, rng_stream(seed, STREAM_PERCEPTION, INFRA_VIEW, k))
            flowed = attach_flows(prev_infra, inf_pf, dt)
            prev_infra = inf_pf
            chan.submit(_outgoing(build_payload(flowed, inf_s.world_from_sensor(frame), INFRA_VIEW,
                                                cfg.conf_threshold), cfg.fusion), t, tick=k)
            for delivery in chan.poll(t):
                latest = delivery
                acc.costs.append(dense_cost if mode == "dense_bev" else delivery.cost)
            if latest is not None:
                payload = latest.payload
                if mode == "late_fusion":
                    payload = _relabel_boxes(payload)
                _sync_diagnostics(diag, payload, frame, inf_s, t, cfg.fusion.flow_compensation)

        fused = fuse_scene(ego_flowed, payload, world_from_ego, cfg.fusion)
        if keep_scenes:
            scenes.append(fused)

        # perception ground truth inside the ego grid
        gt_boxes = agent_boxes(frame.agents, ego_from_world)
        gt_pairs = []
        for a, box in zip(frame.agents, gt_boxes):
            if grid.contains(box[0], box[1]):
                acc.gts.append(GroundTruth(k, tuple(box), a.cls))
                gt_pairs.append((a.id, (box[0], box[1])))
        acc.track_gt.append(gt_pairs)
        acc.dets.extend(Detection(k, q.confidence, q.bev_box(), q.cls) for q in fused.agents)
        acc.track_pred.append([(q.track_id, (q.ref_point[0], q.ref_point[1])) for q in fused.agents])

        gt_occ = rasterize_agents(frame, grid, world_from_ego)
        for key, he in (("n", NEAR_HALF_EXTENT), ("f", FAR_HALF_EXTENT)):
            i, u = occupancy_counts(fused.mask, gt_occ, grid, he)
            acc.occ[key][0] += i
            acc.occ[key][1] += u
        gt_lanes = [LanePolyline(transform_xy(ego_from_world, lane.points), lane.cls)
                    for lane in frame.lanes]
        for cls, (i, u) in lane_counts(fused.lanes, gt_lanes, grid).items():
            slot = acc.lanes.setdefault(cls.name.lower(), [0, 0])
            slot[0] += i
            slot[1] += u

        if k + max(plan_steps[-1], traj_steps) < n_frames:
            _plan_and_score(acc, scenario, k, fused, ego_from_world, world_from_ego, grid, pcfg,
                            plan_steps, traj_steps)

    report, cost = acc.report()
    return SeedResult(seed, report, cost, diag, scenes if keep_scenes else None)


def _sync_diagnostics(diag, payload, frame, sensor, t_v, use_flow):
    """Infrastructure reference-point error after temporal sync (sensor frame)."""
    if not payload.agent_queries or payload.agent_queries[0].feature.size == 0:
        return
    sensor_from_world = invert(sensor.world_from_sensor(frame))
    truth = {a.id: a for a in (*frame.agents, frame.ego)}
    latency = t_v - payload.timestamp
    for q in temporal_sync_queries(payload.agent_queries, t_v, use_flow):
        aid = q.track_id - INFRA_VIEW * ID_STRIDE
        a = truth.get(aid)
        if q.track_id < 0 or a is None:
            continue
        p = transform_point(sensor_from_world, (a.position[0], a.position[1], 0.0))
        diag["sync_error_sum"] += math.hypot(q.ref_point[0] - p[0], q.ref_point[1] - p[1])
        diag["sync_expected_sum"] += a.speed * latency
        diag["sync_count"] += 1


def _plan_and_score(acc, scenario, k, fused: FusedScene, ego_from_world, world_from_ego, grid,
                    pcfg: PlannerConfig, plan_steps, traj_steps):
    frames = scenario.frames
    future = frames[k + traj_steps].ego.position
    offset = transform_point(ego_from_world, (future[0], future[1], 0.0))
    command = command_from_future(offset[1])
    drivable = drivable_in_ego(scenario, world_from_ego, grid)
    masks = forecast_agents(fused.agents, pcfg.horizon, pcfg.dt, grid, fused.occupancy,
                            fused.mask.threshold_used)
    traj = plan(fused.agents, fused.occupancy, command, frames[k].ego.speed, drivable, grid, pcfg,
                step_masks=masks)
    gt_future = {}
    gt_masks = {}
    for h, s in zip(PLANNING_HORIZONS, plan_steps):
        f = frames[k + s]
        p = transform_point(ego_from_world, (f.ego.position[0], f.ego.position[1], 0.0))
        gt_future[h] = p[:2]
        gt_masks[h] = rasterize_agents(f, grid, world_from_ego)
    sample = planning_metrics(traj, gt_future, gt_masks, drivable, grid)
    for h in PLANNING_HORIZONS:
        acc.l2[h].append(sample.l2[h])
        acc.col[h].append(float(sample.collision[h]))
        acc.off[h].append(float(sample.offroad[h]))


# ---------------------------------------------------------------------------
# Runs and records
# ---------------------------------------------------------------------------

@dataclass
class RunRecord:
    label: str
    mode: str
    config_hash: str
    config: dict
    per_seed: list
    mean: dict
    std: dict
    cost: dict
    diagnostics: dict

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(**{f.name: d[f.name] for f in fields(cls)})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def reports(self) -> list[EvalReport]:
        return [EvalReport.from_dict(s["report"]) for s in self.per_seed]


def aggregate(results: list[SeedResult]) -> tuple[dict, dict, dict, dict]:
    flat = [flatten_report(r.report.to_dict()) for r in results]
    keys = sorted(set().union(*flat))
    mean, std = {}, {}
    for key in keys:
        vals = np.array([f.get(key, np.nan) for f in flat], dtype=np.float64)
        vals = vals[~np.isnan(vals)]
        mean[key] = float(vals.mean()) if vals.size else 0.0
        std[key] = float(vals.std()) if vals.size else 0.0
    cost = {}
    for name in ("feature_bytes", "geometry_bytes", "occupancy_bytes", "total_body_bytes", "bps"):
        cost[name] = float(np.mean([getattr(r.cost, name) for r in results]))
    diag = {}
    for name in ("sync_error_sum", "sync_expected_sum", "sync_count"):
        diag[name] = float(sum(r.diagnostics[name] for r in results))
    n = diag["sync_count"]
    diag["mean_sync_error"] = diag["sync_error_sum"] / n if n else 0.0
    diag["mean_speed_latency"] = diag["sync_expected_sum"] / n if n else 0.0
    return mean, std, cost, diag


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> RunRecord:
    workers = worker_count() if workers is None else workers
    seeds = list(cfg.seeds)
    if workers <= 1 or len(seeds) == 1:
        results = [simulate_seed(cfg, s) for s in seeds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda s: simulate_seed(cfg, s), seeds))
    mean, std, cost, diag = aggregate(results)
    return RunRecord(cfg.display_label, cfg.mode, cfg.config_hash(), cfg.to_dict(),
                     [r.to_dict() for r in results], mean, std, cost, diag)


def run_mode(scenario_cfg: ScenarioConfig, mode: str, seed: int = 0, **configs) -> SeedResult:
    """Single-seed convenience wrapper around :func:`simulate_seed`."""
    cfg = ExperimentConfig(scenario=scenario_cfg, mode=mode, seeds=(seed,), **configs)
    return simulate_seed(cfg, seed)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def budget_bytes(mbps: float, frequency_hz: float) -> float:
    """Per-payload byte budget for a link rate in Mb/s."""
    return mbps * 1e6 / 8.0 / frequency_hz


def sweep_configs(axis: str, values, base: ExperimentConfig) -> list[ExperimentConfig]:
    if axis not in AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {AXES}")
    values = [float(v) for v in values]
    if not values:
        raise ConfigError("sweep needs at least one value")
    out = []
    for v in values:
        if axis == "bandwidth":
            if v < 0:
                raise ConfigError("bandwidth values must be >= 0")
            chan = replace(base.channel, bandwidth_budget=budget_bytes(v, base.channel.frequency_hz))
            out.append(replace(base, channel=chan, label=f"bandwidth={v:g}Mbps"))
        elif axis == "latency":
            if v < 0:
                raise ConfigError("latency values must be >= 0")
            chan = replace(base.channel, latency=v / 1000.0)
            out.append(replace(base, channel=chan, label=f"latency={v:g}ms",
                               fusion=replace(base.fusion, flow_compensation=True)))
            out.append(replace(base, channel=chan, label=f"latency={v:g}ms,no_flow",
                               fusion=replace(base.fusion, flow_compensation=False)))
        else:
            if not 0.0 <= v <= 1.0:
                raise ConfigError("corruption values must lie in [0, 1]")
            chan = replace(base.channel, drop_fraction=v)
            fusion = replace(base.fusion, use_lanes=False, use_occupancy=False)
            out.append(replace(base, channel=chan, fusion=fusion, label=f"corruption={v:g}"))
    return out


def sweep(axis: str, values, base: ExperimentConfig, workers: int | None = None) -> list[RunRecord]:
    return [run_experiment(c, workers) for c in sweep_configs(axis, values, base)]


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def _columns() -> list[tuple[str, str]]:
    cols = [("mAP", "mean_ap"), ("Recall", "recall"), ("MOTA", "mota"), ("IDSW", "id_switches"),
            ("IoU-lane", "iou_lane"), ("IoU-crosswalk", "iou_crosswalk"), ("IoU-n", "iou_n"),
            ("IoU-f", "iou_f")]
    for title, key in (("L2", "l2_at"), ("Col", "collision_rate_at"), ("OffRoad", "offroad_rate_at")):
        cols += [(f"{title} {h:g}s", f"{key}.{h:g}") for h in PLANNING_HORIZONS]
        cols.append((f"{title} Avg.", f"{key}.avg"))
    cols.append(("BPS", "avg_bps"))
    return cols


def _sig9(v: float) -> float:
    return float(f"{v:.9g}")


def report_rows(records: list[RunRecord]) -> list[dict]:
    if not records:
        raise ValueError("no records to report")
    rows = []
    for rec in records:
        row = {"label": rec.label if rec.mode != "dense_bev" or rec.label != "dense_bev"
               else "dense_bev (cost-only)", "mode": rec.mode}
        for title, key in _columns():
            if key.endswith(".avg"):
                prefix = key[:-4]
                v = float(np.mean([rec.mean[f"{prefix}.{h:g}"] for h in PLANNING_HORIZONS]))
            else:
                v = rec.mean[key]
            row[title] = _sig9(v)
        rows.append(row)
    return rows


def render_report(records: list[RunRecord], fmt: str) -> str:
    rows = report_rows(records)
    titles = ["label", "mode"] + [t for t, _ in _columns()]
    if fmt == "json":
        return json.dumps(rows, sort_keys=True, indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(titles)
        for r in rows:
            w.writerow([r["label"], r["mode"]] + [f"{r[t]:.9g}" for t in titles[2:]])
        return buf.getvalue()
    if fmt == "markdown":
        head = "| Method | Mode | " + " | ".join(titles[2:]) + " |"
        sep = "|" + "---|" * len(titles)
        body = ["| " + " | ".join([r["label"], r["mode"]] + [f"{r[t]:.4g}" for t in titles[2:]]) + " |"
                for r in rows]
        return "\n".join([head, sep, *body]) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def load_records(directory) -> list[RunRecord]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"report input {d} is not a directory")
    records = []
    for path in sorted(d.glob("*.json")):
        if path.name.startswith("report"):
            continue
        doc = json.loads(path.read_text())
        if isinstance(doc, dict) and "per_seed" in doc:
            records.append(RunRecord.from_dict(doc))
    if not records:
        raise FileNotFoundError(f"no run records found in {d}")
    return records


def write_report(directory, fmt: str) -> Path:
    text = render_report(load_records(directory), fmt)
    ext = {"csv": "csv", "markdown": "md", "json": "json"}[fmt]
    out = Path(directory) / f"report.{ext}"
    try:
        out.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write report {out}: {exc}") from exc
    return out


__all__ = [
    "AXES", "ConfigError", "ExperimentConfig", "MODES", "RunRecord", "SeedResult", "aggregate",
    "budget_bytes", "build_scenario", "command_from_future", "drivable_in_ego", "load_config",
    "load_records", "render_report", "report_rows", "run_experiment", "run_mode", "simulate_seed",
    "sweep", "sweep_configs", "worker_count", "write_report",
]
