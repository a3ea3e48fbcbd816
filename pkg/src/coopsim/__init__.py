"""Deterministic simulator for vehicle-infrastructure cooperative driving.

Oracle perception on an ego vehicle and a roadside unit, a hybrid query plus
occupancy transmission over a simulated link, ego-side fusion, a sampling
planner, and the evaluation metrics used to compare transmission schemes.
"""

from .channel import ChannelConfig, CostReport, cost, decode, encode
from .core import AgentQuery, GridSpec, LaneQuery, OccupancyMessage, OccupiedMask, Pose
from .fusion import FusionConfig, fuse_scene, hungarian
from .harness import ExperimentConfig, RunRecord, run_experiment, sweep
from .infra import V2XPayload, build_payload
from .planner import Command, PlannerConfig, Trajectory, plan
from .scenario import ScenarioConfig, generate_scenario

__version__ = "0.1.0"

__all__ = [
    "AgentQuery", "ChannelConfig", "Command", "CostReport", "ExperimentConfig", "FusionConfig",
    "GridSpec", "LaneQuery", "OccupancyMessage", "OccupiedMask", "PlannerConfig", "Pose",
    "RunRecord", "ScenarioConfig", "Trajectory", "V2XPayload", "build_payload", "cost", "decode",
    "encode", "fuse_scene", "generate_scenario", "hungarian", "plan", "run_experiment", "sweep",
]
