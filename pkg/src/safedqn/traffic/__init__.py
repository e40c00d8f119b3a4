"""Lightweight lane-based traffic simulator."""

from .geometry import EntryPoint, Lane, LaneGraph, rects_overlap
from .scenarios import SCENARIOS, ScenarioParams, build_graph
from .world import ObservationLayout, ScenarioWorld, SimConfig, TrafficEnv, Vehicle, encode_observation

__all__ = [
    "EntryPoint", "Lane", "LaneGraph", "ObservationLayout", "SCENARIOS", "ScenarioParams", "ScenarioWorld",
    "SimConfig", "TrafficEnv", "Vehicle", "build_graph", "encode_observation", "rects_overlap",
]
