"""Reflection-aware 3D sound source localization over voxel occupancy maps."""

from .forward_sim import Scenario, ScenarioError, Waypoint, generate_frame, shell_room
from .localizer import Estimate, Localizer, LocalizerConfig
from .occupancy_map import Box, OccupancyGrid, read_map, traverse_ray, write_map
from .pipeline import RunReport, make_configs, run_scenario
from .ray_tracer import IncomingSignal, RayPath, TraceConfig, trace_path
from .scenario_file import dump_scenario, load_scenario

__version__ = "0.1.0"

__all__ = [
    "Box", "Estimate", "IncomingSignal", "Localizer", "LocalizerConfig", "OccupancyGrid",
    "RayPath", "RunReport", "Scenario", "ScenarioError", "TraceConfig", "Waypoint",
    "dump_scenario", "generate_frame", "load_scenario", "make_configs", "read_map",
    "run_scenario", "shell_room", "trace_path", "traverse_ray", "write_map",
]
