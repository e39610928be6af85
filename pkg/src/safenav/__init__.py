"""Uncertainty-aware online mapping and probabilistically safe replanning.

The pipeline maps an unknown environment as uncertain local submaps, fuses
them into an occupancy field relative to a predicted planning frame, and
continuously replans kinodynamically feasible trajectories whose every
belief satisfies a chance-style safety bound, with a deterministic
simulator and benchmark harness around it.
"""

from .collision import SafetyConfig, accuracy, cc_check, is_safe, oracle_p_collision, p_collision_alpha
from .fusion import CumulativeMap, build_cumulative, query_point, validate_trajectory
from .geometry import PoseBelief, compound, compound_point, identity, inverse, transform_point_to_frame
from .kernels import AlphaKernel, build_kernel, critical_value, kernel_size
from .manager import MissionConfig, MissionManager, run_mission, satisfies_criteria
from .models import Belief, Control, FixedWingModel, UnicycleModel, make_model
from .planner import (
    LiftStrategy,
    MultiLayerPlanner,
    PlanningProblem,
    Trajectory,
    goal_reached,
    inevitable_collision,
)
from .simworld import DriftSpec, Executor, SensorSpec, World, builtin_world, execute, raycast_scan
from .submaps import LocalSubmap, Scan, SensorModelParams, SubmapStore, occluded_increment

__version__ = "0.1.0"
