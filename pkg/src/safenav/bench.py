"""Benchmark protocols: collision-checker comparison and lift-strategy study.

The collision benchmark sweeps a grid of (obstacle count, state sigma,
p_safe) cells.  Each cell generates a cubical-obstacle scene encoded both
as half-space constraints (for the chance-constraint baselines) and as an
occupancy grid whose cubes are snapped to the grid so the gridded field
equals the continuous one; every method validates the same beliefs and is
scored by its accuracy against a seeded Monte-Carlo standard of truth,
with per-check timing.  Obstacle sets are nested across counts (scenes
with more obstacles extend smaller ones) to sharpen trend comparisons.

The planner benchmark solves one known-environment problem repeatedly
under different lift strategies and seeds, recording success, trajectory
length, and time to first solution.
"""

from __future__ import annotations

import time
import zlib
from dataclasses import dataclass

import numpy as np

from .collision import (
    GridField,
    LinearObstacleSet,
    SafetyConfig,
    accuracy,
    boxes_to_obstacles,
    cc_check,
    is_safe,
    oracle_p_collision,
    p_collision_alpha,
)
from .fusion import CumulativeMap
from .geometry import identity
from .models import Belief, make_model
from .planner import LiftStrategy, MultiLayerPlanner, PlanningProblem
from .simworld import builtin_world, map_from_world

__all__ = [
    "CollisionBenchSpec",
    "run_collision_benchmark",
    "PlannerBenchSpec",
    "run_planner_benchmark",
    "make_scene",
]

_WORKSPACE = 40.0  # m, cubic benchmark arena
_CUBE_EDGE = 2.0  # m, obstacle edge, snapped to the grid
_RESOLUTION = 0.5  # m, benchmark grid
_TRUTH_SAMPLES = 100_000


@dataclass(frozen=True)
class CollisionBenchSpec:
    n_obstacles: tuple = (0, 100, 200)
    sigmas: tuple = (0.5, 1.5, 3.0)
    p_safes: tuple = (0.9, 0.95)
    alphas: tuple = (0.99,)
    beliefs_per_cell: int = 1000
    seed: int = 0
    truth_samples: int = _TRUTH_SAMPLES


def make_scene(n_o: int, rng: np.random.Generator, dim: int = 3):
    """Cubical obstacles snapped to the benchmark grid.

    Draws obstacles deterministically from ``rng``: calling with larger
    ``n_o`` from an identically seeded generator yields a superset of the
    smaller scene.
    """
    h = _RESOLUTION
    boxes = []
    span = _WORKSPACE - _CUBE_EDGE
    for _ in range(n_o):
        lo = np.floor(rng.uniform(0.0, span, size=dim) / h) * h
        boxes.append((lo, lo + _CUBE_EDGE))
    return boxes


def scene_map(boxes, dim: int = 3) -> CumulativeMap:
    h = _RESOLUTION
    n = int(round(_WORKSPACE / h))
    shape = (n,) * dim
    values = np.zeros(shape)
    for lo, hi in boxes:
        a = np.round(lo / h).astype(int)
        b = np.round(hi / h).astype(int)
        values[tuple(slice(a[d], b[d]) for d in range(dim))] = 1.0
    known = np.ones(shape, dtype=bool)
    values.setflags(write=False)
    known.setflags(write=False)
    return CumulativeMap(identity(dim), values, known, np.zeros(dim, dtype=int), h, 0)


def run_collision_benchmark(spec: CollisionBenchSpec, progress=None):
    """Evaluate every method over the benchmark grid.

    Returns CSV-ready rows ``(n_o, sigma, p_safe, method, accuracy,
    mean_time_ns, var_time_ns)``.
    """
    dim = 3
    rows = []
    root = np.random.default_rng(spec.seed)
    scene_rng = root.spawn(1)[0]
    max_n = max(spec.n_obstacles)
    all_boxes = make_scene(max_n, scene_rng, dim)

    for sigma in spec.sigmas:
        for p_safe in spec.p_safes:
            cell_rng = np.random.default_rng([spec.seed, int(sigma * 1000), int(p_safe * 1000)])
            means = cell_rng.uniform(0.0, _WORKSPACE, size=(spec.beliefs_per_cell, dim))
            truth_rngs = cell_rng.spawn(spec.beliefs_per_cell)
            for n_o in spec.n_obstacles:
                boxes = all_boxes[:n_o]
                cmap = scene_map(boxes, dim)
                field = GridField(cmap, f_unknown=0.0)
                obstacles = boxes_to_obstacles(boxes)
                cov = np.eye(dim) * sigma ** 2
                beliefs = [Belief(m, cov) for m in means]

                truth_valid = []
                for b, trng in zip(beliefs, truth_rngs):
                    est = oracle_p_collision(b, field, spec.truth_samples, trng)
                    truth_valid.append(1.0 - est.p >= p_safe)

                methods = {}
                for alpha in spec.alphas:
                    if alpha <= p_safe:
                        continue
                    methods[f"alpha_kernel_{alpha:g}"] = (
                        lambda b, a=alpha: a - p_collision_alpha(b, cmap, a, f_unknown=0.0) >= p_safe
                    )
                methods["cc_open_loop_sum"] = lambda b: cc_check(b, obstacles, p_safe, "open_loop_sum")
                methods["cc_per_obstacle"] = lambda b: cc_check(b, obstacles, p_safe, "per_obstacle")

                for name, fn in methods.items():
                    outcomes = []
                    times = []
                    for b, tv in zip(beliefs, truth_valid):
                        t0 = time.perf_counter_ns()
                        valid = fn(b)
                        times.append(time.perf_counter_ns() - t0)
                        outcomes.append((valid, tv))
                    acc = accuracy(outcomes)
                    times = np.asarray(times, dtype=float)
                    rows.append(
                        {
                            "n_o": n_o,
                            "sigma": sigma,
                            "p_safe": p_safe,
                            "method": name,
                            "accuracy": acc,
                            "mean_time_ns": float(times.mean()),
                            "var_time_ns": float(times.var(ddof=1)) if len(times) > 1 else 0.0,
                        }
                    )
                    if progress:
                        progress(rows[-1])
    return rows


@dataclass(frozen=True)
class PlannerBenchSpec:
    scenario: str = "corridor3d"
    seeds: int = 200
    budget_lead: float = 0.3
    budget_constrained: float = 1.2
    strategies: tuple = (
        ("slp", None),
        ("rigid", 0.0),
        ("rigid", 5.0),
        ("rigid", 30.0),
        ("adaptive", None),
    )
    lead_iters_per_second: float = 2500.0
    sst_iters_per_second: float = 250.0
    p_safe: float = 0.95
    alpha: float = 0.99


def _bench_problem(world, cmap, cfg, model, lift, spec):
    if world.name == "corridor3d":
        start = Belief(np.array([4.0, 0.0, 6.0, 0.0, 0.0]), np.zeros((5, 5)))
        goal_lo = np.array([21.0, -3.0, 4.0])
        goal_hi = np.array([25.0, 3.0, 8.0])
    elif world.dimension == 2:
        start = Belief(np.array([0.0, 0.0, 0.0, 0.0]), np.zeros((4, 4)))
        goal_lo = np.array([10.0, -2.0])
        goal_hi = np.array([14.0, 2.0])
    else:
        raise ValueError(f"no benchmark problem defined for world {world.name!r}")
    return PlanningProblem(
        start=start,
        goal_lo=goal_lo,
        goal_hi=goal_hi,
        safety=cfg,
        cmap=cmap,
        model=model,
        bounds_lo=world.bounds_lo,
        bounds_hi=world.bounds_hi,
        lift=lift,
        budget_lead=spec.budget_lead,
        budget_constrained=spec.budget_constrained,
    )


def run_planner_benchmark(spec: PlannerBenchSpec, progress=None):
    """Seeded strategy comparison on a known environment.

    Returns rows ``(strategy, param, seed, solved, length,
    time_to_first_solution, budget_lead, budget_constrained)``.
    """
    world = builtin_world(spec.scenario)
    if world.dimension == 3:
        model = make_model("fixed_wing", v_max=2.5, t_prop_max=1.5, k_v=0.005,
                           sigma_w0=(0.004, 0.004, 0.004, 0.002, 0.002))
    else:
        model = make_model("unicycle")
    cfg = SafetyConfig(p_safe=spec.p_safe, alpha=spec.alpha, r_body=0.2, f_unknown=0.0)
    cmap = map_from_world(world, 0.2 if world.dimension == 3 else 0.25)

    rows = []
    for kind, param in spec.strategies:
        if kind == "slp":
            lift = LiftStrategy(kind="uniform")
            single = True
            label = "slp"
        elif kind == "rigid":
            lift = LiftStrategy(kind="rigid", d=float(param))
            single = False
            label = f"rigid_d{param:g}"
        elif kind == "biased":
            lift = LiftStrategy(kind="biased", d=12.0, p=float(param))
            single = False
            label = f"biased_p{param:g}"
        else:
            lift = LiftStrategy(kind="adaptive", d0=3.0, growth_rate=20.0)
            single = False
            label = "adaptive"
        planner = MultiLayerPlanner(
            budget_mode="iterations",
            lead_iters_per_second=spec.lead_iters_per_second,
            sst_iters_per_second=spec.sst_iters_per_second,
            single_layer=single,
            check_stride=3,
        )
        for seed in range(spec.seeds):
            rng = np.random.default_rng([zlib.crc32(label.encode()), seed])
            problem = _bench_problem(world, cmap, cfg, model, lift, spec)
            result = planner.solve(problem, rng)
            solved = result.trajectory is not None
            rows.append(
                {
                    "strategy": label,
                    "param": param if param is not None else "",
                    "seed": seed,
                    "solved": int(solved),
                    "length": result.trajectory.total_length if solved else "",
                    "time_to_first_solution": (
                        result.stats.first_solution_elapsed
                        if result.stats.first_solution_elapsed is not None
                        else ""
                    ),
                    "budget_lead": spec.budget_lead,
                    "budget_constrained": spec.budget_constrained,
                }
            )
            if progress:
                progress(rows[-1])
    return rows
