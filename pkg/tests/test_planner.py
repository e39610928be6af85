import math
from collections import deque

import numpy as np
import pytest

from safenav.collision import SafetyConfig
from safenav.fusion import CumulativeMap
from safenav.geometry import identity
from safenav.models import Belief, UnicycleModel, UnicycleParams, make_model
from safenav.planner import (
    Budget,
    LiftStrategy,
    MultiLayerPlanner,
    PlanningProblem,
    Trajectory,
    adaptive_radius,
    goal_reached,
    inevitable_collision,
    lead_plan,
    lift_sample,
)
from safenav.simworld import builtin_world, map_from_world


def empty_map_2d(extent=20.0, h=0.25):
    n = int(extent / h)
    values = np.zeros((n, n))
    known = np.ones((n, n), dtype=bool)
    return CumulativeMap(identity(2), values, known, np.array([int(-4 / h), int(-extent / 2 / h)]), h, 0)


def wall_map_2d(gap=None, extent=20.0, h=0.25, wall_x=(8.0, 9.0)):
    cmap = empty_map_2d(extent, h)
    values = cmap.values.copy()
    a = int(wall_x[0] / h) - cmap.lo[0]
    b = int(wall_x[1] / h) - cmap.lo[0]
    values[a:b, :] = 1.0
    if gap is not None:
        g0 = int(gap[0] / h) - cmap.lo[1]
        g1 = int(gap[1] / h) - cmap.lo[1]
        values[a:b, g0:g1] = 0.0
    values.setflags(write=False)
    return CumulativeMap(cmap.frame, values, cmap.known, cmap.lo, h, 0)


def problem_for(cmap, goal_lo, goal_hi, lift=None, start=None, model=None):
    model = model or UnicycleModel(UnicycleParams())
    start = start if start is not None else Belief(np.zeros(4), np.zeros((4, 4)))
    lo, hi = cmap.bounds()
    return PlanningProblem(
        start=start,
        goal_lo=np.asarray(goal_lo, dtype=float),
        goal_hi=np.asarray(goal_hi, dtype=float),
        safety=SafetyConfig(p_safe=0.95, alpha=0.99, r_body=0.2),
        cmap=cmap,
        model=model,
        bounds_lo=lo,
        bounds_hi=hi,
        lift=lift or LiftStrategy(kind="adaptive", d0=1.0, growth_rate=10.0),
    )


def flood_fill_reachable(cmap, start, goal, clearance_cells=2):
    """Breadth-first reachability oracle on the obstacle grid."""
    blocked = cmap.values > 0.5
    for _ in range(clearance_cells):
        grown = blocked.copy()
        grown[1:, :] |= blocked[:-1, :]
        grown[:-1, :] |= blocked[1:, :]
        grown[:, 1:] |= blocked[:, :-1]
        grown[:, :-1] |= blocked[:, 1:]
        blocked = grown
    s = tuple(cmap.cell_index(start))
    g = tuple(cmap.cell_index(goal))
    if blocked[s] or blocked[g]:
        return False
    q = deque([s])
    seen = {s}
    while q:
        c = q.popleft()
        if c == g:
            return True
        for d in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            n = (c[0] + d[0], c[1] + d[1])
            if (0 <= n[0] < cmap.shape[0] and 0 <= n[1] < cmap.shape[1]
                    and n not in seen and not blocked[n]):
                seen.add(n)
                q.append(n)
    return False


# ---------------------------------------------------------------------------
# goal region


def test_goal_reached_trivial():
    b = Belief(np.array([5.0, 5.0, 0, 0]), np.diag([0.01, 0.01, 0, 0]))
    assert goal_reached(b, [4, 4], [6, 6], 0.99)  # box at +-10 sigma
    far = Belief(np.array([50.0, 5.0, 0, 0]), np.diag([0.01, 0.01, 0, 0]))
    assert not goal_reached(far, [4, 4], [6, 6], 0.5)


def test_goal_reached_interval_product():
    # box half-width 1.96 sigma per axis: p = 0.95^2 = 0.9025
    s = 1.0
    b = Belief(np.array([0.0, 0.0, 0, 0]), np.diag([s, s, 0, 0]) ** 2 if False else np.diag([s**2, s**2, 0, 0]))
    w = 1.96 * s
    assert goal_reached(b, [-w, -w], [w, w], 0.90)
    assert not goal_reached(b, [-w, -w], [w, w], 0.91)


# ---------------------------------------------------------------------------
# lead planner


def test_lead_plan_empty_world_near_straight():
    cmap = empty_map_2d()
    problem = problem_for(cmap, [9.5, -1.0], [10.5, 1.0])
    path = lead_plan(problem, Budget(0.3, "iterations", 2000), np.random.default_rng(0))
    assert path is not None
    length = sum(np.linalg.norm(b - a) for a, b in zip(path, path[1:]))
    assert length <= 10.5  # straight-line 10 m plus anytime slack


def test_lead_plan_walled_off_returns_none():
    cmap = wall_map_2d(gap=None)
    problem = problem_for(cmap, [11.0, -1.0], [13.0, 1.0])
    path = lead_plan(problem, Budget(0.3, "iterations", 1000), np.random.default_rng(0))
    assert path is None


def test_lead_plan_passes_through_gap():
    cmap = wall_map_2d(gap=(-2.0, 2.0))
    problem = problem_for(cmap, [11.0, -1.0], [13.0, 1.0])
    path = lead_plan(problem, Budget(0.4, "iterations", 1500), np.random.default_rng(1))
    assert path is not None
    assert flood_fill_reachable(cmap, path[0], path[-1])
    # every waypoint segment stays in flood-fill-reachable space
    for a, b in zip(path, path[1:]):
        for t in np.linspace(0, 1, 8):
            p = a + t * (b - a)
            assert not (cmap.values[tuple(cmap.cell_index(p))] > 0.5)


# ---------------------------------------------------------------------------
# lift strategies


def test_lift_rigid_d0_sticks_to_path():
    model = UnicycleModel()
    xi = [np.array([0.0, 0.0]), np.array([5.0, 0.0])]
    rng = np.random.default_rng(2)
    s = LiftStrategy(kind="rigid", d=0.0)
    for _ in range(100):
        x = lift_sample(xi, s, 0.0, rng, model, np.array([-10, -10]), np.array([10, 10]))
        assert abs(x[1]) < 1e-12 and 0.0 <= x[0] <= 5.0


def test_lift_biased_p0_is_uniform():
    model = UnicycleModel()
    xi = [np.array([0.0, 0.0]), np.array([0.1, 0.0])]
    rng = np.random.default_rng(3)
    s = LiftStrategy(kind="biased", d=0.5, p=0.0)
    lo, hi = np.array([-10.0, -10.0]), np.array([10.0, 10.0])
    xs = np.array([lift_sample(xi, s, 0.0, rng, model, lo, hi) for _ in range(4000)])
    # statistical test: each workspace quadrant gets ~1/4 of the samples
    qx = xs[:, 0] > 0
    qy = xs[:, 1] > 0
    for mask in (qx & qy, qx & ~qy, ~qx & qy, ~qx & ~qy):
        assert abs(mask.mean() - 0.25) < 0.04


def test_lift_adaptive_radius_formula():
    s = LiftStrategy(kind="adaptive", d0=3.0, growth_rate=20.0)
    assert adaptive_radius(s, 0.35) == pytest.approx(10.0)


def test_lift_uniform_without_lead():
    model = UnicycleModel()
    rng = np.random.default_rng(4)
    s = LiftStrategy(kind="rigid", d=1.0)
    x = lift_sample(None, s, 0.0, rng, model, np.array([-1, -1]), np.array([1, 1]))
    assert x.shape == (4,)


def test_completeness_preserving_sampling_covers_space():
    # biased with p < 1 reaches every region of the workspace
    model = UnicycleModel()
    xi = [np.array([0.0, 0.0]), np.array([1.0, 0.0])]
    rng = np.random.default_rng(5)
    s = LiftStrategy(kind="biased", d=0.5, p=0.9)
    lo, hi = np.array([-8.0, -8.0]), np.array([8.0, 8.0])
    xs = np.array([lift_sample(xi, s, 0.0, rng, model, lo, hi) for _ in range(20000)])
    hist, _, _ = np.histogram2d(xs[:, 0], xs[:, 1], bins=8,
                                range=[[-8, 8], [-8, 8]])
    assert (hist > 0).all()


# ---------------------------------------------------------------------------
# inevitable collision


def test_inevitable_collision_cases():
    cfg = SafetyConfig(p_safe=0.95, alpha=0.99, r_body=0.2)
    model = UnicycleModel()
    cmap = wall_map_2d(gap=None, wall_x=(8.0, 9.0))
    stationary = Belief(np.array([2.0, 0.0, 0.0, 0.0]), np.zeros((4, 4)))
    assert not inevitable_collision(stationary, model, cmap, cfg)
    rushing = Belief(np.array([7.2, 0.0, 2.0, 0.0]), np.zeros((4, 4)))
    assert inevitable_collision(rushing, model, cmap, cfg)
    clear = Belief(np.array([0.0, 0.0, 2.0, 0.0]), np.zeros((4, 4)))
    assert not inevitable_collision(clear, model, cmap, cfg)


# ---------------------------------------------------------------------------
# constrained planner


def solve_once(cmap, goal_lo, goal_hi, seed, lift=None, budget=(0.3, 1.2)):
    problem = problem_for(cmap, goal_lo, goal_hi, lift)
    problem.budget_lead, problem.budget_constrained = budget
    planner = MultiLayerPlanner(budget_mode="iterations",
                                lead_iters_per_second=1000, sst_iters_per_second=600)
    return planner.solve(problem, np.random.default_rng(seed))


def test_start_inside_goal_returns_zero_length():
    cmap = empty_map_2d()
    problem = problem_for(cmap, [-1.0, -1.0], [1.0, 1.0])
    planner = MultiLayerPlanner(budget_mode="iterations")
    result = planner.solve(problem, np.random.default_rng(0))
    assert result.trajectory is not None
    assert result.trajectory.total_length == 0.0
    assert result.trajectory.reaches_goal


def test_open_world_success_rate():
    # goal 10 m ahead; solved in at least 95/100 seeded runs
    cmap = empty_map_2d()
    solved = 0
    for seed in range(100):
        r = solve_once(cmap, [9.0, -1.5], [11.0, 1.5], seed)
        solved += r.trajectory is not None
    assert solved >= 95


def test_returned_trajectory_replays_and_is_safe():
    cmap = wall_map_2d(gap=(-2.0, 2.0))
    from safenav.collision import is_safe

    cfg = SafetyConfig(p_safe=0.95, alpha=0.99, r_body=0.2)
    for seed in range(10):
        r = solve_once(cmap, [11.0, -1.5], [13.0, 1.5], seed)
        if r.trajectory is None:
            continue
        model = UnicycleModel(UnicycleParams())
        b = r.trajectory.nodes[0][0]
        for belief, control in r.trajectory.nodes[1:]:
            b = model.propagate(b, control)
            np.testing.assert_allclose(b.mean, belief.mean, atol=1e-9)
            np.testing.assert_allclose(b.cov, belief.cov, atol=1e-9)
            assert is_safe(belief, cmap, cfg)
        assert r.trajectory.reaches_goal


def test_anytime_cost_monotone_and_budget_never_hurts():
    cmap = wall_map_2d(gap=(-2.0, 2.0))
    for seed in range(6):
        r1 = solve_once(cmap, [11.0, -1.5], [13.0, 1.5], seed, budget=(0.3, 1.2))
        trace = r1.stats.incumbent_trace
        costs = [c for _, c in trace]
        assert all(b < a for a, b in zip(costs, costs[1:]))
        r2 = solve_once(cmap, [11.0, -1.5], [13.0, 1.5], seed, budget=(0.3, 2.4))
        if r1.trajectory is not None and r2.trajectory is not None:
            assert r2.trajectory.total_length <= r1.trajectory.total_length + 1e-9


def test_single_layer_mode_forces_uniform():
    cmap = empty_map_2d()
    problem = problem_for(cmap, [9.0, -1.5], [11.0, 1.5], LiftStrategy(kind="adaptive"))
    planner = MultiLayerPlanner(budget_mode="iterations", single_layer=True)
    result = planner.solve(problem, np.random.default_rng(1))
    assert result.lead_path is None
    assert problem.lift.kind == "uniform"


def test_unsafe_start_reported():
    cmap = wall_map_2d(gap=None)
    start = Belief(np.array([8.5, 0.0, 0.0, 0.0]), np.zeros((4, 4)))  # inside the wall
    problem = problem_for(cmap, [1.0, -1.0], [3.0, 1.0], start=start)
    planner = MultiLayerPlanner(budget_mode="iterations")
    result = planner.solve(problem, np.random.default_rng(0))
    assert not result.start_safe
