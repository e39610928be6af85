import math

import numpy as np
import pytest

from safenav.collision import SafetyConfig
from safenav.manager import (
    MissionConfig,
    MissionManager,
    empty_map,
    predict_frame,
    register_scan,
    run_mission,
    satisfies_criteria,
)
from safenav.models import Belief, Control, UnicycleModel, make_model
from safenav.planner import LiftStrategy, Trajectory
from safenav.simworld import DriftSpec, Executor, SensorSpec, World, builtin_world
from safenav.submaps import SensorModelParams, SubmapStore


def quick_config(**kw):
    defaults = dict(
        world="open2d", model="unicycle", seed=0,
        start=(0.0, 0.0, 0.0, 0.0),
        goal_lo=(10.0, -2.0), goal_hi=(14.0, 2.0),
        safety=SafetyConfig(p_safe=0.95, alpha=0.99, r_body=0.3),
        max_sim_time=60.0,
        model_params=dict(sigma_w=(1e-4, 1e-4, 5e-4, 5e-4)),
    )
    defaults.update(kw)
    return MissionConfig(**defaults)


def test_config_budget_consistency():
    with pytest.raises(ValueError):
        MissionConfig(delta_t_mp=2.0, delta_t_l=0.3, delta_t_c=1.2)
    with pytest.raises(ValueError):
        MissionConfig(n_cp=0)


def test_satisfies_criteria_rules():
    goal_traj = Trajectory([(Belief(np.zeros(4), np.zeros((4, 4))), None)], reaches_goal=True)
    no_goal = Trajectory([(Belief(np.zeros(4), np.zeros((4, 4))), None)], reaches_goal=False)
    assert satisfies_criteria(goal_traj, math.inf)  # invalidated ongoing: infinite length
    assert not satisfies_criteria(None, math.inf)
    assert not satisfies_criteria(no_goal, math.inf)
    # 12 m new vs 10 m ongoing: keep the ongoing
    long_new = Trajectory(
        [(Belief(np.array([0.0, 0, 0, 0]), np.zeros((4, 4))), None),
         (Belief(np.array([12.0, 0, 0, 0]), np.zeros((4, 4))),
          Control(np.zeros(4), 0.05, bound=True))],
        reaches_goal=True,
    )
    assert not satisfies_criteria(long_new, 10.0)
    assert satisfies_criteria(long_new, 12.5)


def make_executor(model, start, timeline_controls=None, world=None):
    world = world or builtin_world("open2d")
    ex = Executor(world, model, start, np.random.default_rng(0), DriftSpec(0.0), 0.0)
    if timeline_controls:
        ex.timeline.dispatch(0.0, timeline_controls)
    return ex


def test_predict_frame_without_plan_returns_current():
    model = UnicycleModel()
    ex = make_executor(model, np.array([1.0, 2.0, 0.0, 0.0]))
    b = predict_frame(ex, 1.5)
    np.testing.assert_allclose(b.mean, [1.0, 2.0, 0.0, 0.0])


def test_predict_frame_matches_executor_under_zero_noise():
    model = UnicycleModel()
    start = np.array([0.0, 0.0, 0.0, 0.0])
    controls = [Control(np.array([3.0, 1.0, 0.0, 0.0]), 0.05, bound=True)] * 100
    ex = make_executor(model, start, controls)
    predicted = predict_frame(ex, 1.5)
    for _ in range(30):  # 1.5 s of ticks
        ex.tick()
    np.testing.assert_allclose(predicted.mean, ex.belief.mean, atol=1e-9)
    np.testing.assert_allclose(predicted.mean, ex.true_state, atol=1e-9)


def test_predict_frame_truncates_at_schedule_end():
    model = UnicycleModel()
    start = np.array([0.0, 0.0, 0.0, 0.0])
    controls = [Control(np.array([3.0, 1.0, 0.0, 0.0]), 0.05, bound=True)] * 10  # 0.5 s
    ex = make_executor(model, start, controls)
    short = predict_frame(ex, 0.5)
    longer = predict_frame(ex, 5.0)
    np.testing.assert_allclose(short.mean, longer.mean, atol=1e-12)


def test_mission_open_world_reaches_goal():
    res = run_mission(quick_config(seed=1))
    assert res.success
    assert res.collisions == 0
    assert res.goal_time is not None
    # first plan in an empty map heads straight for the goal: its length is
    # within a small factor of the straight-line distance to the box centre
    first_dispatch = next(e for e in res.events if e["event"] == "dispatch")
    assert first_dispatch["length"] <= 1.1 * 12.2


def test_mission_wall_reveal_replans():
    # straight route blocked by a wall the robot discovers mid-mission
    world = World(
        "reveal", 2,
        np.array([-5.0, -12.0]), np.array([30.0, 12.0]),
        ((np.array([12.0, -9.0]), np.array([14.0, 3.0])),),
    )
    cfg = quick_config(
        start=(0.0, -4.0, 0.0, 0.0),
        goal_lo=(20.0, -6.0), goal_hi=(24.0, -2.0),
        max_sim_time=120.0,
        n_cp=20,
    )
    res = run_mission(cfg, world=world)
    kinds = [e["event"] for e in res.events]
    assert "invalidated" in kinds  # the straight plan must die at the wall
    assert res.success
    assert res.collisions == 0


def test_contingency_trigger_and_counter_reset():
    # goal walled in on all sides: after n_cp stalled iterations the goal
    # swaps to the deployment point
    world = World(
        "box", 2,
        np.array([-5.0, -10.0]), np.array([25.0, 10.0]),
        (
            (np.array([14.0, -6.0]), np.array([15.0, 6.0])),
            (np.array([19.0, -6.0]), np.array([20.0, 6.0])),
            (np.array([15.0, 5.0]), np.array([19.0, 6.0])),
            (np.array([15.0, -6.0]), np.array([19.0, -5.0])),
        ),
    )
    cfg = quick_config(
        goal_lo=(16.0, -1.0), goal_hi=(18.0, 1.0),
        n_cp=5, max_sim_time=90.0,
    )
    res = run_mission(cfg, world=world)
    kinds = [e["event"] for e in res.events]
    assert "contingency_return" in kinds
    assert not res.success


def test_emergency_stop_after_return_fails():
    # robot walled in away from its deployment point: the goal swap cannot
    # help, the return also fails n_cp times, and the manager orders a stop
    world = World(
        "cell", 2,
        np.array([-20.0, -6.0]), np.array([6.0, 6.0]),
        (
            (np.array([-3.0, -3.0]), np.array([3.0, -2.0])),
            (np.array([-3.0, 2.0]), np.array([3.0, 3.0])),
            (np.array([-3.0, -3.0]), np.array([-2.0, 3.0])),
            (np.array([2.0, -3.0]), np.array([3.0, 3.0])),
        ),
    )
    cfg = quick_config(
        start=(-15.0, 0.0, 0.0, 0.0),  # deployment point, far outside the cell
        goal_lo=(4.0, -1.0), goal_hi=(5.0, 1.0),
        n_cp=3, max_sim_time=60.0,
    )
    model = make_model("unicycle", **cfg.model_params)
    ex = make_executor(model, np.array([0.0, 0.0, 0.0, 0.0]), world=world)
    store = SubmapStore(cfg.sensor_model, cfg.resolution, cfg.delta_t_lm)
    mgr = MissionManager(cfg, world, model, ex, store, np.random.default_rng(1))
    from safenav.manager import register_scan
    from safenav.simworld import raycast_scan

    rng_s = np.random.default_rng(2)
    for k in range(16):
        t = 1.5 * k
        raw = raycast_scan(world, ex.true_state[:2], cfg.sensor, rng_s)
        register_scan(store, raw, model.pose_from_belief(ex.belief), t)
        mgr.run_iteration(t)
        for _ in range(30):
            ex.tick()
        if mgr.aborted:
            break
    kinds = [e["event"] for e in mgr.events]
    assert "contingency_return" in kinds
    assert "emergency_stop" in kinds
    assert mgr.aborted


def test_failure_counter_resets_on_solution():
    model = make_model("unicycle", sigma_w=(1e-4, 1e-4, 5e-4, 5e-4))
    world = builtin_world("open2d")
    cfg = quick_config()
    ex = make_executor(model, np.array(cfg.start), world=world)
    store = SubmapStore(cfg.sensor_model, cfg.resolution, cfg.delta_t_lm)
    mgr = MissionManager(cfg, world, model, ex, store, np.random.default_rng(3))
    report = mgr.run_iteration(0.0)
    assert report.dispatched
    assert mgr.failures == 0


def test_safe_prefix_dispatch_on_invalidation():
    # dispatch a straight plan, then inject a wall into the store so the
    # next iteration must truncate the schedule to a safe prefix
    model = make_model("unicycle", sigma_w=(0.0, 0.0, 0.0, 0.0))
    world = builtin_world("open2d")
    cfg = quick_config(model_params=dict(sigma_w=(0.0, 0.0, 0.0, 0.0)))
    ex = make_executor(model, np.array(cfg.start), world=world)
    store = SubmapStore(cfg.sensor_model, cfg.resolution, cfg.delta_t_lm)
    mgr = MissionManager(cfg, world, model, ex, store, np.random.default_rng(5))
    r0 = mgr.run_iteration(0.0)
    assert r0.dispatched
    # wall across the route at x ~ 6 m, fully saturated evidence
    from safenav.geometry import identity

    store.start_submap(identity(2), 0.1)
    sub = store.submaps[-1]
    h = cfg.resolution
    for i in range(int(5.5 / h), int(6.5 / h)):
        for j in range(int(-4.0 / h), int(4.0 / h)):
            sub.grid[(i, j)] = 3.5
    store.generation += 1
    for _ in range(30):
        ex.tick()
    r1 = mgr.run_iteration(1.5)
    assert not r1.ongoing_valid
    kinds = [e["event"] for e in mgr.events]
    assert "invalidated" in kinds
    # whatever remains scheduled (safe prefix, or a detour dispatched in the
    # same iteration) never enters the revealed wall's footprint
    b = Belief(ex.belief.mean, np.zeros((4, 4)))
    for c, avail in ex.timeline.controls_from(ex.t):
        n = int(round(avail / model.dt))
        for step in model.propagate_path(b, Control(c.u, n * model.dt, bound=True)) if n else []:
            x, y = step.mean[0], step.mean[1]
            assert not (5.3 < x < 6.7 and -4.0 < y < 4.0), (x, y)
            b = step


def test_mission_report_lengths_consistent():
    res = run_mission(quick_config(seed=2))
    assert len(res.iterations) >= 1
    assert res.sim_time > 0
    assert isinstance(res.events, list) and res.events[0]["event"] == "mission_start"


def test_three_d_pipeline_smoke():
    # fixed-wing + 3-D lidar: scans register through the yawed submap path
    # and the manager loop plans on the fused 3-D map
    from safenav.manager import register_scan
    from safenav.simworld import raycast_scan

    world = builtin_world("corridor3d")
    cfg = MissionConfig(
        world="corridor3d", model="fixed_wing", seed=0,
        start=(6.0, 0.0, 7.0, 0.3, 0.0),
        goal_lo=(30.0, -5.0, 5.0), goal_hi=(34.0, 5.0, 9.0),
        safety=SafetyConfig(p_safe=0.95, alpha=0.99, r_body=0.2),
        max_sim_time=10.0, resolution=0.2,
        sensor=SensorSpec(kind="lidar-3d", angular_resolution=math.radians(15.0),
                          elevation_steps=5, noise_sigma=0.0),
        model_params=dict(sigma_w0=(0.002, 0.002, 0.002, 0.001, 0.001), v_max=2.5),
    )
    model = make_model("fixed_wing", **cfg.model_params)
    ex = Executor(world, model, np.array(cfg.start), np.random.default_rng(0),
                  DriftSpec(1.0), cfg.safety.r_body)
    store = SubmapStore(cfg.sensor_model, cfg.resolution, cfg.delta_t_lm)
    mgr = MissionManager(cfg, world, model, ex, store, np.random.default_rng(1))
    for k in range(4):
        t = 1.5 * k
        raw = raycast_scan(world, ex.true_state[:3], cfg.sensor, np.random.default_rng([2, k]))
        register_scan(store, raw, model.pose_from_belief(ex.belief), t)
        report = mgr.run_iteration(t)
        for _ in range(30):
            ex.tick()
    assert store.submaps and store.submaps[0].grid
    assert report.map_generation > 0
    assert ex.collisions == 0
