"""Acceptance gate: one test per criterion, each printing a PASS line.

Heavier criteria run reduced-but-faithful protocol sizes; every tolerance
is fixed here, not tuned at runtime.
"""

import math
import time
from collections import defaultdict

import numpy as np
import pytest

from safenav.bench import CollisionBenchSpec, PlannerBenchSpec, run_collision_benchmark, run_planner_benchmark
from safenav.collision import GridField, SafetyConfig, oracle_p_collision, p_collision_alpha
from safenav.fusion import build_cumulative
from safenav.geometry import identity
from safenav.kernels import build_kernel, critical_value
from safenav.manager import MissionConfig, run_mission
from safenav.models import Belief, Control, UnicycleModel, UnicycleParams, make_model
from safenav.simworld import DriftSpec, SensorSpec, builtin_world
from safenav.submaps import Scan, SensorModelParams, SubmapStore, logistic


def _report(name, ok, detail=""):
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name} {detail}")
    assert ok, f"{name}: {detail}"


# criterion 1 -----------------------------------------------------------------

CRITICAL_TABLE = {
    (0.85, 1): 1.4395, (0.90, 1): 1.6449, (0.95, 1): 1.9600,
    (0.99, 1): 2.5758, (0.999, 1): 3.2905,
    (0.85, 2): 1.9479, (0.90, 2): 2.1460, (0.95, 2): 2.4477,
    (0.99, 2): 3.0349, (0.999, 2): 3.7169,
    (0.85, 3): 2.3059, (0.90, 3): 2.5003, (0.95, 3): 2.7955,
    (0.99, 3): 3.3682, (0.999, 3): 4.0331,
}


def test_c1_critical_value_table():
    t0 = time.time()
    worst = 0.0
    for (alpha, dim), want in CRITICAL_TABLE.items():
        worst = max(worst, abs(critical_value(alpha, dim) - want))
    elapsed = time.time() - t0
    _report("C1 critical-value table (15 entries, tol 1e-3)",
            worst < 1e-3 and elapsed < 1.0,
            f"worst err {worst:.2e}, {elapsed:.2f}s")


# criterion 2 -----------------------------------------------------------------

def test_c2_collision_checker_soundness():
    from safenav.bench import make_scene, scene_map

    t0 = time.time()
    rng = np.random.default_rng(202)
    boxes = make_scene(60, rng, dim=3)
    cmap = scene_map(boxes, dim=3)
    field = GridField(cmap, f_unknown=0.0)
    worst_gap = -1.0
    worst_abs = 0.0
    truth_rngs = rng.spawn(1000)
    for k in range(1000):
        mean = rng.uniform(0.0, 40.0, 3)
        sigma = rng.uniform(0.5, 3.0)
        b = Belief(np.array([*mean, 0.0, 0.0]), np.diag([sigma ** 2] * 3 + [0.0, 0.0]))
        p_alpha = p_collision_alpha(b, cmap, 0.99, f_unknown=0.0)
        p_mc = oracle_p_collision(b, field, 100_000, truth_rngs[k]).p
        worst_gap = max(worst_gap, p_mc - (p_alpha + 0.01 + 0.05))
        worst_abs = max(worst_abs, abs(p_alpha - p_mc))
    elapsed = time.time() - t0
    _report("C2 checker soundness (1000 beliefs, mc<=p+0.06, |diff|<=0.06)",
            worst_gap <= 0.0 and worst_abs <= 0.06 and elapsed < 120.0,
            f"worst bound slack {worst_gap:.4f}, worst |diff| {worst_abs:.4f}, {elapsed:.0f}s")


# criterion 3 -----------------------------------------------------------------

def test_c3_collision_benchmark_trend():
    t0 = time.time()
    spec = CollisionBenchSpec(
        n_obstacles=(0, 100, 200), sigmas=(0.5, 1.5, 3.0), p_safes=(0.9, 0.95),
        alphas=(0.99,), beliefs_per_cell=1000, seed=7, truth_samples=100_000,
    )
    rows = run_collision_benchmark(spec)
    cells = defaultdict(dict)
    for r in rows:
        cells[(r["sigma"], r["p_safe"], r["n_o"])][r["method"]] = r["accuracy"]
    trend_ok = True
    mono_ok = True
    for (s, p, n), accs in cells.items():
        if n >= 100:
            ak = accs["alpha_kernel_0.99"]
            if ak + 1e-12 < accs["cc_open_loop_sum"] or ak + 1e-12 < accs["cc_per_obstacle"]:
                trend_ok = False
    for s in spec.sigmas:
        for p in spec.p_safes:
            for method in ("cc_open_loop_sum", "cc_per_obstacle"):
                seq = [cells[(s, p, n)][method] for n in spec.n_obstacles]
                if not all(b <= a + 1e-12 for a, b in zip(seq, seq[1:])):
                    mono_ok = False
    elapsed = time.time() - t0
    _report("C3 benchmark trend (kernel >= cc in crowded cells; cc non-increasing)",
            trend_ok and mono_ok and elapsed < 600.0,
            f"{elapsed:.0f}s")


# criterion 4 -----------------------------------------------------------------

def test_c4_fusion_matches_single_map():
    t0 = time.time()
    rng = np.random.default_rng(44)
    scans = []
    for k in range(5):
        beams = []
        for a in rng.uniform(0, 2 * math.pi, 24):
            d = np.array([math.cos(a), math.sin(a)])
            beams.append((d, float(rng.uniform(1.0, 7.0)), bool(rng.random() < 0.8)))
        scans.append(Scan(np.array([0.125 + 0.5 * k, 0.125]), 0.0, beams))

    multi = SubmapStore(SensorModelParams(), 0.25, delta_t_lm=1.0)
    for k, scan in enumerate(scans):
        multi.start_submap(identity(2), float(k))
        multi.integrate_scan(scan, float(k))
    single = SubmapStore(SensorModelParams(), 0.25, delta_t_lm=1e9)
    single.start_submap(identity(2), 0.0)
    for k, scan in enumerate(scans):
        single.integrate_scan(scan, float(k))

    fused = build_cumulative(identity(2), multi)
    worst = 0.0
    n_checked = 0
    for center, p in single.known_cells(0):
        got, known = fused.value_at(center)
        assert known
        worst = max(worst, abs(got - p))
        n_checked += 1
    elapsed = time.time() - t0
    _report("C4 five-submap fusion equals single-map integration (tol 1e-6)",
            worst <= 1e-6 and n_checked > 200 and elapsed < 10.0,
            f"worst diff {worst:.2e} over {n_checked} cells, {elapsed:.1f}s")


# criterion 5 -----------------------------------------------------------------

def test_c5_sensor_model_unit_values():
    t0 = time.time()
    from safenav.submaps import occluded_increment

    p = SensorModelParams()
    checks = [
        abs(logistic(p.l_occ) - 0.7006) < 5e-5,
        abs(logistic(p.l_free) - 0.4013) < 5e-5,
        abs(logistic(p.l_max) - 0.9707) < 5e-5,
        abs(occluded_increment(1.0, p) - 0.68) < 1e-12,
    ]
    # integration-level checks against the same oracle
    store = SubmapStore(p, 0.25)
    store.start_submap(identity(2), 0.0)
    beam = (np.array([1.0, 0.0]), 2.0, True)
    store.integrate_scan(Scan(np.array([0.125, 0.125]), 0.0, [beam]), 0.0)
    grid = store.active.grid
    checks.append(abs(logistic(grid[(8, 0)]) - 0.7006) < 5e-5)
    checks.append(abs(logistic(grid[(0, 0)]) - 0.4013) < 5e-5)
    for _ in range(9):
        store.integrate_scan(Scan(np.array([0.125, 0.125]), 0.0, [beam]), 0.0)
    checks.append(abs(logistic(grid[(8, 0)]) - 0.9707) < 5e-5)
    elapsed = time.time() - t0
    _report("C5 sensor-model values (0.7006 / 0.4013 / 0.9707 / dL 0.68)",
            all(checks) and elapsed < 1.0, f"{elapsed:.2f}s")


# criterion 8 -----------------------------------------------------------------

def test_c8_frame_prediction_continuity():
    t0 = time.time()
    from safenav.manager import MissionManager, predict_frame, register_scan
    from safenav.simworld import Executor, raycast_scan

    cfg = MissionConfig(
        world="open2d", model="unicycle", seed=5,
        goal_lo=(25.0, -3.0), goal_hi=(29.0, 3.0),
        safety=SafetyConfig(p_safe=0.95, alpha=0.99, r_body=0.3),
        max_sim_time=120.0,
        model_params=dict(sigma_w=(0.0, 0.0, 0.0, 0.0), ref_speed_max=1.0),
        drift=DriftSpec(noise_scale=0.0),
    )
    world = builtin_world("open2d")
    model = make_model("unicycle", **cfg.model_params)
    root = np.random.default_rng(cfg.seed)
    rng_exec, rng_sensor, rng_plan = root.spawn(3)
    ex = Executor(world, model, np.array(cfg.start), rng_exec, cfg.drift, 0.3)
    store = SubmapStore(cfg.sensor_model, cfg.resolution, cfg.delta_t_lm)
    mgr = MissionManager(cfg, world, model, ex, store, rng_plan)

    worst = 0.0
    n_iter = 0
    dt = model.dt
    for tick in range(int(90.0 / dt)):
        t = tick * dt
        if tick % 20 == 0:
            raw = raycast_scan(world, ex.true_state[:2], cfg.sensor, rng_sensor)
            register_scan(store, raw, model.pose_from_belief(ex.belief), t)
        if tick % 30 == 0 and n_iter < 50:
            predicted = predict_frame(ex, cfg.delta_t_mp)
            mgr.run_iteration(t)
            for _ in range(30):
                ex.tick()
            if ex.timeline.end_time() > ex.t:  # plan still running at dispatch
                err = float(np.abs(predicted.mean[:2] - ex.belief.mean[:2]).max())
                worst = max(worst, err)
                worst = max(worst, float(np.abs(predicted.mean[:2] - ex.true_state[:2]).max()))
                n_iter += 1
        else:
            ex.tick()
        if n_iter >= 50:
            break
    elapsed = time.time() - t0
    _report("C8 predicted frame equals executor pose at dispatch (tol 1e-6)",
            n_iter >= 20 and worst <= 1e-6 and elapsed < 60.0,
            f"worst err {worst:.2e} over {n_iter} dispatches, {elapsed:.0f}s")


# criterion 9 -----------------------------------------------------------------

def test_c9_property_suites():
    t0 = time.time()
    rng = np.random.default_rng(99)
    ok = True

    # covariance PSD preservation under propagation
    model = UnicycleModel(UnicycleParams(sigma_w=(0.01, 0.01, 0.02, 0.02)))
    for _ in range(2000):
        z = rng.uniform(-5, 5, 4)
        b = Belief(z, np.zeros((4, 4)))
        c = model.bind_control(model.sample_control(rng), z)
        out = model.propagate(b, c)
        if np.linalg.eigvalsh(out.cov).min() < -1e-10:
            ok = False

    # kernel mass window
    for sigma in (0.0, 0.2, 1.0, 3.0, 5.0):
        for h in (0.1, 0.2, 0.5):
            for alpha in (0.9, 0.95, 0.99, 0.999):
                k = build_kernel([sigma ** 2] * 2, h, alpha)
                if not (alpha - 0.05 <= k.mass <= 1.0 + 1e-9):
                    ok = False

    # log-odds clamp bounds under random scan sequences
    store = SubmapStore(SensorModelParams(), 0.25)
    store.start_submap(identity(2), 0.0)
    for k in range(30):
        beams = []
        for a in rng.uniform(0, 2 * math.pi, 18):
            d = np.array([math.cos(a), math.sin(a)])
            beams.append((d, float(rng.uniform(0.5, 9.9)), bool(rng.random() < 0.7)))
        store.integrate_scan(Scan(np.array([0.1, 0.1]), 0.0, beams), 0.01 * k)
    vals = np.array(list(store.active.grid.values()))
    if vals.min() < -2.0 - 1e-12 or vals.max() > 3.5 + 1e-12:
        ok = False

    # trajectory replayability
    from safenav.planner import LiftStrategy, MultiLayerPlanner, PlanningProblem
    from safenav.simworld import map_from_world

    cmap = map_from_world(builtin_world("open2d"), 0.25)
    problem = PlanningProblem(
        start=Belief(np.zeros(4), np.zeros((4, 4))),
        goal_lo=np.array([9.0, -2.0]), goal_hi=np.array([13.0, 2.0]),
        safety=SafetyConfig(p_safe=0.95, alpha=0.99, r_body=0.2),
        cmap=cmap, model=model,
        bounds_lo=builtin_world("open2d").bounds_lo,
        bounds_hi=builtin_world("open2d").bounds_hi,
        lift=LiftStrategy(kind="adaptive", d0=1.0, growth_rate=10.0),
    )
    planner = MultiLayerPlanner(budget_mode="iterations")
    replay_ok = False
    for seed in range(5):
        result = planner.solve(problem, np.random.default_rng(seed))
        if result.trajectory is None:
            continue
        b = result.trajectory.nodes[0][0]
        good = True
        for belief, control in result.trajectory.nodes[1:]:
            b = model.propagate(b, control)
            if not (np.allclose(b.mean, belief.mean, atol=1e-9)
                    and np.allclose(b.cov, belief.cov, atol=1e-9)):
                good = False
        replay_ok = replay_ok or good
        if not good:
            ok = False

    # determinism under a fixed seed
    cfg = MissionConfig(
        world="open2d", model="unicycle", seed=21,
        goal_lo=(8.0, -2.0), goal_hi=(12.0, 2.0),
        safety=SafetyConfig(p_safe=0.95, alpha=0.99, r_body=0.3),
        max_sim_time=10.0,
        model_params=dict(sigma_w=(1e-4, 1e-4, 5e-4, 5e-4)),
    )
    r1 = run_mission(cfg)
    r2 = run_mission(cfg)
    if r1.events != r2.events:
        ok = False
    if not np.array_equal(
        np.array([e[1] for e in r1.executor_log]),
        np.array([e[1] for e in r2.executor_log]),
    ):
        ok = False

    elapsed = time.time() - t0
    _report("C9 property suites (PSD, mass window, clamps, replay, determinism)",
            ok and replay_ok, f"{elapsed:.0f}s")


# criterion 6 -----------------------------------------------------------------

def test_c6_lift_strategy_trends():
    t0 = time.time()
    seeds = 200
    spec = PlannerBenchSpec(
        seeds=seeds,
        strategies=(("slp", None), ("rigid", 0.0), ("rigid", 5.0),
                    ("rigid", 30.0), ("adaptive", None)),
    )
    rows = run_planner_benchmark(spec)
    solved = defaultdict(int)
    for r in rows:
        solved[r["strategy"]] += r["solved"]
    intermediate_best = (solved["rigid_d5"] > solved["rigid_d0"]
                         and solved["rigid_d5"] > solved["rigid_d30"])
    adaptive_vs_slp = solved["adaptive"] >= solved["slp"]
    # anytime monotonicity holds in every run by construction of the
    # incumbent update; checked explicitly on a sample of solves
    from safenav.bench import _bench_problem
    from safenav.planner import LiftStrategy, MultiLayerPlanner
    from safenav.simworld import builtin_world, map_from_world
    from safenav.models import make_model

    world = builtin_world("corridor3d")
    model = make_model("fixed_wing", v_max=2.5, t_prop_max=1.5,
                       sigma_w0=(0.008, 0.008, 0.008, 0.004, 0.004))
    cfg = SafetyConfig(p_safe=0.95, alpha=0.99, r_body=0.2, f_unknown=0.0)
    cmap = __import__("safenav.simworld", fromlist=["map_from_world"]).map_from_world(world, 0.2)
    planner = MultiLayerPlanner(budget_mode="iterations",
                                lead_iters_per_second=spec.lead_iters_per_second,
                                sst_iters_per_second=spec.sst_iters_per_second)
    monotone = True
    for seed in range(20):
        problem = _bench_problem(world, cmap, cfg, model, LiftStrategy(kind="adaptive"), spec)
        result = planner.solve(problem, np.random.default_rng([5, seed]))
        costs = [c for _, c in result.stats.incumbent_trace]
        if not all(b < a for a, b in zip(costs, costs[1:])):
            monotone = False
    elapsed = time.time() - t0
    _report(
        "C6 lift-strategy trends (intermediate d best; adaptive >= slp; anytime monotone)",
        intermediate_best and adaptive_vs_slp and monotone and elapsed < 1800.0,
        f"solved={dict(solved)}, {elapsed:.0f}s",
    )


# criterion 7 -----------------------------------------------------------------

def test_c7_breakwater_missions():
    t0 = time.time()
    successes = 0
    collisions = 0
    worst_solve = 0.0
    through_gap = 0
    for seed in range(20):
        cfg = MissionConfig(
            world="breakwater2d", model="unicycle", seed=seed,
            start=(6.0, -6.0, 0.0, 0.0),
            goal_lo=(30.0, -8.0), goal_hi=(34.0, -4.0),
            safety=SafetyConfig(p_safe=0.95, alpha=0.99, r_body=0.3),
            max_sim_time=240.0, n_cp=20, delta_t_lm=30.0,
            sensor=SensorSpec(angular_resolution=math.radians(5.0), period=1.0,
                              noise_sigma=0.02),
            lead_iters_per_second=800.0, sst_iters_per_second=500.0,
            model_params=dict(sigma_w=(2e-3, 2e-3, 4e-3, 4e-3), ref_speed_max=2.0,
                              ref_offset_max=3.0, t_prop_max=2.0),
        )
        res = run_mission(cfg)
        successes += res.success
        collisions += res.collisions
        worst_solve = max(worst_solve, max(r.solve_wall_time for r in res.iterations))
        if res.success:
            # goal is only reachable through a 4 m gap: crossing the block
            # band means the mission threaded one
            xs = np.array([e[1][0] for e in res.executor_log])
            if xs.max() >= 26.0 and xs.min() <= 14.0:
                through_gap += 1
    elapsed = time.time() - t0
    _report(
        "C7 breakwater missions (>=18/20 reach goal through a gap, zero collisions, solve <= 1.5 s)",
        successes >= 18 and through_gap == successes and collisions == 0
        and worst_solve <= 1.5 and elapsed < 1200.0,
        f"success {successes}/20, collisions {collisions}, worst solve {worst_solve:.2f}s, {elapsed:.0f}s",
    )
