"""Mission management: the iterative mapping-planning loop.

Each iteration predicts the planning frame (the robot state at the moment
the next plan activates), rebuilds the fused map relative to it, checks the
plan in execution against the new map (dispatching only its safe prefix if
it became invalid), solves the planning problem within the cycle budget,
and dispatches the new trajectory when it beats the ongoing one on length.
Repeated planning failures trigger a contingency that retargets the
mission back to the deployment point; failing that too ends in an
emergency stop.

Planning compute never consumes simulated time (frozen clock), but a new
plan still activates one cycle after the iteration that produced it, which
is what the frame prediction accounts for.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .collision import SafetyConfig, is_safe
from .fusion import CumulativeMap, build_cumulative
from .geometry import PoseBelief, compound, inverse
from .models import Belief, Control
from .planner import (
    LiftStrategy,
    MultiLayerPlanner,
    PlanningProblem,
    Trajectory,
    inevitable_collision,
)
from .simworld import (
    DriftSpec,
    Executor,
    RawScan,
    SensorSpec,
    World,
    builtin_world,
    raycast_scan,
)
from .submaps import Scan, SensorModelParams, SubmapStore

__all__ = [
    "MissionConfig",
    "MissionManager",
    "MissionResult",
    "IterationReport",
    "satisfies_criteria",
    "predict_frame",
    "register_scan",
    "empty_map",
    "run_mission",
]


@dataclass
class MissionConfig:
    world: str = "open2d"
    model: str = "unicycle"
    seed: int = 0
    start: tuple = (0.0, 0.0, 0.0, 0.0)
    goal_lo: tuple = (10.0, -2.0)
    goal_hi: tuple = (14.0, 2.0)
    safety: SafetyConfig = field(default_factory=SafetyConfig)
    delta_t_mp: float = 1.5
    delta_t_l: float = 0.3
    delta_t_c: float = 1.2
    n_cp: int = 10
    max_sim_time: float = 240.0
    resolution: float = 0.25
    delta_t_lm: float = 10.0
    sensor: SensorSpec = field(default_factory=SensorSpec)
    sensor_model: SensorModelParams = field(default_factory=SensorModelParams)
    drift: DriftSpec = field(default_factory=DriftSpec)
    lift: LiftStrategy = field(default_factory=LiftStrategy)
    budget_mode: str = "iterations"
    lead_iters_per_second: float = 1000.0
    sst_iters_per_second: float = 600.0
    single_layer: bool = False
    model_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if abs(self.delta_t_mp - (self.delta_t_l + self.delta_t_c)) > 1e-9:
            raise ValueError("delta_t_mp must equal delta_t_l + delta_t_c")
        if self.n_cp < 1:
            raise ValueError("n_cp must be at least 1")


@dataclass
class IterationReport:
    index: int
    sim_time: float
    frame_mean: np.ndarray
    map_generation: int
    ongoing_valid: bool
    prefix_dispatched: bool
    solved: bool
    dispatched: bool
    start_safe: bool
    failures: int
    solve_wall_time: float
    other_phases_wall_time: float
    incumbent_length: float | None
    lead_found: bool = False


@dataclass
class MissionResult:
    config: MissionConfig
    success: bool
    aborted: bool
    goal_time: float | None
    sim_time: float
    path_length: float
    collisions: int
    iterations: list
    events: list
    executor_log: list


def empty_map(frame: PoseBelief, resolution: float) -> CumulativeMap:
    dim = frame.dim
    values = np.full((1,) * dim, 0.5)
    known = np.zeros((1,) * dim, dtype=bool)
    values.setflags(write=False)
    known.setflags(write=False)
    return CumulativeMap(frame, values, known, np.zeros(dim, dtype=int), resolution, 0)


def satisfies_criteria(new: Trajectory | None, ongoing_length: float) -> bool:
    """Dispatch rule: the new plan must exist, reach the goal, and not be
    longer than what remains of the ongoing one (infinite when invalid)."""
    if new is None or not new.reaches_goal:
        return False
    return new.total_length <= ongoing_length


def predict_frame(executor: Executor, horizon: float) -> Belief:
    """Belief at the moment the next plan activates.

    With nothing in execution this is the current belief; otherwise the
    belief propagated along the scheduled controls, truncated at their end.
    """
    return executor.predicted_belief(horizon)


def register_scan(store: SubmapStore, raw: RawScan, believed: PoseBelief, now: float) -> None:
    """Convert a world-frame sweep into the active submap frame and fuse it."""
    if store.active is None:
        store.start_submap(believed, now)
    origin = store.active.origin
    rel = compound(inverse(origin), believed)
    yaw_b = believed.yaw
    c, s = math.cos(-yaw_b), math.sin(-yaw_b)
    beams = []
    for d_world, rng_m, hit in raw.beams:
        d = np.asarray(d_world, dtype=float).copy()
        d[0] = c * d_world[0] - s * d_world[1]
        d[1] = s * d_world[0] + c * d_world[1]
        beams.append((d, rng_m, hit))
    scan = Scan(rel.position.copy(), rel.yaw, beams)
    store.integrate_scan(scan, now, robot_pose=believed)


class MissionManager:
    """Drives one mission over a shared executor, map store, and planner."""

    def __init__(self, config: MissionConfig, world: World, model, executor: Executor,
                 store: SubmapStore, rng: np.random.Generator):
        self.config = config
        self.world = world
        self.model = model
        self.executor = executor
        self.store = store
        self.rng = rng
        self.planner = MultiLayerPlanner(
            budget_mode=config.budget_mode,
            lead_iters_per_second=config.lead_iters_per_second,
            sst_iters_per_second=config.sst_iters_per_second,
            single_layer=config.single_layer,
        )
        self.ongoing: Trajectory | None = None
        self.ongoing_dispatch_time: float = 0.0
        self.failures = 0
        self.returning = False
        self.aborted = False
        self.goal_lo = np.asarray(config.goal_lo, dtype=float)
        self.goal_hi = np.asarray(config.goal_hi, dtype=float)
        self.events: list = []
        self.reports: list = []

    def _event(self, now: float, kind: str, **payload):
        self.events.append({"t": round(now, 6), "event": kind, **payload})

    def _check_ongoing(self, now: float, dispatch_time: float, predicted: Belief, cmap: CumulativeMap):
        """Replay the remaining controls from the predicted frame and find
        the longest safe prefix whose end allows a full stop."""
        cfg = self.config.safety
        model = self.model
        controls = [
            Control(c.u, min(avail, c.duration), bound=True)
            for c, avail in self.executor.timeline.controls_from(dispatch_time)
        ]
        if not controls:
            return False, [], 0.0
        b = Belief(predicted.mean, np.zeros_like(predicted.cov))
        # escape margin: if the predicted state is itself marginal, admit
        # states no worse than it so an outbound prefix survives validation
        from .collision import p_collision_alpha

        strict = cfg.alpha - cfg.p_safe
        p_pred = p_collision_alpha(b, cmap, cfg.alpha, cfg.r_body, cfg.f_unknown)
        margin = max(strict, min(p_pred, cfg.alpha - 1e-6)) if p_pred > strict else None
        beliefs = [b]
        valid_steps = 0
        ok = True
        for c in controls:
            path = model.propagate_path(b, c)
            bad = False
            for bb in path:
                if not is_safe(bb, cmap, cfg, margin):
                    bad = True
                    break
            b = path[-1]
            beliefs.append(b)
            if bad:
                ok = False
                break
            valid_steps += 1
        if ok:
            length = float(
                np.sum(
                    np.linalg.norm(
                        np.diff([bb.mean[: model.workspace_dim] for bb in beliefs], axis=0),
                        axis=1,
                    )
                )
            )
            return True, controls, length
        # truncate further until braking from the prefix end stays safe
        k = valid_steps
        while k > 0:
            end_b = beliefs[k]
            speed_hint = controls[k - 1].u[0] if model.n_u == 3 else None
            if not inevitable_collision(end_b, model, cmap, cfg, speed=speed_hint, margin=margin):
                break
            k -= 1
        prefix = list(controls[:k])
        if k > 0:
            end_b = beliefs[k]
            speed_hint = controls[k - 1].u[0] if model.n_u == 3 else None
            prefix += model.braking_sequence(end_b, speed=speed_hint)
        return False, prefix, math.inf

    def run_iteration(self, now: float) -> IterationReport:
        cfg = self.config
        t_phase = time.perf_counter()
        dispatch_time = now + cfg.delta_t_mp

        predicted = predict_frame(self.executor, cfg.delta_t_mp)
        frame = self.model.pose_from_belief(predicted)

        if self.store.submaps:
            cmap = build_cumulative(frame, self.store)
        else:
            cmap = empty_map(frame, cfg.resolution)

        # everything still scheduled gets re-checked against the new map,
        # whether it is a full trajectory or a previously dispatched prefix
        ongoing_valid, prefix, ongoing_length = self._check_ongoing(
            now, dispatch_time, predicted, cmap
        )
        if not ongoing_valid and (self.ongoing is not None or prefix):
            self.executor.timeline.dispatch(dispatch_time, prefix)
            self.ongoing = None
            self._event(now, "invalidated", prefix_controls=len(prefix))
        reaches = self.ongoing.reaches_goal if self.ongoing is not None else False
        if not (ongoing_valid and reaches):
            ongoing_length = math.inf

        other_wall = time.perf_counter() - t_phase

        problem = PlanningProblem(
            start=Belief(predicted.mean, np.zeros_like(predicted.cov)),
            goal_lo=self.goal_lo,
            goal_hi=self.goal_hi,
            safety=cfg.safety,
            cmap=cmap,
            model=self.model,
            bounds_lo=self.world.bounds_lo,
            bounds_hi=self.world.bounds_hi,
            lift=cfg.lift,
            budget_lead=cfg.delta_t_l,
            budget_constrained=cfg.delta_t_c,
        )
        result = self.planner.solve(problem, self.rng)
        new_traj = result.trajectory
        if not result.start_safe:
            self._event(now, "start_unsafe")

        dispatched = False
        if satisfies_criteria(new_traj, ongoing_length):
            new_traj.frame = frame
            self.ongoing = new_traj
            self.ongoing_dispatch_time = dispatch_time
            self.executor.timeline.dispatch(dispatch_time, new_traj.controls())
            dispatched = True
            self._event(
                now, "dispatch",
                length=round(new_traj.total_length, 3),
                duration=round(new_traj.duration, 3),
            )

        # a failed iteration is one that leaves the robot with nothing to
        # execute: a still-running safe prefix keeps discovery going and is
        # not counted against the contingency threshold
        have_plan = dispatched or (ongoing_valid and reaches)
        stalled = self.executor.timeline.end_time() <= dispatch_time + 1e-9
        if have_plan:
            self.failures = 0
        elif stalled:
            self.failures += 1
            if self.failures >= cfg.n_cp:
                self._trigger_contingency(now)

        report = IterationReport(
            index=len(self.reports),
            sim_time=now,
            frame_mean=predicted.mean.copy(),
            map_generation=cmap.generation,
            ongoing_valid=ongoing_valid,
            prefix_dispatched=bool(prefix) and not ongoing_valid,
            solved=new_traj is not None,
            dispatched=dispatched,
            start_safe=result.start_safe,
            failures=self.failures,
            solve_wall_time=result.solve_wall_time,
            other_phases_wall_time=other_wall,
            incumbent_length=new_traj.total_length if new_traj is not None else None,
            lead_found=result.lead_path is not None,
        )
        self.reports.append(report)
        return report

    def _trigger_contingency(self, now: float):
        cfg = self.config
        if self.returning:
            self._event(now, "emergency_stop")
            b = self.executor.belief
            speed_hint = None if self.model.n_u != 3 else 0.0
            self.executor.timeline.dispatch(
                now + cfg.delta_t_mp, self.model.braking_sequence(b, speed=speed_hint)
            )
            self.aborted = True
            return
        start = np.asarray(cfg.start, dtype=float)[: self.model.workspace_dim]
        half = 0.5 * (self.goal_hi - self.goal_lo)
        self.goal_lo = start - half
        self.goal_hi = start + half
        self.failures = 0
        self.returning = True
        self.ongoing = None
        self._event(now, "contingency_return", new_goal_center=[round(x, 3) for x in start])


def run_mission(config: MissionConfig, world: World | None = None) -> MissionResult:
    """Run one mission to goal, contingency end, or the simulation time limit."""
    from .models import make_model

    world = world if world is not None else builtin_world(config.world)
    model = make_model(config.model, **config.model_params)
    root = np.random.default_rng(config.seed)
    rng_exec, rng_sensor, rng_plan = root.spawn(3)

    start_state = np.asarray(config.start, dtype=float)
    executor = Executor(world, model, start_state, rng_exec, config.drift, config.safety.r_body)
    store = SubmapStore(config.sensor_model, config.resolution, config.delta_t_lm)
    manager = MissionManager(config, world, model, executor, store, rng_plan)

    dt = model.dt
    ticks_per_iter = int(round(config.delta_t_mp / dt))
    ticks_per_scan = max(1, int(round(config.sensor.period / dt)))
    max_ticks = int(round(config.max_sim_time / dt))

    goal_lo = np.asarray(config.goal_lo, dtype=float)
    goal_hi = np.asarray(config.goal_hi, dtype=float)
    dim = model.workspace_dim

    success = False
    goal_time = None
    manager._event(0.0, "mission_start", world=world.name, seed=config.seed)
    for tick in range(max_ticks):
        t = tick * dt
        if tick % ticks_per_scan == 0:
            raw = raycast_scan(world, executor.true_state[:dim], config.sensor, rng_sensor)
            register_scan(store, raw, model.pose_from_belief(executor.belief), t)
        if tick % ticks_per_iter == 0:
            manager.run_iteration(t)
            manager._event(t, "iteration_end", index=len(manager.reports) - 1)
        executor.tick()
        p = executor.true_state[:dim]
        if np.all(p >= goal_lo) and np.all(p <= goal_hi) and not manager.returning:
            success = True
            goal_time = executor.t
            break
        if manager.aborted and executor.timeline.end_time() <= executor.t:
            break
    manager._event(executor.t, "mission_end", success=success)

    pts = np.array([entry[1][:dim] for entry in executor.log]) if executor.log else np.zeros((1, dim))
    path_length = float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum()) if len(pts) > 1 else 0.0
    success = success and executor.collisions == 0
    return MissionResult(
        config=config,
        success=success,
        aborted=manager.aborted,
        goal_time=goal_time,
        sim_time=executor.t,
        path_length=path_length,
        collisions=executor.collisions,
        iterations=manager.reports,
        events=manager.events,
        executor_log=executor.log,
    )
