"""Multi-layered kinodynamic planning in the belief space.

A geometric RRT* lead quickly finds a workspace path; a lift strategy maps
it into a state-space sampling region (rigid tube, biased mixture, or a
tube whose radius grows over time); a sparse-tree shooting planner (SST)
then grows a tree of beliefs under the motion model, rejecting extensions
that violate the probabilistic safety bound or end in a state from which
the vehicle cannot stop safely.  Both layers are anytime: they keep the
best solution found within their budget.

Budgets are either wall-clock seconds or deterministic iteration counts
(iterations = budget x configured rate); the latter makes seeded runs
machine independent.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .collision import SafetyConfig, is_safe, p_collision_alpha
from .fusion import CumulativeMap
from .geometry import PoseBelief
from .kernels import normal_cdf
from .models import Belief, Control

__all__ = [
    "LiftStrategy",
    "PlanningProblem",
    "Trajectory",
    "goal_reached",
    "inevitable_collision",
    "lead_plan",
    "lift_sample",
    "SSTPlanner",
    "MultiLayerPlanner",
    "PlanResult",
    "Budget",
]


@dataclass(frozen=True)
class LiftStrategy:
    """How the lead path constrains state sampling."""

    kind: str = "adaptive"  # uniform | rigid | biased | adaptive
    d: float = 12.0  # tube radius (rigid, biased)
    p: float = 0.9  # probability of sampling inside the tube (biased)
    d0: float = 3.0  # initial radius (adaptive)
    growth_rate: float = 20.0  # m/s radius growth (adaptive)

    def __post_init__(self):
        if self.kind not in ("uniform", "rigid", "biased", "adaptive"):
            raise ValueError(f"unknown lift kind {self.kind!r}")
        if self.d < 0 or self.d0 < 0 or not 0.0 <= self.p <= 1.0 or self.growth_rate <= 0:
            raise ValueError("invalid lift parameters")


@dataclass
class Trajectory:
    """Dispatched plan: per-step beliefs with the control that produced each.

    ``nodes[0]`` is the start belief with no incoming control; every later
    node is reproducible by propagating its predecessor with its control.
    """

    nodes: list  # [(Belief, Control | None), ...]
    frame: PoseBelief | None = None
    reaches_goal: bool = False

    @property
    def total_length(self) -> float:
        pts = np.array([b.mean[:2] if b.mean.shape[0] == 4 else b.mean[:3] for b, _ in self.nodes])
        if len(pts) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())

    @property
    def duration(self) -> float:
        return sum(c.duration for _, c in self.nodes if c is not None)

    def controls(self) -> list:
        return [c for _, c in self.nodes if c is not None]


@dataclass
class PlanningProblem:
    start: Belief
    goal_lo: np.ndarray
    goal_hi: np.ndarray
    safety: SafetyConfig
    cmap: CumulativeMap
    model: object
    bounds_lo: np.ndarray
    bounds_hi: np.ndarray
    lift: LiftStrategy = LiftStrategy()
    budget_lead: float = 0.3
    budget_constrained: float = 1.2

    def __post_init__(self):
        self.goal_lo = np.asarray(self.goal_lo, dtype=float)
        self.goal_hi = np.asarray(self.goal_hi, dtype=float)
        self.bounds_lo = np.asarray(self.bounds_lo, dtype=float)
        self.bounds_hi = np.asarray(self.bounds_hi, dtype=float)
        if np.any(self.goal_hi <= self.goal_lo):
            raise ValueError("goal box is empty")
        if self.budget_lead < 0 or self.budget_constrained <= 0:
            raise ValueError("budgets must be positive")


class Budget:
    """Anytime budget: deterministic iteration count or wall-clock seconds."""

    def __init__(self, seconds: float, mode: str = "iterations", iters_per_second: float = 1200.0):
        self.seconds = seconds
        self.mode = mode
        self.rate = iters_per_second
        self.max_iters = max(1, int(round(seconds * iters_per_second)))
        self._t0 = time.perf_counter()
        self.iterations = 0

    def expired(self) -> bool:
        if self.mode == "iterations":
            return self.iterations >= self.max_iters
        return time.perf_counter() - self._t0 >= self.seconds

    def tick(self):
        self.iterations += 1

    def elapsed(self) -> float:
        """Elapsed planning time in budget units (seconds)."""
        if self.mode == "iterations":
            return self.iterations / self.rate
        return time.perf_counter() - self._t0


def goal_reached(belief: Belief, goal_lo, goal_hi, p_goal: float) -> bool:
    """Probability mass of the positional marginal inside the goal box.

    Uses the per-axis diagonal marginal; the product of interval masses is
    compared against ``p_goal``.
    """
    goal_lo = np.asarray(goal_lo, dtype=float)
    goal_hi = np.asarray(goal_hi, dtype=float)
    dim = goal_lo.shape[0]
    mean = belief.position(dim)
    var = np.diag(belief.position_cov(dim))
    p = 1.0
    for d in range(dim):
        s = math.sqrt(max(var[d], 0.0))
        if s == 0.0:
            p *= 1.0 if goal_lo[d] <= mean[d] <= goal_hi[d] else 0.0
        else:
            p *= normal_cdf((goal_hi[d] - mean[d]) / s) - normal_cdf((goal_lo[d] - mean[d]) / s)
        if p == 0.0:
            return False
    return p >= p_goal


def inevitable_collision(
    belief: Belief,
    model,
    cmap: CumulativeMap,
    cfg: SafetyConfig,
    speed: float | None = None,
    stride: int = 4,
    margin: float | None = None,
) -> bool:
    """True iff no safe full stop exists from this state."""
    from .collision import is_safe_arrays

    controls = model.braking_sequence(belief, speed=speed)
    if not controls:
        return not is_safe(belief, cmap, cfg, margin)
    mean, cov = belief.mean, belief.cov
    if all(c.u is controls[0].u or np.array_equal(c.u, controls[0].u) for c in controls[1:]):
        # constant braking reference: jump whole strides at once
        left = len(controls)
        c0 = controls[0]
        while left > 0:
            n = min(stride, left)
            mean, cov = model.advance(mean, cov, c0, n)
            left -= n
            if not is_safe_arrays(mean, cov, cmap, cfg, margin):
                return True
        return False
    step = 0
    for c in controls:
        mean, cov = model.step_mean_cov(mean, cov, c)
        step += 1
        if step % stride == 0 and not is_safe_arrays(mean, cov, cmap, cfg, margin):
            return True
    return not is_safe_arrays(mean, cov, cmap, cfg, margin)


# ---------------------------------------------------------------------------
# lead planner (geometric RRT*)


class _LeadChecker:
    """Point validity against the map under a fixed nominal blur.

    A cell-snapped kernel keeps the check a pure window gather; the <= h/2
    snap offset is irrelevant for lead guidance since the constrained
    planner re-validates every state it keeps.
    """

    def __init__(self, cmap: CumulativeMap, cfg: SafetyConfig, sigma_lead: float):
        from .kernels import build_kernel

        self.cmap = cmap
        self.margin = cfg.alpha - cfg.p_safe
        self.f_unknown = cfg.f_unknown
        kern = build_kernel([sigma_lead ** 2] * cmap.dim, cmap.resolution, cfg.alpha)
        self.kernel = kern.cells
        self.half = np.array([(m - 1) // 2 for m in kern.shape])
        self.kmass = kern.mass

    def point_valid(self, point) -> bool:
        cmap = self.cmap
        center = np.floor(np.asarray(point) / cmap.resolution).astype(int) - cmap.lo
        a = center - self.half
        b = center + self.half + 1
        shape = np.asarray(cmap.shape)
        a_c = np.maximum(a, 0)
        b_c = np.minimum(b, shape)
        if np.any(a_c >= b_c):
            return self.f_unknown * self.kmass < self.margin
        win = tuple(slice(a_c[d], b_c[d]) for d in range(cmap.dim))
        om = cmap.obstacle_mass[win]
        if self.f_unknown <= 0.0:
            if not om.any():
                return True
            ksl = tuple(slice(a_c[d] - a[d], (a_c[d] - a[d]) + (b_c[d] - a_c[d])) for d in range(cmap.dim))
            return float((om * self.kernel[ksl]).sum()) < self.margin
        known = cmap.known[win]
        vals = np.where(known, om, self.f_unknown)
        ksl = tuple(slice(a_c[d] - a[d], (a_c[d] - a[d]) + (b_c[d] - a_c[d])) for d in range(cmap.dim))
        kw = self.kernel[ksl]
        p = float((vals * kw).sum()) + self.f_unknown * (self.kmass - float(kw.sum()))
        return p < self.margin

    def segment_valid(self, a, b, step) -> bool:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        dist = float(np.linalg.norm(b - a))
        n = max(1, int(math.ceil(dist / step)))
        for i in range(1, n + 1):
            if not self.point_valid(a + (b - a) * (i / n)):
                return False
        return True


def lead_plan(problem: PlanningProblem, budget: Budget, rng: np.random.Generator):
    """Anytime geometric RRT* over workspace points; returns a polyline or None.

    Collision predicate: occupancy mass under a fixed nominal-blur kernel
    stays below the safety margin ``alpha - p_safe``.
    """
    cmap, cfg = problem.cmap, problem.safety
    dim = cmap.dim
    lo, hi = problem.bounds_lo[:dim], problem.bounds_hi[:dim]
    checker = _LeadChecker(cmap, cfg, sigma_lead=2.0 * cmap.resolution)
    eta = max(float(np.linalg.norm(hi - lo)) / 20.0, 4.0 * cmap.resolution)
    check_step = 2.0 * cmap.resolution

    start = np.asarray(problem.start.position(dim), dtype=float)
    goal_c = 0.5 * (problem.goal_lo + problem.goal_hi)

    pts = [start]
    parent = [-1]
    cost = [0.0]
    means = np.zeros((256, dim))
    means[0] = start
    best_goal, best_cost = -1, math.inf

    def in_goal(p):
        return bool(np.all(p >= problem.goal_lo) and np.all(p <= problem.goal_hi))

    if in_goal(start):
        return [start.copy()]

    gamma = 2.0 * float(np.linalg.norm(hi - lo))
    while not budget.expired():
        budget.tick()
        target = goal_c if rng.random() < 0.05 else rng.uniform(lo, hi)
        n = len(pts)
        d2 = np.linalg.norm(means[:n] - target[None, :], axis=1)
        near_i = int(np.argmin(d2))
        base = pts[near_i]
        vec = target - base
        dist = float(np.linalg.norm(vec))
        if dist < 1e-9:
            continue
        new = base + vec * min(1.0, eta / dist)
        if not checker.point_valid(new):
            continue
        r_n = min(gamma * (math.log(n + 1) / (n + 1)) ** (1.0 / dim), 2.0 * eta)
        dists = np.linalg.norm(means[:n] - new[None, :], axis=1)
        near_ids = np.nonzero(dists <= r_n)[0]
        # choose parent by lowest cost-to-come
        best_p, best_c = near_i, cost[near_i] + float(dists[near_i])
        for j in near_ids:
            c = cost[j] + float(dists[j])
            if c < best_c and checker.segment_valid(pts[j], new, check_step):
                best_p, best_c = int(j), c
        if not checker.segment_valid(pts[best_p], new, check_step):
            continue
        idx = len(pts)
        pts.append(new)
        parent.append(best_p)
        cost.append(best_c)
        if idx >= means.shape[0]:
            means = np.vstack([means, np.zeros_like(means)])
        means[idx] = new
        # rewire neighbours through the new node
        for j in near_ids:
            c = best_c + float(dists[j])
            if c + 1e-12 < cost[j] and checker.segment_valid(new, pts[j], check_step):
                parent[j] = idx
                cost[j] = c
        if in_goal(new) and best_c < best_cost:
            best_goal, best_cost = idx, best_c

    # rewiring keeps improving costs after insertion: re-pick the cheapest
    # goal-box node at extraction time
    best_goal, best_cost = -1, math.inf
    for i, p in enumerate(pts):
        if in_goal(p) and cost[i] < best_cost:
            best_goal, best_cost = i, cost[i]
    if best_goal < 0:
        return None
    path = []
    i = best_goal
    while i >= 0:
        path.append(pts[i].copy())
        i = parent[i]
    path.reverse()
    return path


# ---------------------------------------------------------------------------
# lift: map the workspace lead into a state sampling rule


def _polyline_lengths(xi):
    pts = np.asarray(xi, dtype=float)
    if len(pts) < 2:
        return pts, np.array([0.0])
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    return pts, np.concatenate([[0.0], np.cumsum(seg)])


def _point_on_polyline(pts, cum, s):
    if len(pts) == 1 or cum[-1] <= 0.0:
        return pts[0].copy()
    s = min(max(s, 0.0), cum[-1])
    k = int(np.searchsorted(cum, s, side="right")) - 1
    k = min(k, len(pts) - 2)
    seg = cum[k + 1] - cum[k]
    t = 0.0 if seg <= 0 else (s - cum[k]) / seg
    return pts[k] + t * (pts[k + 1] - pts[k])


def _ball_offset(dim, radius, rng):
    if radius <= 0.0:
        return np.zeros(dim)
    while True:
        u = rng.uniform(-1.0, 1.0, size=dim)
        if float(np.dot(u, u)) <= 1.0:
            return u * radius


def lift_sample(
    xi_prime,
    strategy: LiftStrategy,
    elapsed: float,
    rng: np.random.Generator,
    model,
    bounds_lo,
    bounds_hi,
    frozen_radius: float | None = None,
):
    """Draw one state sample according to the lift strategy.

    Geometric components come from a tube around the lead path (radius per
    strategy); non-geometric components are uniform over their ranges.
    Falls back to uniform sampling when no lead path exists.
    """
    dim = model.workspace_dim
    lo, hi = model.state_bounds(bounds_lo, bounds_hi)

    def uniform():
        return rng.uniform(lo, hi)

    if strategy.kind == "uniform" or xi_prime is None or len(xi_prime) == 0:
        return uniform()
    if strategy.kind == "biased" and rng.random() >= strategy.p:
        return uniform()
    if strategy.kind == "rigid" or strategy.kind == "biased":
        radius = strategy.d
    else:  # adaptive
        radius = frozen_radius if frozen_radius is not None else strategy.d0 + strategy.growth_rate * elapsed
    pts, cum = _polyline_lengths(xi_prime)
    base = _point_on_polyline(pts, cum, rng.uniform(0.0, cum[-1]) if cum[-1] > 0 else 0.0)
    geom = base + _ball_offset(dim, radius, rng)
    state = uniform()
    state[:dim] = np.clip(geom, lo[:dim], hi[:dim])
    return state


def adaptive_radius(strategy: LiftStrategy, elapsed: float) -> float:
    return strategy.d0 + strategy.growth_rate * elapsed


# ---------------------------------------------------------------------------
# constrained planner (SST over beliefs)


@dataclass
class SolveStats:
    iterations: int = 0
    n_nodes: int = 1
    first_solution_elapsed: float | None = None
    incumbent_trace: list = field(default_factory=list)  # (elapsed, cost)
    nodes_csv: list = field(default_factory=list)


class _Tree:
    def __init__(self, root: Belief, n_x: int):
        self.means = np.zeros((512, n_x))
        self.means[0] = root.mean
        self.beliefs = [root]
        self.parent = [-1]
        self.control = [None]
        self.cost = [0.0]
        self.path_beliefs = [None]  # per-dt beliefs of the incoming edge
        self.active = np.zeros(512, dtype=bool)
        self.alive = np.zeros(512, dtype=bool)
        self.active[0] = True
        self.alive[0] = True
        self.children = [0]
        self.n = 1

    def _grow(self):
        m = self.means.shape[0]
        self.means = np.vstack([self.means, np.zeros_like(self.means)])
        self.active = np.concatenate([self.active, np.zeros(m, dtype=bool)])
        self.alive = np.concatenate([self.alive, np.zeros(m, dtype=bool)])

    def add(self, belief: Belief, parent: int, control: Control, cost: float, path) -> int:
        idx = self.n
        if idx >= self.means.shape[0]:
            self._grow()
        self.means[idx] = belief.mean
        self.beliefs.append(belief)
        self.parent.append(parent)
        self.control.append(control)
        self.cost.append(cost)
        self.path_beliefs.append(path)
        self.active[idx] = True
        self.alive[idx] = True
        self.children.append(0)
        self.children[parent] += 1
        self.n += 1
        return idx

    def deactivate_and_prune(self, idx: int):
        self.active[idx] = False
        while idx >= 0 and not self.active[idx] and self.children[idx] == 0 and self.alive[idx]:
            self.alive[idx] = False
            p = self.parent[idx]
            if p >= 0:
                self.children[p] -= 1
            idx = p


class SSTPlanner:
    """Sparse stable tree search over beliefs with witness-based pruning.

    Selection and witness radii default to 0.5 m and 0.25 m scaled by
    (workspace diagonal / 40).
    """

    def __init__(self, delta_bn: float | None = None, delta_s: float | None = None,
                 icc_stride: int = 4, control_samples: int = 3, collect_trace: bool = False,
                 check_stride: int = 1):
        self.delta_bn = delta_bn
        self.delta_s = delta_s
        self.icc_stride = icc_stride
        self.control_samples = control_samples
        self.collect_trace = collect_trace
        # per-edge safety checking granularity: 1 checks every step; larger
        # values sample the edge (endpoint always checked)
        self.check_stride = max(1, check_stride)

    def solve(self, problem: PlanningProblem, xi_prime, budget: Budget, rng: np.random.Generator):
        model = problem.model
        cfg = problem.safety
        cmap = problem.cmap
        lift = problem.lift
        start = problem.start
        dim = model.workspace_dim
        scale = float(np.linalg.norm(problem.bounds_hi[:dim] - problem.bounds_lo[:dim])) / 40.0
        delta_bn = self.delta_bn if self.delta_bn is not None else 0.5 * scale
        delta_s = self.delta_s if self.delta_s is not None else 0.25 * scale

        tree = _Tree(start, model.n_x)
        wit_means = np.zeros((256, model.n_x))
        wit_rep: list[int] = []
        n_wit = 0

        # escape margin: from an already-marginal start, admit states no
        # worse than the start itself so the tree can lead the robot out
        margin = cfg.alpha - cfg.p_safe
        p_start = p_collision_alpha(start, cmap, cfg.alpha, cfg.r_body, cfg.f_unknown)
        esc_margin = max(margin, min(p_start, cfg.alpha - 1e-6)) if p_start > margin else None

        best_idx = -1
        best_cost = math.inf
        frozen_radius = None
        stats = SolveStats()

        start_in_goal = goal_reached(start, problem.goal_lo, problem.goal_hi, cfg.p_goal)
        if start_in_goal:
            traj = Trajectory([(start, None)], frame=None, reaches_goal=True)
            stats.incumbent_trace.append((0.0, 0.0))
            stats.first_solution_elapsed = 0.0
            return traj, stats

        while not budget.expired():
            budget.tick()
            stats.iterations += 1
            elapsed = budget.elapsed()
            if lift.kind == "adaptive" and best_idx >= 0 and frozen_radius is None:
                frozen_radius = adaptive_radius(lift, stats.first_solution_elapsed or elapsed)
            if rng.random() < 0.08:
                # light goal biasing: sample inside the goal region
                x_rand = lift_sample(None, LiftStrategy(kind="uniform"), elapsed, rng,
                                     model, problem.bounds_lo, problem.bounds_hi)
                x_rand[:dim] = rng.uniform(problem.goal_lo, problem.goal_hi)
            else:
                x_rand = lift_sample(
                    xi_prime, lift, elapsed, rng, model,
                    problem.bounds_lo, problem.bounds_hi, frozen_radius,
                )

            # best-near selection: cheapest active node within delta_bn, else nearest
            n = tree.n
            dists = model.distance(tree.means[:n], x_rand)
            dists = np.where(tree.active[:n], dists, np.inf)
            near = np.nonzero(dists <= delta_bn)[0]
            if near.size:
                sel = int(near[np.argmin(np.asarray(tree.cost)[near])])
            else:
                sel = int(np.argmin(dists))
                if not np.isfinite(dists[sel]):
                    break
            b_near = tree.beliefs[sel]

            # best-of-k shooting: preview candidate controls mean-only and
            # keep the one ending nearest the sample before the full
            # belief propagation and safety checks
            control = None
            best_d = math.inf
            for _ in range(self.control_samples):
                cand = model.bind_control(model.sample_control(rng), b_near.mean)
                end = model.preview_mean(b_near.mean, cand)
                d_end = float(model.distance(end[None, :], x_rand)[0])
                if d_end < best_d:
                    control, best_d = cand, d_end
            path = model.propagate_path(b_near, control)
            ok = True
            last = len(path) - 1
            for j, b in enumerate(path):
                if j % self.check_stride and j != last:
                    continue
                if not is_safe(b, cmap, cfg, esc_margin):
                    ok = False
                    break
            if not ok:
                continue
            b_new = path[-1]
            speed_hint = control.u[0] if model.n_u == 3 else None
            if inevitable_collision(b_new, model, cmap, cfg, speed=speed_hint,
                                    stride=self.icc_stride, margin=esc_margin):
                continue

            seg = np.vstack([b_near.mean[None, : model.workspace_dim]] +
                            [b.mean[None, : model.workspace_dim] for b in path])
            new_cost = tree.cost[sel] + float(np.linalg.norm(np.diff(seg, axis=0), axis=1).sum())

            # witness bookkeeping: keep only the cheapest node per neighbourhood
            if n_wit:
                wd = model.distance(wit_means[:n_wit], b_new.mean)
                wi = int(np.argmin(wd))
                has_wit = wd[wi] <= delta_s
            else:
                has_wit = False
            if has_wit:
                rep = wit_rep[wi]
                if tree.alive[rep] and tree.cost[rep] <= new_cost:
                    continue
                idx = tree.add(b_new, sel, control, new_cost, path)
                if tree.alive[rep]:
                    tree.deactivate_and_prune(rep)
                wit_rep[wi] = idx
            else:
                idx = tree.add(b_new, sel, control, new_cost, path)
                if n_wit >= wit_means.shape[0]:
                    wit_means = np.vstack([wit_means, np.zeros_like(wit_means)])
                wit_means[n_wit] = b_new.mean
                wit_rep.append(idx)
                n_wit += 1

            if goal_reached(b_new, problem.goal_lo, problem.goal_hi, cfg.p_goal) and new_cost < best_cost:
                best_idx, best_cost = idx, new_cost
                if stats.first_solution_elapsed is None:
                    stats.first_solution_elapsed = elapsed
                stats.incumbent_trace.append((elapsed, new_cost))

        stats.n_nodes = int(tree.alive[: tree.n].sum())
        if self.collect_trace:
            for i in range(tree.n):
                if tree.alive[i]:
                    stats.nodes_csv.append(("node", i, tree.parent[i]))
            for elapsed, cost_v in stats.incumbent_trace:
                stats.nodes_csv.append(("incumbent", round(elapsed, 6), round(cost_v, 6)))
        if best_idx < 0:
            return None, stats

        # node data is append-only, so the incumbent chain survives pruning
        nodes = [(start, None)]
        chain = []
        i = best_idx
        while i > 0:
            chain.append(i)
            i = tree.parent[i]
        chain.reverse()
        for i in chain:
            c = tree.control[i]
            per_step = Control(c.u, problem.model.dt, bound=True)
            for b in tree.path_beliefs[i]:
                nodes.append((b, per_step))
        nodes = self._shortcut_tail(nodes, problem, esc_margin)
        traj = Trajectory(nodes, frame=None, reaches_goal=True)
        return traj, stats

    def _shortcut_tail(self, nodes, problem: PlanningProblem, esc_margin):
        """Greedy goal connection: replace the incumbent's tail with a
        validated straight reference chain when that is shorter."""
        model = problem.model
        cfg = problem.safety
        cmap = problem.cmap
        dim = model.workspace_dim
        goal_c = 0.5 * (problem.goal_lo + problem.goal_hi)

        def seg_len(seq):
            pts = np.array([b.mean[:dim] for b, _ in seq])
            return 0.0 if len(pts) < 2 else float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())

        total = seg_len(nodes)
        straight = float(np.linalg.norm(goal_c - nodes[0][0].mean[:dim]))
        if total <= 1.05 * straight:
            return nodes
        step = max(1, int(round(2.0 / model.dt)))
        anchors = list(range(0, len(nodes), step))[:8]
        for i in anchors:
            controls = model.connect_controls(nodes[i][0].mean, goal_c)
            if controls is None:
                break
            b = nodes[i][0]
            seg = []
            ok = True
            for c in controls:
                path = model.propagate_path(b, c)
                for bb in path:
                    if not is_safe(bb, cmap, cfg, esc_margin):
                        ok = False
                        break
                if not ok:
                    break
                per_step = Control(c.u, model.dt, bound=True)
                seg.extend((bb, per_step) for bb in path)
                b = path[-1]
            if not ok or not goal_reached(b, problem.goal_lo, problem.goal_hi, cfg.p_goal):
                continue
            head = nodes[: i + 1]
            if seg_len(head) + seg_len([nodes[i]] + seg) < total - 1e-9:
                return head + seg
        return nodes


@dataclass
class PlanResult:
    trajectory: Trajectory | None
    lead_path: list | None
    stats: SolveStats
    start_safe: bool
    solve_wall_time: float = 0.0


class MultiLayerPlanner:
    """Lead + constrained planning under one time budget.

    ``single_layer=True`` skips the lead and gives the constrained planner
    the whole budget with uniform sampling.
    """

    def __init__(
        self,
        budget_mode: str = "iterations",
        lead_iters_per_second: float = 1000.0,
        sst_iters_per_second: float = 600.0,
        delta_bn: float | None = None,
        delta_s: float | None = None,
        icc_stride: int = 4,
        single_layer: bool = False,
        collect_trace: bool = False,
        check_stride: int = 1,
    ):
        self.budget_mode = budget_mode
        self.lead_rate = lead_iters_per_second
        self.sst_rate = sst_iters_per_second
        self.sst = SSTPlanner(delta_bn, delta_s, icc_stride, collect_trace=collect_trace,
                              check_stride=check_stride)
        self.single_layer = single_layer

    def solve(self, problem: PlanningProblem, rng: np.random.Generator) -> PlanResult:
        t0 = time.perf_counter()
        start_safe = is_safe(problem.start, problem.cmap, problem.safety)
        lead_path = None
        if self.single_layer:
            problem.lift = LiftStrategy(kind="uniform")
            budget_c = problem.budget_lead + problem.budget_constrained
        else:
            if problem.lift.kind != "uniform" and problem.budget_lead > 0:
                lead_budget = Budget(problem.budget_lead, self.budget_mode, self.lead_rate)
                lead_path = lead_plan(problem, lead_budget, rng)
            budget_c = problem.budget_constrained
        traj, stats = self.sst.solve(
            problem, lead_path, Budget(budget_c, self.budget_mode, self.sst_rate), rng
        )
        return PlanResult(traj, lead_path, stats, start_safe, time.perf_counter() - t0)
