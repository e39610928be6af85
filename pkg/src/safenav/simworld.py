"""Deterministic simulation: ground-truth worlds, range sensing, execution.

Worlds are compositions of axis-aligned boxes.  The range sensor casts
exact rays against them (slab intersection) with additive Gaussian range
noise.  The executor steps the ground-truth state with the nominal model
plus sampled process noise while the believed state evolves open loop
(no measurement updates), so believed-vs-true error reflects the injected
drift.  Everything is seeded; identical seeds give identical logs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fusion import CumulativeMap
from .models import Belief, Control
from .planner import Trajectory

__all__ = [
    "World",
    "SensorSpec",
    "DriftSpec",
    "builtin_world",
    "raycast_scan",
    "RawScan",
    "ControlTimeline",
    "Executor",
    "execute",
    "map_from_world",
]


@dataclass(frozen=True)
class World:
    name: str
    dimension: int
    bounds_lo: np.ndarray
    bounds_hi: np.ndarray
    obstacles: tuple  # ((lo, hi) arrays, ...)

    def __post_init__(self):
        lo = np.asarray(self.bounds_lo, dtype=float)
        hi = np.asarray(self.bounds_hi, dtype=float)
        object.__setattr__(self, "bounds_lo", lo)
        object.__setattr__(self, "bounds_hi", hi)
        for olo, ohi in self.obstacles:
            if np.any(ohi <= olo):
                raise ValueError("degenerate obstacle box")

    def contains(self, point) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.bounds_lo) and np.all(p <= self.bounds_hi))

    def point_in_obstacle(self, point, margin: float = 0.0) -> bool:
        """True when the point is within ``margin`` of any obstacle box."""
        p = np.asarray(point, dtype=float)
        for lo, hi in self.obstacles:
            d = np.maximum(np.maximum(lo - p, 0.0), p - hi)
            if float(np.linalg.norm(d)) <= margin:
                return True
        return False


@dataclass(frozen=True)
class SensorSpec:
    kind: str = "rotating-2d"  # rotating-2d | lidar-3d
    max_range: float = 10.0
    angular_resolution: float = math.radians(5.0)
    period: float = 0.5
    noise_sigma: float = 0.0
    elevation_steps: int = 5
    elevation_max: float = math.radians(30.0)

    def __post_init__(self):
        if self.max_range <= 0 or self.angular_resolution <= 0 or self.period <= 0:
            raise ValueError("sensor parameters must be positive")


@dataclass(frozen=True)
class DriftSpec:
    """Scale on the model's per-step process noise applied to ground truth."""

    noise_scale: float = 1.0


@dataclass(frozen=True)
class RawScan:
    """Beams in world-frame directions from a known world position."""

    origin: np.ndarray
    beams: list  # (world direction unit vector, range, hit flag)


def _ray_box(origin, direction, lo, hi):
    """Entry distance of a ray into an axis-aligned box, or None."""
    tmin, tmax = 0.0, math.inf
    for d in range(len(origin)):
        o, v = origin[d], direction[d]
        if abs(v) < 1e-12:
            if o < lo[d] or o > hi[d]:
                return None
            continue
        t1, t2 = (lo[d] - o) / v, (hi[d] - o) / v
        if t1 > t2:
            t1, t2 = t2, t1
        tmin, tmax = max(tmin, t1), min(tmax, t2)
        if tmin > tmax:
            return None
    return tmin if tmax >= tmin >= 0.0 else None


def _scan_directions(spec: SensorSpec, dim: int):
    n_az = max(1, int(round(2.0 * math.pi / spec.angular_resolution)))
    azimuths = np.arange(n_az) * (2.0 * math.pi / n_az)
    if dim == 2:
        return [np.array([math.cos(a), math.sin(a)]) for a in azimuths]
    if spec.kind != "lidar-3d":
        raise ValueError("3-D worlds need a lidar-3d sensor")
    dirs = []
    elevations = np.linspace(-spec.elevation_max, spec.elevation_max, spec.elevation_steps)
    for e in elevations:
        ce, se = math.cos(e), math.sin(e)
        for a in azimuths:
            dirs.append(np.array([math.cos(a) * ce, math.sin(a) * ce, se]))
    return dirs


def raycast_scan(world: World, position, spec: SensorSpec, rng: np.random.Generator) -> RawScan:
    """One sweep from a true world position: exact intersections plus noise."""
    p = np.asarray(position, dtype=float)
    if not world.contains(p):
        raise ValueError("sensor position outside world bounds")
    beams = []
    for d in _scan_directions(spec, world.dimension):
        best = math.inf
        for lo, hi in world.obstacles:
            t = _ray_box(p, d, lo, hi)
            if t is not None and t < best:
                best = t
        if best <= spec.max_range:
            r = best
            if spec.noise_sigma > 0.0:
                r += rng.normal(0.0, spec.noise_sigma)
            r = min(max(r, 1e-6), spec.max_range)
            beams.append((d, float(r), True))
        else:
            beams.append((d, spec.max_range, False))
    return RawScan(p.copy(), beams)


class ControlTimeline:
    """Absolute-time schedule of piecewise-constant controls."""

    def __init__(self):
        self.entries: list = []  # (start_time, Control), sorted, non-overlapping
        self._starts: list = []

    def dispatch(self, at_time: float, controls) -> None:
        """Replace everything scheduled from ``at_time`` with ``controls``."""
        import bisect

        kept = []
        for start, c in self.entries:
            end = start + c.duration
            if end <= at_time + 1e-9:
                kept.append((start, c))
            elif start < at_time - 1e-9:
                from .models import Control as _C

                kept.append((start, _C(c.u, at_time - start, bound=c.bound)))
        t = at_time
        for c in controls:
            kept.append((t, c))
            t += c.duration
        kept.sort(key=lambda e: e[0])
        self.entries = kept
        self._starts = [s for s, _ in kept]

    def control_at(self, t: float):
        import bisect

        i = bisect.bisect_right(self._starts, t + 1e-9) - 1
        if i < 0:
            return None
        start, c = self.entries[i]
        if start - 1e-9 <= t < start + c.duration - 1e-9:
            return c
        return None

    def controls_from(self, t: float):
        """Remaining (control, available duration) pairs from time ``t``."""
        import bisect

        out = []
        i = max(bisect.bisect_right(self._starts, t + 1e-9) - 1, 0)
        for start, c in self.entries[i:]:
            end = start + c.duration
            if end <= t + 1e-9:
                continue
            if start >= t - 1e-9:
                out.append((c, c.duration))
            else:
                out.append((c, end - t))
        return out

    def end_time(self) -> float:
        if not self.entries:
            return 0.0
        return max(t + c.duration for t, c in self.entries)


class Executor:
    """Clocked open-loop executor: true state with noise, belief without."""

    def __init__(self, world: World, model, start_state, rng: np.random.Generator,
                 drift: DriftSpec = DriftSpec(), r_body: float = 0.0):
        self.world = world
        self.model = model
        self.rng = rng
        self.drift = drift
        self.r_body = r_body
        self.true_state = np.asarray(start_state, dtype=float).copy()
        n = model.n_x
        self.belief = Belief(self.true_state.copy(), np.zeros((n, n)), stamp=0.0)
        self.timeline = ControlTimeline()
        self.t = 0.0
        self.collisions = 0
        self.log: list = []

    def tick(self) -> None:
        dt = self.model.dt
        control = self.timeline.control_at(self.t)
        if control is None:
            control = self.model.hold_control(self.belief, dt)
        step = Control(control.u, dt, bound=True)
        self.true_state = self.model.true_step(
            self.true_state, step, self.rng, self.drift.noise_scale
        )
        self.belief = self.model.propagate(self.belief, step)
        self.t += dt
        dim = self.model.workspace_dim
        collided = self.world.point_in_obstacle(self.true_state[:dim], self.r_body)
        if collided:
            self.collisions += 1
        self.log.append(
            (
                self.t,
                self.true_state.copy(),
                self.belief.mean.copy(),
                np.diag(self.belief.cov).copy(),
                "collision" if collided else "",
            )
        )

    def predicted_belief(self, horizon: float) -> Belief:
        """Belief propagated along the scheduled controls for ``horizon`` s.

        Truncates at the end of the schedule; identical stepping to tick().
        """
        b = self.belief
        remaining = horizon
        for control, avail in self.timeline.controls_from(self.t):
            if remaining <= 1e-9:
                break
            span = min(avail, remaining)
            n = int(round(span / self.model.dt))
            if n >= 1:
                b = self.model.propagate(b, Control(control.u, n * self.model.dt, bound=True))
            remaining -= span
        return b


def execute(trajectory: Trajectory, world: World, model, rng: np.random.Generator,
            drift: DriftSpec = DriftSpec(), r_body: float = 0.0):
    """Run one trajectory open loop from its start belief; returns the executor."""
    start = trajectory.nodes[0][0]
    ex = Executor(world, model, start.mean, rng, drift, r_body)
    ex.belief = start
    ex.timeline.dispatch(0.0, trajectory.controls())
    n_ticks = int(round(ex.timeline.end_time() / model.dt))
    for _ in range(n_ticks):
        ex.tick()
    return ex


def map_from_world(world: World, resolution: float, frame=None) -> CumulativeMap:
    """Exact, fully-known occupancy map of a world (for known-environment runs)."""
    from .geometry import identity

    h = resolution
    lo = np.floor(world.bounds_lo / h).astype(int)
    hi = np.ceil(world.bounds_hi / h).astype(int)
    shape = tuple(hi - lo)
    values = np.zeros(shape)
    for olo, ohi in world.obstacles:
        a = np.floor(np.round(olo / h, 9)).astype(int) - lo
        b = np.ceil(np.round(ohi / h, 9)).astype(int) - lo
        a = np.maximum(a, 0)
        b = np.minimum(b, shape)
        if np.any(b <= a):
            continue
        values[tuple(slice(a[d], b[d]) for d in range(world.dimension))] = 1.0
    known = np.ones(shape, dtype=bool)
    values.setflags(write=False)
    known.setflags(write=False)
    return CumulativeMap(
        frame if frame is not None else identity(world.dimension),
        values, known, lo, h, generation=0,
    )


def _breakwater(gap: float = 4.0, block_len: float = 14.5, block_w: float = 12.0) -> World:
    """Row of rectangular blocks separated by gaps, crossed along +x."""
    x0 = 14.0
    blocks = []
    # blocks run along y; center a gap near y = -4 and tile outwards
    start_y = -gap / 2.0 - block_len
    for k in range(-1, 3):
        y0 = start_y + k * (block_len + gap)
        blocks.append(
            (np.array([x0, y0]), np.array([x0 + block_w, y0 + block_len]))
        )
    return World(
        "breakwater2d",
        2,
        np.array([-5.0, -25.0]),
        np.array([45.0, 25.0]),
        tuple((lo, hi) for lo, hi in blocks),
    )


def _canyon(length: float = 28.0, width: float = 5.0) -> World:
    wall = 6.0
    x0 = 10.0
    lo1 = np.array([x0, -wall - width / 2.0])
    hi1 = np.array([x0 + length, -width / 2.0])
    lo2 = np.array([x0, width / 2.0])
    hi2 = np.array([x0 + length, wall + width / 2.0])
    return World(
        "canyon2d", 2,
        np.array([-5.0, -20.0]), np.array([x0 + length + 10.0, 20.0]),
        ((lo1, hi1), (lo2, hi2)),
    )


def _corridor3d() -> World:
    """Walled pocket with a rear entry: the route loops around the enclosure
    and comes back through the mouth, so goal-ward extensions from the start
    side are dead ends."""
    lo = np.array([0.0, -11.0, 0.0])
    hi = np.array([34.0, 11.0, 12.0])
    obs = [
        # enclosure around the goal region, mouth facing +x
        (np.array([18.0, -6.0, 0.0]), np.array([20.0, 6.0, 12.0])),   # front wall
        (np.array([20.0, 6.0, 0.0]), np.array([28.0, 8.0, 12.0])),    # north wall
        (np.array([20.0, -8.0, 0.0]), np.array([28.0, -6.0, 12.0])),  # south wall
    ]
    return World("corridor3d", 3, lo, hi, tuple(obs))


def _stairwell3d(scale: float = 0.35) -> World:
    """Switchback shaft: stacked floor slabs with alternating openings.

    Full-size footprint 40.50 x 50.04 x 13.69 m, shrunk by ``scale``.
    """
    full = np.array([40.50, 50.04, 13.69]) * scale
    lo = np.zeros(3)
    hi = full
    obs = []
    n_floors = 3
    slab = 0.2 * full[2]
    for k in range(1, n_floors + 1):
        z0 = k * full[2] / (n_floors + 1)
        open_x = (0.1 * full[0], 0.35 * full[0]) if k % 2 else (0.65 * full[0], 0.9 * full[0])
        obs.append((np.array([0.0, 0.0, z0]), np.array([open_x[0], full[1], z0 + slab])))
        obs.append((np.array([open_x[1], 0.0, z0]), np.array([full[0], full[1], z0 + slab])))
    return World("stairwell3d", 3, lo, hi, tuple(obs))


def builtin_world(name: str, **kwargs) -> World:
    makers = {
        "open2d": lambda: World(
            "open2d", 2, np.array([-5.0, -10.0]), np.array([35.0, 10.0]), ()
        ),
        "breakwater2d": lambda: _breakwater(**kwargs),
        "canyon2d": lambda: _canyon(**kwargs),
        "corridor3d": lambda: _corridor3d(),
        "stairwell3d": lambda: _stairwell3d(**kwargs),
    }
    if name not in makers:
        raise KeyError(f"unknown world {name!r}")
    return makers[name]()
