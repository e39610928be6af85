"""Local occupancy submaps with log-odds sensor fusion.

The environment is held as a sequence of local submaps.  Each submap is a
sparse occupancy grid anchored by an uncertain origin pose in the world
frame; within a submap, scan poses are treated as exact.  Scans are fused
with the additive log-odds rule under a beam model with three segments:
traversed cells, the hit cell, and an occluded tail behind the hit whose
increment decays geometrically with distance from the endpoint.  All
stored values are clamped to keep the map updatable.

A new submap is started on a fixed schedule so that pose drift accumulated
within any single submap stays negligible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import PoseBelief, compound, inverse

__all__ = [
    "SensorModelParams",
    "Scan",
    "LocalSubmap",
    "SubmapStore",
    "occluded_increment",
    "logistic",
    "logit",
    "raycast_cells",
]


def logistic(l: float) -> float:
    """Log-odds to probability."""
    return 1.0 / (1.0 + math.exp(-l))


def logit(p: float) -> float:
    """Probability to log-odds."""
    return math.log(p / (1.0 - p))


@dataclass(frozen=True)
class SensorModelParams:
    """Log-odds increments and clamping bounds of the inverse sensor model."""

    l_free: float = -0.4
    l_occ: float = 0.85
    l_min: float = -2.0
    l_max: float = 3.5
    gamma: float = 0.8
    max_range: float = 10.0

    def __post_init__(self):
        if not self.l_free < 0.0 < self.l_occ:
            raise ValueError("need l_free < 0 < l_occ")
        if not self.l_min < 0.0 < self.l_max:
            raise ValueError("need l_min < 0 < l_max")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("decay rate must be in (0, 1)")
        if self.max_range <= 0.0:
            raise ValueError("max_range must be positive")


def occluded_increment(d: float, params: SensorModelParams) -> float:
    """Log-odds increment for a cell ``d`` metres behind the beam endpoint."""
    if d < 0.0:
        raise ValueError("distance must be non-negative")
    return params.gamma ** d * params.l_occ


@dataclass(frozen=True)
class Scan:
    """One sensor sweep expressed in the active submap frame.

    ``sensor_pose_in_submap`` is ``(position, yaw)``; beam directions are
    unit vectors in the sensor frame.  Miss beams carry ``range == max_range``
    and ``hit=False``.
    """

    sensor_position: np.ndarray
    sensor_yaw: float
    beams: list  # (direction unit vector, range (m), hit flag)


@dataclass
class LocalSubmap:
    """Sparse occupancy grid with an uncertain world-frame origin."""

    origin: PoseBelief
    resolution: float
    created_at: float
    grid: dict = field(default_factory=dict)  # cell index tuple -> log-odds
    frozen: bool = False
    last_scan_at: float | None = None

    def cell_center(self, idx) -> np.ndarray:
        return (np.asarray(idx, dtype=float) + 0.5) * self.resolution

    def max_known_radius(self) -> float:
        """Distance from the origin to the farthest known cell centre."""
        if not self.grid:
            return 0.0
        idx = np.array(list(self.grid.keys()), dtype=float)
        centers = (idx + 0.5) * self.resolution
        return float(np.max(np.linalg.norm(centers, axis=1)))

    def bounds(self):
        """Axis-aligned extent of known cells in submap coordinates."""
        if not self.grid:
            return None
        idx = np.array(list(self.grid.keys()), dtype=int)
        lo = idx.min(axis=0) * self.resolution
        hi = (idx.max(axis=0) + 1) * self.resolution
        return lo, hi


def raycast_cells(start: np.ndarray, end: np.ndarray, h: float):
    """Cells visited by the segment from start to end, in order.

    Exact voxel walk; includes both the start cell and the cell containing
    the endpoint.
    """
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    d = start.shape[0]
    cell = np.floor(start / h).astype(int)
    end_cell = np.floor(end / h).astype(int)
    delta = end - start
    cells = [tuple(cell)]
    if np.all(cell == end_cell):
        return cells
    step = np.sign(delta).astype(int)
    t_max = np.full(d, np.inf)
    t_delta = np.full(d, np.inf)
    for i in range(d):
        if delta[i] != 0.0:
            boundary = (cell[i] + (1 if step[i] > 0 else 0)) * h
            t_max[i] = (boundary - start[i]) / delta[i]
            t_delta[i] = h / abs(delta[i])
    limit = int(np.abs(end_cell - cell).sum()) + 2 * d + 2
    for _ in range(limit):
        i = int(np.argmin(t_max))
        cell[i] += step[i]
        t_max[i] += t_delta[i]
        cells.append(tuple(cell))
        if np.all(cell == end_cell):
            break
    return cells


# within-scan classification rank: a direct traversal (measurement) outranks
# an occluded extrapolation; an endpoint hit outranks both
_OCCLUDED, _FREE, _HIT = 0, 1, 2


class SubmapStore:
    """Holds the submap sequence and fuses incoming scans into the active one."""

    def __init__(self, params: SensorModelParams, resolution: float, delta_t_lm: float = 10.0):
        if resolution <= 0.0:
            raise ValueError("resolution must be positive")
        self.params = params
        self.resolution = resolution
        self.delta_t_lm = delta_t_lm
        self.submaps: list[LocalSubmap] = []
        self.generation = 0

    @property
    def active(self) -> LocalSubmap | None:
        return self.submaps[-1] if self.submaps else None

    def start_submap(self, robot_pose: PoseBelief, now: float) -> int:
        """Freeze the active submap and open a new one anchored at ``robot_pose``."""
        if self.submaps:
            self.submaps[-1].frozen = True
        self.submaps.append(LocalSubmap(robot_pose, self.resolution, now))
        self.generation += 1
        return len(self.submaps) - 1

    def _classify_beam(self, scan: Scan, beam, updates: dict):
        direction, rng, hit = beam
        direction = np.asarray(direction, dtype=float)
        if rng > self.params.max_range + 1e-9:
            raise ValueError(f"beam range {rng} exceeds max_range {self.params.max_range}")
        yaw = scan.sensor_yaw
        c, s = math.cos(yaw), math.sin(yaw)
        d_sub = direction.copy()
        d_sub[0] = c * direction[0] - s * direction[1]
        d_sub[1] = s * direction[0] + c * direction[1]
        origin = np.asarray(scan.sensor_position, dtype=float)
        endpoint = origin + rng * d_sub
        h = self.resolution
        path = raycast_cells(origin, endpoint, h)
        hit_cell = path[-1]
        for cell in path[:-1]:
            cur = updates.get(cell)
            if cur is None or cur[0] < _FREE:
                updates[cell] = (_FREE, self.params.l_free)
        if hit:
            updates[hit_cell] = (_HIT, self.params.l_occ)
            # occluded tail from the endpoint out to the sensor range
            tail_end = origin + self.params.max_range * d_sub
            for cell in raycast_cells(endpoint, tail_end, h)[1:]:
                center = (np.asarray(cell, dtype=float) + 0.5) * h
                inc = occluded_increment(float(np.linalg.norm(center - endpoint)), self.params)
                cur = updates.get(cell)
                if cur is None or cur[0] < _OCCLUDED or (cur[0] == _OCCLUDED and cur[1] < inc):
                    updates[cell] = (_OCCLUDED, inc)
        else:
            cur = updates.get(hit_cell)
            if cur is None or cur[0] < _FREE:
                updates[hit_cell] = (_FREE, self.params.l_free)

    def integrate_scan(self, scan: Scan, now: float, robot_pose: PoseBelief | None = None) -> LocalSubmap:
        """Fuse one scan into the active submap, rolling over first if due.

        On rollover the new origin is ``robot_pose`` when given (the
        executor's reported belief); otherwise the scan pose composed onto
        the old origin, carrying the old origin covariance.  The scan pose
        is re-expressed in the new submap frame.
        """
        if not self.submaps:
            if robot_pose is None:
                raise ValueError("store has no submap and no robot pose to anchor one")
            self.start_submap(robot_pose, now)
        sub = self.active
        if now - sub.created_at >= self.delta_t_lm:
            old_origin = sub.origin
            if robot_pose is not None:
                new_origin = robot_pose
            else:
                n = old_origin.n
                rel_mean = np.zeros(n)
                rel_mean[: old_origin.dim] = scan.sensor_position
                rel_mean[3 if n == 5 else 2] = scan.sensor_yaw
                rel = PoseBelief(rel_mean, np.zeros((n, n)))
                new_origin = compound(old_origin, rel)
            self.start_submap(new_origin, now)
            sub = self.active
            scan = self._reexpress(scan, old_origin, new_origin)
        updates: dict = {}
        for beam in scan.beams:
            self._classify_beam(scan, beam, updates)
        grid = sub.grid
        lmin, lmax = self.params.l_min, self.params.l_max
        for cell, (_, inc) in updates.items():
            val = grid.get(cell, 0.0) + inc
            grid[cell] = max(min(val, lmax), lmin)
        sub.last_scan_at = now
        self.generation += 1
        return sub

    @staticmethod
    def _reexpress(scan: Scan, old_origin: PoseBelief, new_origin: PoseBelief) -> Scan:
        n = old_origin.n
        d = old_origin.dim
        pose = np.zeros(n)
        pose[:d] = scan.sensor_position
        pose[3 if n == 5 else 2] = scan.sensor_yaw
        world = compound(old_origin, PoseBelief(pose, np.zeros((n, n))))
        rel = compound(inverse(new_origin), world)
        return Scan(rel.mean[:d].copy(), rel.yaw, scan.beams)

    def known_cells(self, submap_id: int):
        """Yield ``(cell centre in submap frame, occupancy probability)``."""
        if not 0 <= submap_id < len(self.submaps):
            raise KeyError(f"unknown submap id {submap_id}")
        sub = self.submaps[submap_id]
        h = sub.resolution
        for cell, l in sub.grid.items():
            yield (np.asarray(cell, dtype=float) + 0.5) * h, logistic(l)
