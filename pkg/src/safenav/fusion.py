"""Fusing local submaps into one occupancy field relative to a planning frame.

Each submap's known-cell probabilities are spread by the discrete Gaussian
kernel of the submap-to-frame relative pose covariance (correlation on the
grid), converted to log-odds, and accumulated across submaps in index order
with per-step clamping.  The result is a dense probability field plus a
mask of cells that received any observed support; cells outside the mask
carry no information.

The fused grid is axis aligned in world coordinates: what varies with the
planning frame is the relative covariance folded into each submap's blur,
not the grid orientation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product

import numpy as np
from scipy import ndimage

from .geometry import PoseBelief, compound, inverse
from .kernels import build_kernel, diagonal_sigmas, gaussian_cell_weights
from .submaps import SubmapStore, SensorModelParams, logistic, logit

__all__ = ["CumulativeMap", "build_cumulative", "query_point", "validate_trajectory"]

FUSION_ALPHA = 0.9999  # numerical stand-in for a full-support kernel

_P_EPS = 1e-9


@dataclass(frozen=True)
class CumulativeMap:
    """Dense fused occupancy field on a world-aligned grid.

    ``values`` holds occupancy probability per cell; ``known`` flags cells
    with observed support.  ``lo`` is the integer index of the first cell
    per axis, so cell ``idx`` covers ``[(lo+idx)*h, (lo+idx+1)*h)``.
    """

    frame: PoseBelief
    values: np.ndarray
    known: np.ndarray
    lo: np.ndarray
    resolution: float
    generation: int

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @cached_property
    def obstacle_mass(self) -> np.ndarray:
        """Per-cell obstacle mass: fused probability where it classifies as
        occupied (above the non-informative prior), zero elsewhere."""
        om = np.where(self.known & (self.values > 0.5), self.values, 0.0)
        om.setflags(write=False)
        return om

    @cached_property
    def has_obstacles(self) -> bool:
        return bool(self.obstacle_mass.any())

    def bounds(self):
        lo = self.lo * self.resolution
        hi = (self.lo + np.array(self.shape)) * self.resolution
        return lo, hi

    def cell_index(self, point) -> np.ndarray:
        return np.floor(np.asarray(point, dtype=float) / self.resolution).astype(int) - self.lo

    def value_at(self, point, unknown_value: float = 0.5):
        """Fused probability at a world point; ``unknown_value`` off-support."""
        idx = self.cell_index(point)
        if np.any(idx < 0) or np.any(idx >= np.array(self.shape)):
            return unknown_value, False
        t = tuple(idx)
        if not self.known[t]:
            return unknown_value, False
        return float(self.values[t]), True


def _splat(acc_p, acc_w, idx_f, weights_p, lo, shape):
    """Area-weighted scatter of cell masses onto the world grid."""
    dim = idx_f.shape[1]
    base = np.floor(idx_f).astype(int)
    frac = idx_f - base
    for corner in product((0, 1), repeat=dim):
        w = np.ones(len(idx_f))
        for d in range(dim):
            w = w * (frac[:, d] if corner[d] else 1.0 - frac[:, d])
        cells = base + np.array(corner, dtype=int) - lo
        ok = np.all((cells >= 0) & (cells < np.array(shape)), axis=1)
        if not np.any(ok):
            continue
        flat = np.ravel_multi_index(tuple(cells[ok].T), shape)
        np.add.at(acc_p.ravel(), flat, weights_p[ok] * w[ok])
        np.add.at(acc_w.ravel(), flat, w[ok])


def _relative_sigmas(rel: PoseBelief, r_max: float) -> np.ndarray:
    """Positional blur sigmas of a relative pose, folding in yaw uncertainty.

    Yaw error rotates known cells about the submap origin, so it is folded
    into the planar sigmas as ``r_max * sigma_yaw`` (lever-arm bound).
    """
    sig = diagonal_sigmas(rel.position_cov)
    s_yaw = math.sqrt(max(rel.yaw_var(), 0.0))
    sig = sig.copy()
    sig[0] += r_max * s_yaw
    sig[1] += r_max * s_yaw
    return sig


def build_cumulative(frame: PoseBelief, store: SubmapStore) -> CumulativeMap:
    """Fuse every submap into one field, weighting each by its relative
    uncertainty against ``frame``."""
    if not store.submaps:
        raise ValueError("store holds no submaps")
    h = store.resolution
    dim = frame.dim
    params = store.params

    per_submap = []
    lo_all = None
    hi_all = None
    for sub in store.submaps:
        if not sub.grid:
            per_submap.append(None)
            continue
        rel = compound(inverse(frame), sub.origin)  # submap pose as seen from the frame
        sigmas = _relative_sigmas(rel, sub.max_known_radius())
        kernel = build_kernel(sigmas ** 2, h, FUSION_ALPHA)
        cells = np.array(list(sub.grid.keys()), dtype=float)
        centers = (cells + 0.5) * h
        yaw = sub.origin.yaw
        c, s = math.cos(yaw), math.sin(yaw)
        world = centers.copy()
        world[:, 0] = sub.origin.mean[0] + c * centers[:, 0] - s * centers[:, 1]
        world[:, 1] = sub.origin.mean[1] + s * centers[:, 0] + c * centers[:, 1]
        if dim == 3:
            world[:, 2] = sub.origin.mean[2] + centers[:, 2]
        probs = np.array([logistic(l) for l in sub.grid.values()])
        idx_f = world / h - 0.5  # fractional cell index of each centre
        half = np.array([(m - 1) // 2 for m in kernel.shape])
        lo = np.floor(idx_f.min(axis=0)).astype(int) - half - 1
        hi = np.ceil(idx_f.max(axis=0)).astype(int) + half + 2
        per_submap.append((idx_f, probs, kernel, lo, hi))
        lo_all = lo if lo_all is None else np.minimum(lo_all, lo)
        hi_all = hi if hi_all is None else np.maximum(hi_all, hi)

    if lo_all is None:
        lo_all = np.zeros(dim, dtype=int)
        hi_all = np.ones(dim, dtype=int)
    shape = tuple(hi_all - lo_all)

    l_acc = np.zeros(shape)
    known_any = np.zeros(shape, dtype=bool)
    for entry in per_submap:
        if entry is None:
            continue
        idx_f, probs, kernel, _, _ = entry
        acc_p = np.zeros(shape)
        acc_w = np.zeros(shape)
        _splat(acc_p, acc_w, idx_f, probs, lo_all, shape)
        if kernel.cells.size > 1:
            for axis in range(dim):
                v = kernel.axes[axis]
                if v.shape[0] > 1 or abs(v[0] - 1.0) > 1e-15:
                    acc_p = ndimage.correlate1d(acc_p, v, axis=axis, mode="constant", cval=0.0)
                    acc_w = ndimage.correlate1d(acc_w, v, axis=axis, mode="constant", cval=0.0)
        mask = acc_w > _P_EPS
        p = np.clip(acc_p[mask], _P_EPS, 1.0 - _P_EPS)
        l_i = np.log(p / (1.0 - p))
        l_acc[mask] = np.clip(l_acc[mask] + l_i, params.l_min, params.l_max)
        known_any |= mask

    values = 1.0 / (1.0 + np.exp(-l_acc))
    values[~known_any] = 0.5
    values.setflags(write=False)
    known_any.setflags(write=False)
    return CumulativeMap(frame, values, known_any, lo_all, h, store.generation)


def query_point(point, frame_y: PoseBelief, store: SubmapStore):
    """Occupancy probability of a single point seen from an uncertain frame.

    The point (given in ``frame_y`` coordinates) is expressed in each
    submap, weighted by the Gaussian of the relative covariance, and the
    per-submap log-odds are accumulated with clamping.  Queries are
    quantised to the cell containing the point, matching the fused map's
    discretisation.  Returns ``(probability, informed)``; with no observed
    support the result is the non-informative ``(0.5, False)``.
    """
    if not store.submaps:
        return 0.5, False
    params = store.params
    h = store.resolution
    p_query = np.asarray(point, dtype=float)
    l_total = 0.0
    informed = False
    for sub in store.submaps:
        if not sub.grid:
            continue
        rel = compound(inverse(sub.origin), frame_y)  # frame_y as seen from the submap
        n = rel.n
        d = rel.dim
        yaw = rel.yaw
        c, s = math.cos(yaw), math.sin(yaw)
        local = p_query.copy()
        local[0] = rel.mean[0] + c * p_query[0] - s * p_query[1]
        local[1] = rel.mean[1] + s * p_query[0] + c * p_query[1]
        if d == 3:
            local[2] = rel.mean[2] + p_query[2]
        local = (np.floor(local / h) + 0.5) * h  # quantise to the submap grid
        jac = np.zeros((d, n))
        jac[:, :d] = np.eye(d)
        yaw_col = 3 if n == 5 else 2
        jac[0, yaw_col] = -s * p_query[0] - c * p_query[1]
        jac[1, yaw_col] = c * p_query[0] - s * p_query[1]
        cov = jac @ rel.cov @ jac.T
        sigmas = diagonal_sigmas(cov)
        lo, vectors = gaussian_cell_weights(local, sigmas, h, FUSION_ALPHA)
        p_i = 0.0
        w_i = 0.0
        grid = sub.grid
        ranges = [range(lo[k], lo[k] + vectors[k].shape[0]) for k in range(d)]
        for cell in product(*ranges):
            l = grid.get(cell)
            if l is None:
                continue
            w = 1.0
            for k in range(d):
                w *= vectors[k][cell[k] - lo[k]]
            w_i += w
            p_i += w * logistic(l)
        if w_i <= _P_EPS:
            continue
        informed = True
        p_i = min(max(p_i, _P_EPS), 1.0 - _P_EPS)
        l_total = max(min(l_total + logit(p_i), params.l_max), params.l_min)
    if not informed:
        return 0.5, False
    return logistic(l_total), True


def validate_trajectory(trajectory, cmap: CumulativeMap, cfg):
    """Check every belief of a trajectory against the map.

    Returns ``(valid, first_invalid_index)``.  Requires the trajectory to
    be expressed against the same frame generation the map was built for.
    """
    from .collision import is_safe

    if trajectory.frame is not None and cmap.frame is not None:
        if trajectory.frame.n != cmap.frame.n:
            raise ValueError("trajectory and map use different pose charts")
    for i, (belief, _) in enumerate(trajectory.nodes):
        if not is_safe(belief, cmap, cfg):
            return False, i
    return True, None
