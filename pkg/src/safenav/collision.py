"""Probabilistic state validation against an occupancy field.

The primary checker integrates the belief's positional Gaussian over the
fused occupancy grid inside a confidence-level support and treats the
excluded tail mass as in collision, so the safety test is
``alpha - p >= p_safe``.  Two linear chance-constraint formulations over
convex polytope obstacles serve as comparison baselines, and a seeded
Monte-Carlo estimator provides the standard of truth for benchmarking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .fusion import CumulativeMap
from .kernels import diagonal_sigmas
from .models import Belief

__all__ = [
    "SafetyConfig",
    "LinearObstacleSet",
    "boxes_to_obstacles",
    "p_collision_alpha",
    "is_safe",
    "cc_check",
    "oracle_p_collision",
    "OracleEstimate",
    "accuracy",
    "BoxField",
    "GridField",
    "OCCUPIED_CLASS_THRESHOLD",
]

# Cells classify as obstacles only above the non-informative prior; cells
# carrying free-leaning evidence (P <= 0.5) contribute no obstacle mass.
# Without this, saturated-free cells (P ~ 0.12 at the log-odds clamp) would
# exceed the alpha - p_safe margin everywhere and no state could validate.
OCCUPIED_CLASS_THRESHOLD = 0.5


@dataclass(frozen=True)
class SafetyConfig:
    """Safety thresholds; rejected at construction if inconsistent."""

    p_safe: float = 0.95
    alpha: float = 0.99
    p_goal: float = 0.8
    r_body: float = 0.0
    f_unknown: float = 0.0  # occupancy assumed for never-observed cells

    def __post_init__(self):
        for name in ("p_safe", "alpha", "p_goal"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.alpha <= self.p_safe:
            raise ValueError(
                f"checker confidence alpha={self.alpha} must exceed p_safe={self.p_safe}"
            )
        if self.r_body < 0.0:
            raise ValueError("r_body must be non-negative")


@dataclass(frozen=True)
class LinearObstacleSet:
    """Convex polytopes, each a list of half-spaces (unit normal, offset).

    A point x is inside obstacle k iff ``normal . x <= offset`` for every
    face of k.
    """

    obstacles: tuple  # tuple of (normals (m,d), offsets (m,)) pairs


def boxes_to_obstacles(boxes) -> LinearObstacleSet:
    """Axis-aligned boxes [(lo, hi), ...] as six-face polytopes."""
    obs = []
    for lo, hi in boxes:
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        d = lo.shape[0]
        normals = np.vstack([np.eye(d), -np.eye(d)])
        offsets = np.concatenate([hi, -lo])
        obs.append((normals, offsets))
    return LinearObstacleSet(tuple(obs))


def p_collision_positional(
    mean,
    sigmas,
    cmap: CumulativeMap,
    alpha: float,
    f_unknown: float = 0.0,
) -> float:
    """Collision mass of a diagonal positional Gaussian against the map."""
    from .kernels import critical_value

    dim = cmap.dim
    h = cmap.resolution
    t = critical_value(alpha, dim)
    shape = cmap.shape
    map_lo = cmap.lo
    jlo = [0] * dim
    jhi = [0] * dim
    a = [0] * dim
    b = [0] * dim
    clipped = False
    empty = False
    for d in range(dim):
        mu, sg = float(mean[d]), float(sigmas[d])
        jl = math.floor((mu - t * sg) / h) - int(map_lo[d])
        jh = math.floor((mu + t * sg) / h) - int(map_lo[d])
        jlo[d], jhi[d] = jl, jh
        a[d] = jl if jl > 0 else 0
        b[d] = jh + 1 if jh + 1 < shape[d] else shape[d]
        if jl < 0 or jh + 1 > shape[d]:
            clipped = True
        if a[d] >= b[d]:
            empty = True
    if empty:
        return min(f_unknown, alpha) if f_unknown > 0.0 else 0.0
    window = tuple(slice(a[d], b[d]) for d in range(dim))
    om = cmap.obstacle_mass[window]
    if f_unknown <= 0.0:
        if not om.any():
            return 0.0
        p = om
    else:
        known = cmap.known[window]
        if not om.any() and known.all() and not clipped:
            return 0.0
        p = np.where(known, om, f_unknown)
    covered = 1.0
    for d in range(dim):
        sg = float(sigmas[d])
        if sg <= 0.0:
            vec = np.ones(1)
        else:
            edges = ((np.arange(jlo[d], jhi[d] + 2) + map_lo[d]) * h - float(mean[d])) / sg
            vec = np.diff(ndtr(edges))
        vec = vec[a[d] - jlo[d] : vec.shape[0] - (jhi[d] + 1 - b[d])]
        covered *= float(vec.sum())
        shp = [1] * dim
        shp[d] = vec.shape[0]
        p = p * vec.reshape(shp)
    result = float(p.sum())
    if f_unknown > 0.0:
        # belief mass inside the support but off the map counts as unknown
        t_mass = 1.0
        for d in range(dim):
            sg = float(sigmas[d])
            if sg <= 0.0:
                continue
            lo_edge = ((jlo[d] + map_lo[d]) * h - float(mean[d])) / sg
            hi_edge = ((jhi[d] + 1 + map_lo[d]) * h - float(mean[d])) / sg
            t_mass *= float(ndtr(hi_edge) - ndtr(lo_edge))
        result += f_unknown * max(t_mass - covered, 0.0)
    return min(result, alpha)


def p_collision_alpha(
    belief: Belief,
    cmap: CumulativeMap,
    alpha: float,
    r_body: float = 0.0,
    f_unknown: float = 0.0,
) -> float:
    """Collision probability mass inside the belief's alpha-support.

    Inner product of the belief-centred discrete Gaussian with the map's
    obstacle mass; capped at ``alpha`` since the tail beyond the support is
    accounted separately by the safety rule.  The vehicle footprint enters
    as an inflation ``r_body`` of the positional sigmas.
    """
    if alpha <= 0.0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    dim = cmap.dim
    mean = belief.position(dim)
    sigmas = diagonal_sigmas(belief.position_cov(dim)) + r_body
    return p_collision_positional(mean, sigmas, cmap, alpha, f_unknown)


def is_safe(belief: Belief, cmap: CumulativeMap, cfg: SafetyConfig,
            margin: float | None = None) -> bool:
    """True iff the confidence-corrected collision bound meets p_safe.

    ``margin`` overrides the admissible collision mass ``alpha - p_safe``
    (used for escape planning from an already-marginal state).
    """
    p = p_collision_alpha(belief, cmap, cfg.alpha, cfg.r_body, cfg.f_unknown)
    return p <= (cfg.alpha - cfg.p_safe if margin is None else margin)


def is_safe_arrays(mean: np.ndarray, cov: np.ndarray, cmap: CumulativeMap, cfg: SafetyConfig,
                   margin: float | None = None) -> bool:
    """`is_safe` over raw mean/covariance arrays (hot loops)."""
    dim = cmap.dim
    sigmas = diagonal_sigmas(cov[:dim, :dim]) + cfg.r_body
    p = p_collision_positional(mean[:dim], sigmas, cmap, cfg.alpha, cfg.f_unknown)
    return p <= (cfg.alpha - cfg.p_safe if margin is None else margin)


def cc_check(
    belief: Belief,
    obstacles: LinearObstacleSet,
    p_safe: float,
    variant: str = "open_loop_sum",
) -> bool:
    """Linear chance-constraint validity check.

    Per obstacle, the collision probability is bounded by the smallest
    Gaussian half-space mass over its faces.  ``open_loop_sum`` admits the
    state when the summed bounds leave ``1 - sum >= p_safe``;
    ``per_obstacle`` allocates the risk budget ``(1 - p_safe) / n_o``
    uniformly and requires every obstacle to respect its share.
    """
    if variant not in ("open_loop_sum", "per_obstacle"):
        raise ValueError(f"unknown variant {variant!r}")
    if not obstacles.obstacles:
        return True
    dim = obstacles.obstacles[0][0].shape[1]
    mean = belief.position(dim)
    cov = belief.position_cov(dim)
    n_o = len(obstacles.obstacles)
    budget = 1.0 - p_safe
    share = budget / n_o
    total = 0.0
    for normals, offsets in obstacles.obstacles:
        m = normals @ mean
        s = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", normals, cov, normals), 1e-18))
        bound = float(ndtr((offsets - m) / s).min())
        if variant == "per_obstacle":
            if bound > share:
                return False
        else:
            total += bound
            if total > budget:
                return False
    return True


class BoxField:
    """Continuous occupancy field of axis-aligned boxes (1 inside, 0 outside)."""

    def __init__(self, boxes, dim: int | None = None):
        self.lo = np.array([np.asarray(b[0], dtype=float) for b in boxes]) if boxes else None
        self.hi = np.array([np.asarray(b[1], dtype=float) for b in boxes]) if boxes else None
        self.dim = int(self.lo.shape[1]) if self.lo is not None else int(dim or 2)

    def occupancy(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        if self.lo is None:
            return np.zeros(pts.shape[0])
        inside = np.zeros(pts.shape[0], dtype=bool)
        for lo, hi in zip(self.lo, self.hi):
            inside |= np.all((pts >= lo) & (pts <= hi), axis=1)
        return inside.astype(float)


class GridField:
    """Continuous field backed by a fused map (nearest-cell lookup)."""

    def __init__(self, cmap: CumulativeMap, f_unknown: float = 0.0):
        self.cmap = cmap
        self.f_unknown = f_unknown

    @property
    def dim(self) -> int:
        return self.cmap.dim

    def occupancy(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        cmap = self.cmap
        idx = np.floor(pts / cmap.resolution).astype(int) - cmap.lo
        shape = np.array(cmap.shape)
        ok = np.all((idx >= 0) & (idx < shape), axis=1)
        out = np.full(pts.shape[0], self.f_unknown)
        if np.any(ok):
            flat = tuple(idx[ok].T)
            vals = cmap.values[flat]
            known = cmap.known[flat]
            out[ok] = np.where(known, vals, self.f_unknown)
        return out


@dataclass(frozen=True)
class OracleEstimate:
    p: float
    stderr: float
    n_samples: int


def oracle_p_collision(belief: Belief, field, n_samples: int, rng: np.random.Generator) -> OracleEstimate:
    """Monte-Carlo collision probability of a belief against a continuous field."""
    dim = field.dim
    mean = belief.position(dim)
    cov = belief.position_cov(dim)
    sigmas = np.sqrt(np.maximum(np.diag(cov), 0.0))
    if np.allclose(cov, np.diag(np.diag(cov)), atol=1e-12):
        pts = mean[None, :] + rng.standard_normal((n_samples, dim)) * sigmas[None, :]
    else:
        pts = rng.multivariate_normal(mean, cov, size=n_samples)
    vals = field.occupancy(pts)
    p = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else 0.0
    return OracleEstimate(p, stderr, n_samples)


def accuracy(outcomes) -> float:
    """Fraction of truth-valid states the method also accepted.

    ``outcomes`` is a list of (method_valid, truth_valid) pairs; returns 1
    when no state is truth-valid.
    """
    tp = sum(1 for m, t in outcomes if t and m)
    fn = sum(1 for m, t in outcomes if t and not m)
    if tp + fn == 0:
        return 1.0
    return tp / (tp + fn)
