"""Discrete Gaussian mass kernels on regular grids.

A kernel is the bounded discrete support of a Gaussian belief at a given
confidence level: per dimension it spans ``m_d = 2 ceil(t_alpha sigma_d / h) + 1``
cells, where ``t_alpha`` is the radius (in standard deviations) of the
central region of a d-dimensional standard Gaussian that contains
probability mass ``alpha``.  Cell values are exact integrals of the
Gaussian density over the cell (per-dimension normal CDF differences,
multiplied across dimensions), so the total mass never exceeds one and the
kernel needs no sigma inflation at coarse resolutions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache, reduce

import numpy as np
from scipy.special import ndtr

__all__ = [
    "critical_value",
    "kernel_size",
    "build_kernel",
    "AlphaKernel",
    "diagonal_sigmas",
    "gaussian_cell_weights",
    "normal_cdf",
]

_SQRT2 = math.sqrt(2.0)


def normal_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / _SQRT2))


def _radial_mass(t: float, dim: int) -> float:
    """Probability mass of a standard d-dim Gaussian inside radius t."""
    if t <= 0.0:
        return 0.0
    if dim == 1:
        return math.erf(t / _SQRT2)
    if dim == 2:
        return 1.0 - math.exp(-0.5 * t * t)
    if dim == 3:
        return math.erf(t / _SQRT2) - math.sqrt(2.0 / math.pi) * t * math.exp(-0.5 * t * t)
    raise ValueError(f"dim must be 1, 2 or 3, got {dim}")


@lru_cache(maxsize=4096)
def critical_value(alpha: float, dim: int) -> float:
    """Radius containing probability mass ``alpha`` of a standard d-dim Gaussian.

    Computed by bisection on the radial mass function, absolute tolerance 1e-7.
    """
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must be in [0, 1), got {alpha}")
    if dim not in (1, 2, 3):
        raise ValueError(f"dim must be 1, 2 or 3, got {dim}")
    if alpha == 0.0:
        return 0.0
    lo, hi = 0.0, 1.0
    while _radial_mass(hi, dim) < alpha:
        hi *= 2.0
        if hi > 1e6:
            raise ValueError(f"alpha {alpha} too close to 1")
    while hi - lo > 1e-7:
        mid = 0.5 * (lo + hi)
        if _radial_mass(mid, dim) < alpha:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def kernel_size(sigma_d: float, h: float, alpha: float, dim: int) -> int:
    """Odd cell count of the kernel along one dimension."""
    if h <= 0.0:
        raise ValueError(f"resolution must be positive, got {h}")
    if sigma_d < 0.0:
        raise ValueError(f"sigma must be non-negative, got {sigma_d}")
    if sigma_d == 0.0:
        return 1
    t = critical_value(alpha, dim)
    return 2 * math.ceil(t * sigma_d / h) + 1


def _cell_masses_1d(sigma: float, h: float, m: int) -> np.ndarray:
    """Integrated normal mass per cell for cells centred at k*h, |k| <= (m-1)/2."""
    if sigma == 0.0:
        return np.array([1.0])
    half = (m - 1) // 2
    edges = (np.arange(-half, half + 2) - 0.5) * h / sigma
    return np.diff(ndtr(edges))


@dataclass(frozen=True)
class AlphaKernel:
    """Separable discrete Gaussian patch.

    ``cells`` holds the probability mass per cell; ``center_index`` is the
    cell containing the mean.  Every per-dimension size is odd and the
    kernel is symmetric about its centre by construction.
    """

    cells: np.ndarray
    resolution: float
    alpha: float
    sigmas: tuple
    center_index: tuple
    axes: tuple  # per-dimension 1-D mass vectors; cells is their outer product

    @property
    def mass(self) -> float:
        return float(self.cells.sum())

    @property
    def shape(self) -> tuple:
        return self.cells.shape


@lru_cache(maxsize=1024)
def _build_kernel_cached(sigmas: tuple, h: float, alpha: float) -> AlphaKernel:
    vectors = []
    for s in sigmas:
        m = kernel_size(s, h, alpha, dim=len(sigmas))
        v = _cell_masses_1d(s, h, m)
        v.setflags(write=False)
        vectors.append(v)
    cells = reduce(np.multiply.outer, vectors)
    cells = np.ascontiguousarray(cells)
    cells.setflags(write=False)
    center = tuple((v.shape[0] - 1) // 2 for v in vectors)
    return AlphaKernel(cells, h, alpha, sigmas, center, tuple(vectors))


def build_kernel(variances, h: float, alpha: float) -> AlphaKernel:
    """Build the separable kernel for a diagonal positional covariance.

    ``variances`` is the diagonal of the covariance (or a full matrix whose
    off-diagonal terms must be zero).  Cached on (quantised sigma, h, alpha).
    """
    v = np.asarray(variances, dtype=float)
    if v.ndim == 2:
        if not np.allclose(v, np.diag(np.diag(v)), atol=1e-12):
            raise ValueError("build_kernel requires a diagonal covariance")
        v = np.diag(v).copy()
    if v.ndim != 1 or not 1 <= v.shape[0] <= 3:
        raise ValueError(f"expected 1-3 diagonal variances, got shape {v.shape}")
    if np.any(v < 0):
        raise ValueError("variances must be non-negative")
    if h <= 0.0:
        raise ValueError(f"resolution must be positive, got {h}")
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must be in [0, 1), got {alpha}")
    # quantise at 0.01 m so near-identical beliefs share a cache entry
    sigmas = tuple(round(math.sqrt(x) / 0.01) * 0.01 for x in v)
    return _build_kernel_cached(sigmas, float(h), float(alpha))


def diagonal_sigmas(cov: np.ndarray) -> np.ndarray:
    """Per-dimension standard deviations for a positional covariance block.

    If any cross term exceeds 10% of the largest eigenvalue, every entry is
    inflated to that eigenvalue (conservative isotropic bound); otherwise
    the diagonal is used directly.
    """
    c = np.asarray(cov, dtype=float)
    if c.ndim == 1:
        return np.sqrt(np.maximum(c, 0.0))
    d = c.shape[0]
    diag = np.diagonal(c)
    max_off = 0.0
    for i in range(d):
        for j in range(i + 1, d):
            max_off = max(max_off, abs(c[i, j]), abs(c[j, i]))
    if max_off == 0.0:
        return np.sqrt(np.maximum(diag, 0.0))
    lam = float(np.max(np.linalg.eigvalsh(0.5 * (c + c.T))))
    if max_off > 0.1 * lam:
        return np.full(d, math.sqrt(max(lam, 0.0)))
    return np.sqrt(np.maximum(diag, 0.0))


def gaussian_cell_weights(mean, sigmas, h: float, alpha: float):
    """Per-dimension integrated masses of a Gaussian over an absolute grid.

    The grid has cells ``[j*h, (j+1)*h)`` per dimension.  Unlike
    :func:`build_kernel`, the weights are anchored at the exact mean rather
    than a cell centre, which is what the collision inner product and point
    queries need.  Returns ``(lo, vectors)`` where ``lo[d]`` is the first
    cell index and ``vectors[d]`` the mass per cell along dimension d.
    """
    mu = np.asarray(mean, dtype=float)
    sg = np.asarray(sigmas, dtype=float)
    dim = mu.shape[0]
    t = critical_value(alpha, dim)
    lo = np.empty(dim, dtype=int)
    vectors = []
    for d in range(dim):
        if sg[d] <= 0.0:
            lo[d] = math.floor(mu[d] / h)
            vectors.append(np.array([1.0]))
            continue
        jlo = math.floor((mu[d] - t * sg[d]) / h)
        jhi = math.floor((mu[d] + t * sg[d]) / h)
        edges = (np.arange(jlo, jhi + 2) * h - mu[d]) / sg[d]
        lo[d] = jlo
        vectors.append(np.diff(ndtr(edges)))
    return lo, vectors
