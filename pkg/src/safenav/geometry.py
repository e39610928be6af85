"""Pose beliefs and first-order covariance propagation for spatial frames.

Two charts are supported:

* planar, ``(x, y, yaw)``;
* five-coordinate spatial, ``(x, y, z, yaw, pitch)``.

In the five-coordinate chart yaw is the only frame rotation: composition
rotates the x-y block by yaw while z and pitch accumulate additively, i.e.
frames are gravity aligned.  This makes the chart an exact group (closed
under compose/invert, involutive inverse), which the rest of the pipeline
relies on.  Pitch still matters for motion and sensing, but as a body angle
carried in the state, not as a frame rotation.

Covariances are propagated to first order with the analytic Jacobians of
the compose/invert maps; angle covariance lives in the tangent of the chart
and only means are re-normalised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PoseBelief",
    "identity",
    "compound",
    "inverse",
    "compound_point",
    "transform_point_to_frame",
    "wrap_angle",
]

_ANGLE_COORDS = {3: (2,), 5: (3, 4)}


def wrap_angle(a: float) -> float:
    """Normalise an angle to (-pi, pi]."""
    w = math.remainder(a, math.tau)
    if w <= -math.pi:
        w += math.tau
    return w


def _wrap_vector(mean: np.ndarray) -> np.ndarray:
    out = mean.astype(float).copy()
    for i in _ANGLE_COORDS[out.shape[0]]:
        out[i] = wrap_angle(out[i])
    return out


@dataclass(frozen=True)
class PoseBelief:
    """Gaussian belief over a frame pose: mean coordinates plus covariance.

    Parameters
    ----------
    mean : array, shape (3,) or (5,)
        ``(x, y, yaw)`` or ``(x, y, z, yaw, pitch)``; metres and radians.
    cov : array, shape (n, n)
        Symmetric PSD covariance over the same coordinates.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        if mean.shape not in ((3,), (5,)):
            raise ValueError(f"pose mean must have 3 or 5 coordinates, got {mean.shape}")
        cov = np.asarray(self.cov, dtype=float)
        n = mean.shape[0]
        if cov.shape != (n, n):
            raise ValueError(f"covariance shape {cov.shape} does not match pose dimension {n}")
        mean = _wrap_vector(mean)
        cov = 0.5 * (cov + cov.T)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def n(self) -> int:
        return self.mean.shape[0]

    @property
    def dim(self) -> int:
        """Workspace dimension (2 or 3)."""
        return 2 if self.n == 3 else 3

    @property
    def position(self) -> np.ndarray:
        return self.mean[: self.dim]

    @property
    def position_cov(self) -> np.ndarray:
        d = self.dim
        return self.cov[:d, :d]

    @property
    def yaw(self) -> float:
        return float(self.mean[2] if self.n == 3 else self.mean[3])

    def yaw_var(self) -> float:
        i = 2 if self.n == 3 else 3
        return float(self.cov[i, i])


def identity(dim: int = 2) -> PoseBelief:
    """Identity pose with zero covariance for a 2-D or 3-D workspace."""
    n = 3 if dim == 2 else 5
    return PoseBelief(np.zeros(n), np.zeros((n, n)))


def _compose_mean(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[0] == 3:
        c, s = math.cos(a[2]), math.sin(a[2])
        return np.array(
            [
                a[0] + c * b[0] - s * b[1],
                a[1] + s * b[0] + c * b[1],
                wrap_angle(a[2] + b[2]),
            ]
        )
    c, s = math.cos(a[3]), math.sin(a[3])
    return np.array(
        [
            a[0] + c * b[0] - s * b[1],
            a[1] + s * b[0] + c * b[1],
            a[2] + b[2],
            wrap_angle(a[3] + b[3]),
            wrap_angle(a[4] + b[4]),
        ]
    )


def _compose_jacobians(a: np.ndarray, b: np.ndarray):
    n = a.shape[0]
    j1 = np.eye(n)
    j2 = np.eye(n)
    if n == 3:
        c, s = math.cos(a[2]), math.sin(a[2])
        j1[0, 2] = -s * b[0] - c * b[1]
        j1[1, 2] = c * b[0] - s * b[1]
        j2[:2, :2] = [[c, -s], [s, c]]
    else:
        c, s = math.cos(a[3]), math.sin(a[3])
        j1[0, 3] = -s * b[0] - c * b[1]
        j1[1, 3] = c * b[0] - s * b[1]
        j2[:2, :2] = [[c, -s], [s, c]]
    return j1, j2


def compound(
    a: PoseBelief,
    b: PoseBelief,
    correlated: bool = False,
    cross_cov: np.ndarray | None = None,
) -> PoseBelief:
    """Head-to-tail composition of two pose beliefs.

    The mean is the exact group composition; the covariance is the
    first-order propagation ``J1 Sa J1' + J2 Sb J2'`` with the cross term
    added when ``correlated`` is set.
    """
    if a.n != b.n:
        raise ValueError(f"pose dimension mismatch: {a.n} vs {b.n}")
    mean = _compose_mean(a.mean, b.mean)
    j1, j2 = _compose_jacobians(a.mean, b.mean)
    cov = j1 @ a.cov @ j1.T + j2 @ b.cov @ j2.T
    if correlated:
        if cross_cov is None:
            raise ValueError("correlated composition requires cross_cov")
        cross = np.asarray(cross_cov, dtype=float)
        cov = cov + j1 @ cross @ j2.T + j2 @ cross.T @ j1.T
    return PoseBelief(mean, cov)


def _inverse_mean(a: np.ndarray) -> np.ndarray:
    if a.shape[0] == 3:
        c, s = math.cos(a[2]), math.sin(a[2])
        return np.array(
            [-(c * a[0] + s * a[1]), s * a[0] - c * a[1], wrap_angle(-a[2])]
        )
    c, s = math.cos(a[3]), math.sin(a[3])
    return np.array(
        [
            -(c * a[0] + s * a[1]),
            s * a[0] - c * a[1],
            -a[2],
            wrap_angle(-a[3]),
            wrap_angle(-a[4]),
        ]
    )


def _inverse_jacobian(a: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    j = -np.eye(n)
    if n == 3:
        c, s = math.cos(a[2]), math.sin(a[2])
        j[0, 0], j[0, 1], j[0, 2] = -c, -s, s * a[0] - c * a[1]
        j[1, 0], j[1, 1], j[1, 2] = s, -c, c * a[0] + s * a[1]
    else:
        c, s = math.cos(a[3]), math.sin(a[3])
        j[0, 0], j[0, 1], j[0, 3] = -c, -s, s * a[0] - c * a[1]
        j[1, 0], j[1, 1], j[1, 3] = s, -c, c * a[0] + s * a[1]
    return j


def inverse(a: PoseBelief) -> PoseBelief:
    """Inverse pose belief: exact group inverse mean, J Sigma J' covariance."""
    j = _inverse_jacobian(a.mean)
    return PoseBelief(_inverse_mean(a.mean), j @ a.cov @ j.T)


def compound_point(frame: PoseBelief, point: np.ndarray):
    """Map an exact point from frame coordinates to the frame's parent.

    Returns the transformed point mean and the positional covariance
    induced by the frame belief (the point itself carries no uncertainty).
    """
    p = np.asarray(point, dtype=float)
    d = frame.dim
    if p.shape != (d,):
        raise ValueError(f"point shape {p.shape} does not match workspace dimension {d}")
    yaw = frame.yaw
    c, s = math.cos(yaw), math.sin(yaw)
    if d == 2:
        mean = np.array(
            [frame.mean[0] + c * p[0] - s * p[1], frame.mean[1] + s * p[0] + c * p[1]]
        )
        jac = np.zeros((2, 3))
        jac[:, :2] = np.eye(2)
        jac[0, 2] = -s * p[0] - c * p[1]
        jac[1, 2] = c * p[0] - s * p[1]
    else:
        mean = np.array(
            [
                frame.mean[0] + c * p[0] - s * p[1],
                frame.mean[1] + s * p[0] + c * p[1],
                frame.mean[2] + p[2],
            ]
        )
        jac = np.zeros((3, 5))
        jac[:, :3] = np.eye(3)
        jac[0, 3] = -s * p[0] - c * p[1]
        jac[1, 3] = c * p[0] - s * p[1]
    cov = jac @ frame.cov @ jac.T
    return mean, 0.5 * (cov + cov.T)


def transform_point_to_frame(point: np.ndarray, frame: PoseBelief):
    """Express a parent-frame point in ``frame`` coordinates.

    Returns the local point mean and the positional covariance induced by
    the frame uncertainty.
    """
    return compound_point(inverse(frame), point)
