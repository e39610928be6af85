"""Belief dynamics: nominal state propagation plus covariance propagation.

Two vehicle models share one propagation interface:

* a feedback-linearised unicycle whose closed loop is an exact discrete
  linear-Gaussian system ``z <- A z + B r`` on ``z = (x, y, vx, vy)``, with
  reference states ``r`` as controls;
* a fixed-wing kinematic model on ``(x, y, z, yaw, pitch)`` with controls
  ``(v, omega, q)``, integrated with Euler steps and first-order Jacobian
  covariance propagation.

Controls sampled for tree expansion are drawn uniformly over a fixed box;
unicycle samples are reference *offsets* that must be bound to a start
state before propagation so that edges replay exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm

from .geometry import PoseBelief, wrap_angle

__all__ = [
    "Belief",
    "Control",
    "UnicycleParams",
    "FixedWingParams",
    "UnicycleModel",
    "FixedWingModel",
    "make_model",
]


@dataclass(frozen=True)
class Belief:
    """Gaussian state estimate: mean vector, covariance, timestamp."""

    mean: np.ndarray
    cov: np.ndarray
    stamp: float = 0.0

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).copy()
        cov = np.asarray(self.cov, dtype=float)
        cov = 0.5 * (cov + cov.T)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    def position(self, dim: int) -> np.ndarray:
        return self.mean[:dim]

    def position_cov(self, dim: int) -> np.ndarray:
        return self.cov[:dim, :dim]


def _belief_fast(mean: np.ndarray, cov: np.ndarray, stamp: float) -> Belief:
    """Internal constructor for freshly computed arrays (skips re-validation)."""
    b = object.__new__(Belief)
    object.__setattr__(b, "mean", mean)
    object.__setattr__(b, "cov", cov)
    object.__setattr__(b, "stamp", stamp)
    return b


@dataclass(frozen=True)
class Control:
    """One piecewise-constant control applied for ``duration`` seconds.

    For the unicycle, ``u`` is a reference-state offset until bound
    (``bound=False``) and an absolute reference state afterwards.
    """

    u: np.ndarray
    duration: float
    bound: bool = True

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float).copy()
        u.setflags(write=False)
        object.__setattr__(self, "u", u)


@dataclass(frozen=True)
class UnicycleParams:
    kp: float = 1.0
    kd: float = 2.0
    dt: float = 0.05
    sigma_w: tuple = (0.0, 0.0, 0.0, 0.0)  # per-step noise std devs on (x, y, vx, vy)
    ref_offset_max: float = 2.0  # m, reference position offset box
    ref_speed_max: float = 1.0  # m/s, reference velocity box
    t_prop_min: float = 0.2
    t_prop_max: float = 1.0


@dataclass(frozen=True)
class FixedWingParams:
    dt: float = 0.05
    v_max: float = 2.0
    omega_max: float = 1.0
    q_max: float = 0.5
    a_max: float = 2.0  # m/s^2, braking deceleration on commanded speed
    sigma_w0: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)  # per-step noise std devs
    k_v: float = 0.0  # speed-scaled position noise variance gain
    k_omega: float = 0.0  # rate-scaled angle noise variance gain
    theta_limit: float = math.pi / 2 - 0.1
    t_prop_min: float = 0.2
    t_prop_max: float = 1.0


def _steps_for(duration: float, dt: float) -> int:
    n = duration / dt
    n_round = round(n)
    if n_round < 1 or abs(n - n_round) > 1e-6:
        raise ValueError(f"duration {duration} is not a positive multiple of dt {dt}")
    return int(n_round)


class UnicycleModel:
    """Closed-loop linearised planar vehicle on ``z = (x, y, vx, vy)``."""

    n_x = 4
    n_u = 4
    workspace_dim = 2

    def __init__(self, params: UnicycleParams = UnicycleParams()):
        self.params = params
        # exact discretisation of the per-axis double integrator under PD control
        kp, kd, dt = params.kp, params.kd, params.dt
        a_c = np.array([[0.0, 1.0], [-kp, -kd]])
        b_c = np.array([[0.0, 0.0], [kp, kd]])
        m = np.zeros((4, 4))
        m[:2, :2] = a_c
        m[:2, 2:] = b_c
        em = expm(m * dt)
        a2, b2 = em[:2, :2], em[:2, 2:]
        self.A = np.zeros((4, 4))
        self.B = np.zeros((4, 4))
        # state ordering (x, y, vx, vy); per-axis blocks act on (pos, vel)
        for axis in range(2):
            pos, vel = axis, axis + 2
            self.A[pos, pos], self.A[pos, vel] = a2[0, 0], a2[0, 1]
            self.A[vel, pos], self.A[vel, vel] = a2[1, 0], a2[1, 1]
            self.B[pos, pos], self.B[pos, vel] = b2[0, 0], b2[0, 1]
            self.B[vel, pos], self.B[vel, vel] = b2[1, 0], b2[1, 1]
        self.sigma_w = np.diag(np.asarray(params.sigma_w, dtype=float) ** 2)
        self._pow_cache: dict = {}

    @property
    def dt(self) -> float:
        return self.params.dt

    def _pows(self, n: int):
        """n-step closed forms: state transition, input sum, noise sum."""
        cached = self._pow_cache.get(n)
        if cached is not None:
            return cached
        an = np.eye(4)
        sn = np.zeros((4, 4))
        qn = np.zeros((4, 4))
        for _ in range(n):
            sn = self.A @ sn + self.B
            qn = self.A @ qn @ self.A.T + self.sigma_w
            an = self.A @ an
        out = (an, sn, qn)
        self._pow_cache[n] = out
        return out

    def advance(self, mean: np.ndarray, cov: np.ndarray, control: Control, n_steps: int):
        """Jump n dt-steps at once (exact for the linear closed loop)."""
        an, sn, qn = self._pows(n_steps)
        m = an @ mean + sn @ control.u
        c = an @ cov @ an.T + qn
        return m, 0.5 * (c + c.T)

    def hold_control(self, belief: Belief, duration: float | None = None) -> Control:
        """Reference at the current position with zero velocity (stop-and-hold)."""
        r = np.array([belief.mean[0], belief.mean[1], 0.0, 0.0])
        return Control(r, duration if duration is not None else self.dt, bound=True)

    def bind_control(self, control: Control, at_state: np.ndarray) -> Control:
        """Turn a sampled reference offset into an absolute reference."""
        if control.bound:
            return control
        r = np.array(
            [
                at_state[0] + control.u[0],
                at_state[1] + control.u[1],
                control.u[2],
                control.u[3],
            ]
        )
        return Control(r, control.duration, bound=True)

    def control_in_bounds(self, control: Control) -> bool:
        if not control.bound:
            u = control.u
            p = self.params
            return (
                abs(u[0]) <= p.ref_offset_max + 1e-9
                and abs(u[1]) <= p.ref_offset_max + 1e-9
                and abs(u[2]) <= p.ref_speed_max + 1e-9
                and abs(u[3]) <= p.ref_speed_max + 1e-9
            )
        return True

    def step_mean(self, z: np.ndarray, r: np.ndarray) -> np.ndarray:
        return self.A @ z + self.B @ r

    def step_mean_cov(self, mean: np.ndarray, cov: np.ndarray, control: Control):
        """One dt step on raw arrays (hot loops)."""
        m = self.A @ mean + self.B @ control.u
        c = self.A @ cov @ self.A.T + self.sigma_w
        return m, 0.5 * (c + c.T)

    def preview_mean(self, state: np.ndarray, control: Control) -> np.ndarray:
        """Endpoint of the nominal mean under a control (no covariance)."""
        an, sn, _ = self._pows(_steps_for(control.duration, self.dt))
        return an @ state + sn @ control.u

    def propagate_path(self, belief: Belief, control: Control) -> list[Belief]:
        """All per-step beliefs reached while applying ``control``."""
        if not control.bound:
            raise ValueError("control must be bound to a start state before propagation")
        n = _steps_for(control.duration, self.dt)
        z = belief.mean
        cov = belief.cov
        t = belief.stamp
        out = []
        for _ in range(n):
            z = self.step_mean(z, control.u)
            cov = self.A @ cov @ self.A.T + self.sigma_w
            cov = 0.5 * (cov + cov.T)
            t += self.dt
            out.append(_belief_fast(z, cov, t))
        return out

    def propagate(self, belief: Belief, control: Control) -> Belief:
        return self.propagate_path(belief, control)[-1]

    def speed(self, state: np.ndarray) -> float:
        return float(math.hypot(state[2], state[3]))

    def braking_sequence(self, belief: Belief, speed: float | None = None, eps_v: float = 0.01):
        """Hold-position references until the nominal speed settles below eps_v."""
        if speed is None:
            speed = self.speed(belief.mean)
        if speed <= eps_v:
            return []
        r = np.array([belief.mean[0], belief.mean[1], 0.0, 0.0])
        hold = Control(r, self.dt, bound=True)
        z = belief.mean
        controls = []
        for _ in range(400):
            z = self.step_mean(z, r)
            controls.append(hold)
            if self.speed(z) <= eps_v:
                break
        return controls

    def sample_control(self, rng: np.random.Generator) -> Control:
        p = self.params
        u = np.array(
            [
                rng.uniform(-p.ref_offset_max, p.ref_offset_max),
                rng.uniform(-p.ref_offset_max, p.ref_offset_max),
                rng.uniform(-p.ref_speed_max, p.ref_speed_max),
                rng.uniform(-p.ref_speed_max, p.ref_speed_max),
            ]
        )
        t_prop = rng.uniform(p.t_prop_min, p.t_prop_max)
        duration = max(1, round(t_prop / self.dt)) * self.dt
        return Control(u, duration, bound=False)

    def connect_controls(self, state: np.ndarray, target_pos: np.ndarray):
        """Reference chain marching straight to a target point, then settling.

        Candidate for greedy goal connection; callers must validate the
        propagated path like any other extension.
        """
        p = self.params
        pos = np.asarray(state[:2], dtype=float)
        target = np.asarray(target_pos[:2], dtype=float)
        dist = float(np.linalg.norm(target - pos))
        cruise = 0.8 * p.ref_speed_max
        controls = []
        if dist > 1e-6 and cruise > 0:
            # ramp reference: velocity feedforward gives zero tracking lag,
            # so the vehicle follows the line at cruise speed
            direction = (target - pos) / dist
            n = int(math.ceil(dist / (cruise * self.dt)))
            for k in range(1, n + 1):
                s = min(k * cruise * self.dt, dist)
                carrot = pos + direction * s
                vel = direction * cruise if s < dist else np.zeros(2)
                controls.append(
                    Control(np.array([carrot[0], carrot[1], vel[0], vel[1]]), self.dt, bound=True)
                )
        settle = max(1, round(4.0 / self.dt)) * self.dt
        controls.append(Control(np.array([target[0], target[1], 0.0, 0.0]), settle, bound=True))
        return controls

    def control_box_midpoint(self) -> np.ndarray:
        return np.zeros(4)

    def pose_from_belief(self, belief: Belief) -> PoseBelief:
        """World-axis-aligned frame at the believed position (no heading state)."""
        mean = np.array([belief.mean[0], belief.mean[1], 0.0])
        cov = np.zeros((3, 3))
        cov[:2, :2] = belief.cov[:2, :2]
        return PoseBelief(mean, cov)

    def heading(self, state: np.ndarray, fallback: float = 0.0) -> float:
        if self.speed(state) < 1e-6:
            return fallback
        return math.atan2(state[3], state[2])

    def state_bounds(self, workspace_lo, workspace_hi):
        p = self.params
        lo = np.array([workspace_lo[0], workspace_lo[1], -p.ref_speed_max, -p.ref_speed_max])
        hi = np.array([workspace_hi[0], workspace_hi[1], p.ref_speed_max, p.ref_speed_max])
        return lo, hi

    def distance(self, means: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.linalg.norm(means - x[None, :], axis=1)

    def true_step(self, state: np.ndarray, control: Control, rng: np.random.Generator, noise_scale: float = 1.0) -> np.ndarray:
        z = self.step_mean(state, control.u)
        sd = np.asarray(self.params.sigma_w, dtype=float)
        if noise_scale > 0.0 and np.any(sd > 0.0):
            z = z + rng.normal(0.0, sd * math.sqrt(noise_scale))
        return z


class FixedWingModel:
    """Forward-flight kinematics on ``(x, y, z, yaw, pitch)``."""

    n_x = 5
    n_u = 3
    workspace_dim = 3

    def __init__(self, params: FixedWingParams = FixedWingParams()):
        self.params = params

    @property
    def dt(self) -> float:
        return self.params.dt

    def hold_control(self, belief: Belief, duration: float | None = None) -> Control:
        return Control(np.zeros(3), duration if duration is not None else self.dt, bound=True)

    def bind_control(self, control: Control, at_state: np.ndarray) -> Control:
        return control if control.bound else replace(control, bound=True)

    def control_in_bounds(self, control: Control) -> bool:
        p = self.params
        v, om, q = control.u
        return (
            -1e-9 <= v <= p.v_max + 1e-9
            and abs(om) <= p.omega_max + 1e-9
            and abs(q) <= p.q_max + 1e-9
        )

    def step_mean(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        dt = self.dt
        v, om, q = u
        psi, th = x[3], x[4]
        out = np.array(
            [
                x[0] + dt * v * math.cos(psi) * math.cos(th),
                x[1] + dt * v * math.sin(psi) * math.cos(th),
                x[2] + dt * v * math.sin(th),
                wrap_angle(psi + dt * om),
                x[4] + dt * q,
            ]
        )
        lim = self.params.theta_limit
        out[4] = min(max(out[4], -lim), lim)
        return out

    def step_jacobian(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        dt = self.dt
        v = u[0]
        psi, th = x[3], x[4]
        cp, sp = math.cos(psi), math.sin(psi)
        ct, st = math.cos(th), math.sin(th)
        f = np.eye(5)
        f[0, 3] = -dt * v * sp * ct
        f[0, 4] = -dt * v * cp * st
        f[1, 3] = dt * v * cp * ct
        f[1, 4] = -dt * v * sp * st
        f[2, 4] = dt * v * ct
        return f

    def _step_noise(self, u: np.ndarray) -> np.ndarray:
        p = self.params
        base = np.asarray(p.sigma_w0, dtype=float) ** 2
        v, om, q = u
        scaled = np.array(
            [p.k_v * abs(v), p.k_v * abs(v), p.k_v * abs(v), p.k_omega * abs(om), p.k_omega * abs(q)]
        ) * self.dt
        return np.diag(base + scaled)

    def step_mean_cov(self, mean: np.ndarray, cov: np.ndarray, control: Control):
        """One dt step on raw arrays (hot loops)."""
        f = self.step_jacobian(mean, control.u)
        m = self.step_mean(mean, control.u)
        c = f @ cov @ f.T + self._step_noise(control.u)
        return m, 0.5 * (c + c.T)

    def preview_mean(self, state: np.ndarray, control: Control) -> np.ndarray:
        """Approximate endpoint under a control, for ranking candidates.

        Integrates with coarse substeps; good enough to order extensions by
        distance, cheap enough to run per candidate.
        """
        n = _steps_for(control.duration, self.dt)
        coarse = max(1, n // 4)
        dt_big = control.duration / coarse
        v, om, q = control.u
        x = state.copy()
        lim = self.params.theta_limit
        for _ in range(coarse):
            x[0] += dt_big * v * math.cos(x[3]) * math.cos(x[4])
            x[1] += dt_big * v * math.sin(x[3]) * math.cos(x[4])
            x[2] += dt_big * v * math.sin(x[4])
            x[3] += dt_big * om
            x[4] = min(max(x[4] + dt_big * q, -lim), lim)
        x[3] = wrap_angle(x[3])
        return x

    def advance(self, mean: np.ndarray, cov: np.ndarray, control: Control, n_steps: int):
        for _ in range(n_steps):
            mean, cov = self.step_mean_cov(mean, cov, control)
        return mean, cov

    def propagate_path(self, belief: Belief, control: Control) -> list[Belief]:
        if not self.control_in_bounds(control):
            raise ValueError(f"control {control.u} out of bounds")
        n = _steps_for(control.duration, self.dt)
        x = belief.mean
        cov = belief.cov
        t = belief.stamp
        qn = self._step_noise(control.u)
        out = []
        for _ in range(n):
            f = self.step_jacobian(x, control.u)
            x = self.step_mean(x, control.u)
            cov = f @ cov @ f.T + qn
            cov = 0.5 * (cov + cov.T)
            t += self.dt
            out.append(_belief_fast(x, cov, t))
        return out

    def propagate(self, belief: Belief, control: Control) -> Belief:
        return self.propagate_path(belief, control)[-1]

    def speed(self, state: np.ndarray) -> float:
        return 0.0  # speed is commanded, not part of the state

    def braking_sequence(self, belief: Belief, speed: float | None = None, eps_v: float = 0.01):
        """Ramp the commanded speed to zero at maximum deceleration.

        Without a speed hint the ramp conservatively starts from v_max.
        """
        p = self.params
        v = p.v_max if speed is None else float(speed)
        if v <= eps_v:
            return []
        controls = []
        while v > eps_v:
            v = max(0.0, v - p.a_max * self.dt)
            controls.append(Control(np.array([v, 0.0, 0.0]), self.dt, bound=True))
        return controls

    def sample_control(self, rng: np.random.Generator) -> Control:
        p = self.params
        u = np.array(
            [
                rng.uniform(0.0, p.v_max),
                rng.uniform(-p.omega_max, p.omega_max),
                rng.uniform(-p.q_max, p.q_max),
            ]
        )
        t_prop = rng.uniform(p.t_prop_min, p.t_prop_max)
        duration = max(1, round(t_prop / self.dt)) * self.dt
        return Control(u, duration, bound=True)

    def connect_controls(self, state: np.ndarray, target_pos: np.ndarray):
        return None  # no steering candidate for the forward-flight model

    def control_box_midpoint(self) -> np.ndarray:
        return np.array([self.params.v_max / 2.0, 0.0, 0.0])

    def pose_from_belief(self, belief: Belief) -> PoseBelief:
        return PoseBelief(belief.mean.copy(), belief.cov.copy())

    def heading(self, state: np.ndarray, fallback: float = 0.0) -> float:
        return float(state[3])

    def state_bounds(self, workspace_lo, workspace_hi):
        lim = self.params.theta_limit
        lo = np.array([workspace_lo[0], workspace_lo[1], workspace_lo[2], -math.pi, -lim])
        hi = np.array([workspace_hi[0], workspace_hi[1], workspace_hi[2], math.pi, lim])
        return lo, hi

    def distance(self, means: np.ndarray, x: np.ndarray) -> np.ndarray:
        dpos = np.linalg.norm(means[:, :3] - x[None, :3], axis=1)
        dpsi = np.abs(np.remainder(means[:, 3] - x[3] + math.pi, 2 * math.pi) - math.pi)
        dth = np.abs(means[:, 4] - x[4])
        return np.sqrt(dpos ** 2 + dpsi ** 2 + dth ** 2)  # angle weight 1 m/rad

    def true_step(self, state: np.ndarray, control: Control, rng: np.random.Generator, noise_scale: float = 1.0) -> np.ndarray:
        x = self.step_mean(state, control.u)
        qn = np.sqrt(np.diag(self._step_noise(control.u)))
        if noise_scale > 0.0 and np.any(qn > 0.0):
            x = x + rng.normal(0.0, qn * math.sqrt(noise_scale))
            x[3] = wrap_angle(x[3])
        return x


def make_model(name: str, **kwargs):
    if name == "unicycle":
        return UnicycleModel(UnicycleParams(**kwargs))
    if name == "fixed_wing":
        return FixedWingModel(FixedWingParams(**kwargs))
    raise ValueError(f"unknown model {name!r}")
