"""Mars powered-descent dynamics: point mass with gravity, lift/drag, and thrust.

State is [r (3), v (3), m] in a Mars-centred, Mars-fixed frame, SI units,
64-bit floats throughout.  Control is [delta_T, sigma_T, eta_T]: throttle
plus thrust azimuth/elevation resolved in the wind axes.  The right-hand
side accepts dual-number states/controls so Jacobians come out of the
same code path that propagates trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import policy as policy_mod
from ..diff import Dual, concat, value
from ..odeint import StopCondition, TimeGrid, integrate_adaptive, integrate_fixed

__all__ = [
    "MarsParams",
    "MissionSpec",
    "MarsGuidance",
    "DegenerateTriad",
    "f_sw",
    "mars_rhs",
    "mission_vectors",
    "cross3",
    "mars_policy_network",
]

SECONDS_PER_DAY = 86400.0

# Relative cross-product norm below which the wind triad is considered
# degenerate (airspeed nearly parallel to the position vector).
TRIAD_EPS = 1e-6


class DegenerateTriad(RuntimeError):
    """Wind triad undefined: airspeed (anti)parallel to the radius vector."""


@dataclass(frozen=True)
class MarsParams:
    """Environment and vehicle constants, stored in SI units.

    `Omega` is the planet spin rate in rad/s (converted from rad/day at
    construction time by the scenario loader).  `cd_area` is the fixed
    drag reference product C_D * S = m0 / beta0, which makes the drag
    force independent of the instantaneous mass.
    """

    mu: float = 4.282837e13
    R_M: float = 3389.5e3
    Omega: float = 2.0 * np.pi / 1.025957 / SECONDS_PER_DAY
    rho0: float = 0.0263
    H_scale: float = 10153.6
    g0: float = 9.805
    v_w: tuple = (0.0, 0.0, 0.0)
    m_dry: float = 51600.0
    m_sw: float = 1.0
    I_sp: float = 360.0
    beta0: float = 379.0
    cd_area: float = 62000.0 / 379.0
    R_LD: float = 0.54
    sigma_L: float = 0.0
    T_max: float = 8.0e5
    T_min: float = 0.2 * 8.0e5
    eta_min: float = -0.5 * np.pi
    eta_max: float = 0.5 * np.pi
    sigma_min: float = -np.pi
    sigma_max: float = np.pi

    def __post_init__(self):
        if not (self.T_min < self.T_max):
            raise ValueError("need T_min < T_max")
        if not (self.m_sw > 0.0 and self.m_dry > 0.0):
            raise ValueError("masses must be positive")
        for name in ("mu", "R_M", "rho0", "H_scale", "g0", "I_sp", "beta0",
                     "cd_area"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        object.__setattr__(self, "v_w", tuple(float(c) for c in self.v_w))

    @property
    def omega_vec(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.Omega])

    @property
    def omega_skew(self) -> np.ndarray:
        """Constant matrix form of Omega x (.) for the rotation terms."""
        w = self.Omega
        return np.array([[0.0, -w, 0.0], [w, 0.0, 0.0], [0.0, 0.0, 0.0]])


@dataclass(frozen=True)
class MissionSpec:
    """Initial/final conditions of the descent, angles in radians."""

    h0: float = 2480.0
    V0: float = 505.0
    gamma0: float = 0.0
    s0: float = 11500.0
    m0: float = 62000.0
    theta_fd: float = np.deg2rad(45.0)
    V_fd: float = 2.5
    t_f: float = 43.0

    def __post_init__(self):
        if not (self.s0 > 0.0 and self.t_f > 0.0 and self.m0 > 0.0):
            raise ValueError("s0, t_f, m0 must be positive")


def mission_vectors(spec: MissionSpec, R_M: float):
    """Initial and desired-final position/velocity in the rotating frame.

    Both endpoints lie in the XZ plane; the initial latitude follows from
    the ground-track distance s0 = R_M (theta_fd - theta0).
    """
    theta0 = spec.theta_fd - spec.s0 / R_M
    r0 = (R_M + spec.h0) * np.array([np.cos(theta0), 0.0, np.sin(theta0)])
    v0 = spec.V0 * np.array([-np.sin(theta0 - spec.gamma0), 0.0,
                             np.cos(theta0 - spec.gamma0)])
    r_fd = R_M * np.array([np.cos(spec.theta_fd), 0.0, np.sin(spec.theta_fd)])
    v_fd = -spec.V_fd * r_fd / np.sqrt(r_fd @ r_fd)
    return r0, v0, r_fd, v_fd


def f_sw(m, m_dry: float, m_sw: float):
    """Smooth thrust switch: 0 at dry mass, 1 once m exceeds m_dry + m_sw."""
    frac = np.minimum(np.maximum(m - m_dry, 0.0), m_sw) / m_sw
    return 0.5 * (1.0 - np.cos(np.pi * frac))


def cross3(a, b):
    """Cross product of 3-vectors; dual partials propagate through."""
    a_dual, b_dual = isinstance(a, Dual), isinstance(b, Dual)
    if not (a_dual or b_dual):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return np.array([a[1] * b[2] - a[2] * b[1],
                         a[2] * b[0] - a[0] * b[2],
                         a[0] * b[1] - a[1] * b[0]])
    av = a.v if a_dual else np.asarray(a, dtype=float)
    bv = b.v if b_dual else np.asarray(b, dtype=float)
    cv = np.array([av[1] * bv[2] - av[2] * bv[1],
                   av[2] * bv[0] - av[0] * bv[2],
                   av[0] * bv[1] - av[1] * bv[0]])
    k = a.d.shape[-1] if a_dual else b.d.shape[-1]
    cd = np.zeros((3, k))
    if a_dual:
        ad = a.d
        cd[0] += bv[2] * ad[1] - bv[1] * ad[2]
        cd[1] += bv[0] * ad[2] - bv[2] * ad[0]
        cd[2] += bv[1] * ad[0] - bv[0] * ad[1]
    if b_dual:
        bd = b.d
        cd[0] += av[1] * bd[2] - av[2] * bd[1]
        cd[1] += av[2] * bd[0] - av[0] * bd[2]
        cd[2] += av[0] * bd[1] - av[1] * bd[0]
    return Dual(cv, cd)


def _wind_triad(v_a, r, triad_memory):
    w = cross3(v_a, r)
    wn = np.sqrt(w @ w)
    van = np.sqrt(v_a @ v_a)
    rn = np.sqrt(r @ r)
    sin_angle = float(value(wn)) / (float(value(van)) * float(value(rn)))
    if sin_angle < TRIAD_EPS:
        if triad_memory:
            return triad_memory[0], triad_memory[1], triad_memory[2]
        raise DegenerateTriad(
            f"airspeed within {TRIAD_EPS:g} of radial; no stored triad")
    va_hat = v_a / van
    w_hat = w / wn
    b1 = cross3(w_hat, va_hat)
    if triad_memory is not None:
        triad_memory[:] = [value(b1).copy(), value(w_hat).copy(),
                           value(va_hat).copy()]
    return b1, w_hat, va_hat


def mars_rhs(t, x, u, params: MarsParams, triad_memory: Optional[list] = None):
    """Time derivative of [r, v, m] under throttle/angle command u.

    With `triad_memory` (a mutable list owned by one propagation run) the
    wind triad freezes at its last well-conditioned value instead of
    raising DegenerateTriad, which keeps the dynamics defined through the
    terminal stop event.
    """
    r = x[0:3]
    v = x[3:6]
    m = x[6]
    delta_T, sigma_T, eta_T = u[0], u[1], u[2]

    v_a = v - np.asarray(params.v_w, dtype=float)
    r2 = r @ r
    rn = np.sqrt(r2)
    va2 = v_a @ v_a
    h = rn - params.R_M
    rho = params.rho0 * np.exp(-h / params.H_scale)

    b1, w_hat, va_hat = _wind_triad(v_a, r, triad_memory)

    D = (0.5 * params.cd_area) * rho * va2
    L = params.R_LD * D
    F_L = L * (np.cos(params.sigma_L) * b1 + np.sin(params.sigma_L) * w_hat)
    F_D = -D * va_hat

    T = f_sw(m, params.m_dry, params.m_sw) * params.T_max * delta_T
    ce = np.cos(eta_T)
    F_T = T * (ce * np.cos(sigma_T) * b1 + ce * np.sin(sigma_T) * w_hat
               + np.sin(eta_T) * va_hat)

    omega_skew = params.omega_skew
    accel = (-(params.mu / (r2 * rn)) * r
             + (F_L + F_D + F_T) / m
             - omega_skew @ (2.0 * v)
             - omega_skew @ (omega_skew @ r))
    mdot = -T / (params.I_sp * params.g0)
    return concat((v, accel, mdot))


def mars_policy_network(params: MarsParams, theta=None,
                        hidden=(10, 10)) -> policy_mod.PolicyNetwork:
    """Descent policy: 6 inputs, tanh hidden layers, 3 bounded outputs.

    Output order is [delta_T, sigma_T, eta_T] with bounds taken from the
    vehicle limits (throttle floor T_min/T_max, angle limits).
    """
    dims = (6,) + tuple(hidden) + (3,)
    acts = ("tanh",) * len(hidden) + ("linear", "scale")
    lb = np.array([params.T_min / params.T_max, params.sigma_min, params.eta_min])
    ub = np.array([1.0, params.sigma_max, params.eta_max])
    if theta is None:
        theta = np.zeros(policy_mod.parameter_count(dims))
    return policy_mod.PolicyNetwork(layer_dims=dims, activations=acts,
                                    y_lb=lb, y_ub=ub, theta=theta)


class MarsGuidance:
    """Plant + mission + policy bundle exposing both decision forms.

    `f_u` is the raw plant with the control as decision variable; `f_theta`
    closes the loop through the policy so the network parameters become the
    decision variable.  The performance output is [r; v] (H = [I6 | 0]).
    """

    def __init__(self, params: MarsParams, mission: MissionSpec,
                 net: policy_mod.PolicyNetwork):
        self.params = params
        self.mission = mission
        self.net = net
        r0, v0, r_fd, v_fd = mission_vectors(mission, params.R_M)
        self.r0, self.v0 = r0, v0
        self.r_fd, self.v_fd = r_fd, v_fd
        self.x0 = np.concatenate([r0, v0, [mission.m0]])
        self.H = np.hstack([np.eye(6), np.zeros((6, 1))])
        self.z_target = np.concatenate([r_fd, v_fd])

    @property
    def n(self) -> int:
        return 7

    @property
    def m(self) -> int:
        return 3

    def policy_u(self, x, theta=None):
        inp = policy_mod.policy_input(x, self.r_fd, self.v_fd,
                                      self.mission.s0, self.mission.V0)
        return policy_mod.forward(self.net, inp, theta)

    def f_u(self, t, x, u, triad_memory=None):
        return mars_rhs(t, x, u, self.params, triad_memory)

    def f_theta(self, t, x, theta, triad_memory=None):
        return mars_rhs(t, x, self.policy_u(x, theta), self.params, triad_memory)

    def bound_f_theta(self):
        """Closed-loop RHS with a fresh triad cache for one propagation run."""
        mem: list = []
        return lambda t, x, theta: self.f_theta(t, x, theta, triad_memory=mem)

    def bound_f_u(self):
        mem: list = []
        return lambda t, x, u: self.f_u(t, x, u, triad_memory=mem)

    def eval_grid(self, dt: float = 0.05) -> TimeGrid:
        return TimeGrid(0.0, self.mission.t_f, dt)

    def propagate(self, theta, x0=None, grid: Optional[TimeGrid] = None):
        """Fixed-grid closed-loop run to the nominal final time."""
        grid = self.eval_grid() if grid is None else grid
        x0 = self.x0 if x0 is None else np.asarray(x0, dtype=float)
        f = self.bound_f_theta()
        return integrate_fixed(lambda t, x: f(t, x, theta), x0, grid)

    def propagate_with_stop(self, theta, x0=None, rtol=1e-7, atol=1e-9):
        """Adaptive closed-loop run honoring the landing stop rule."""
        x0 = self.x0 if x0 is None else np.asarray(x0, dtype=float)
        grid = TimeGrid(0.0, self.mission.t_f, rtol=rtol, atol=atol)
        f = self.bound_f_theta()
        return integrate_adaptive(lambda t, x: f(t, x, theta), x0, grid,
                                  stop=self.stop_condition())

    def stop_condition(self, capture_radius: float = 100.0) -> StopCondition:
        """Stop when within the capture radius and receding, or at t_f.

        The event value is min(radius - |r - r_fd|, v . (r - r_fd)):
        nonnegative exactly when both clauses of the landing rule hold.
        """
        r_fd = self.r_fd

        def event(t, x):
            dr = x[0:3] - r_fd
            closeness = capture_radius - np.sqrt(dr @ dr)
            receding = x[3:6] @ dr
            return min(closeness, receding)

        return StopCondition(event=event, direction=+1,
                             max_time=self.mission.t_f)

    def control_history(self, traj, theta):
        """Policy commands at the trajectory knots."""
        return np.array([value(self.policy_u(x, theta)) for x in traj.xs])

    def errors(self, x):
        """Position and velocity error norms against the desired endpoint."""
        e_r = float(np.linalg.norm(value(x)[0:3] - self.r_fd))
        e_v = float(np.linalg.norm(value(x)[3:6] - self.v_fd))
        return e_r, e_v
