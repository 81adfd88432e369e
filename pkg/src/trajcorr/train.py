"""Baseline policy optimization: penalty cost plus ADAM on the exact discrete gradient.

The cost penalizes terminal position/velocity errors with large weights,
integrates the throttle as a fuel proxy, and L2-regularizes the
parameters.  A second optimizer stage is deliberately plain: ADAM
continues with a decayed learning rate after a plateau instead of
switching to a quasi-Newton method.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .diff import concat, cost_gradient, five_point_derivative, value
from .odeint import TimeGrid, integrate_fixed
from .plants.mars import MarsGuidance
from .policy import init_parameters

__all__ = [
    "TrainConfig",
    "TrainReport",
    "CostWeights",
    "mars_cost",
    "mars_cost_and_gradient",
    "train",
    "run_adam",
    "GradientAuditError",
]


class GradientAuditError(RuntimeError):
    """Adjoint gradient disagreed with the finite-difference audit."""


@dataclass(frozen=True)
class CostWeights:
    k_rf: float = 1.0e6
    k_vf: float = 1.0e5
    k_T: float = 1.0
    k_theta: float = 1.0e-6

    def __post_init__(self):
        if min(self.k_rf, self.k_vf, self.k_T, self.k_theta) <= 0.0:
            raise ValueError("cost weights must be positive")


@dataclass(frozen=True)
class TrainConfig:
    """Weights, optimizer settings, and the training grid step."""

    weights: CostWeights = field(default_factory=CostWeights)
    learning_rate: float = 5.0e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1.0e-8
    iterations: int = 1500
    seed: int = 0
    dt: float = 0.25
    plateau_patience: int = 60
    lr_decay: float = 0.1
    max_decays: int = 2
    audit: bool = False
    audit_every: int = 100
    audit_rel_tol: float = 1.0e-3

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
        if self.learning_rate <= 0.0:
            raise ValueError("learning rate must be positive")


@dataclass
class TrainReport:
    cost_history: list
    components: dict
    best_iteration: int
    iterations_run: int
    wall_time: float

    def to_dict(self, include_volatile: bool = False) -> dict:
        # wall time stays out of emitted files so fixed-seed runs are
        # byte-reproducible
        out = {
            "cost_history": [float(c) for c in self.cost_history],
            "components": {k: float(v) for k, v in self.components.items()},
            "best_iteration": int(self.best_iteration),
            "iterations_run": int(self.iterations_run),
        }
        if include_volatile:
            out["wall_time"] = float(self.wall_time)
        return out


def _augmented_rhs(guidance: MarsGuidance):
    """Closed loop with a trailing quadrature state accumulating the throttle."""
    mem: list = []

    def f(t, xq, theta):
        x = xq[0:7]
        u = guidance.policy_u(x, theta)
        dx = guidance.f_u(t, x, u, triad_memory=mem)
        return concat((dx, u[0]))

    return f


def _terminal_fn(guidance: MarsGuidance, w: CostWeights):
    r_fd, v_fd = guidance.r_fd, guidance.v_fd
    s0, V0 = guidance.mission.s0, guidance.mission.V0

    def terminal(xq):
        dr = xq[0:3] - r_fd
        dv = xq[3:6] - v_fd
        val = (w.k_rf * (dr @ dr) / s0 ** 2 + w.k_vf * (dv @ dv) / V0 ** 2
               + w.k_T * xq[7])
        grad = np.zeros(8)
        grad[0:3] = (2.0 * w.k_rf / s0 ** 2) * dr
        grad[3:6] = (2.0 * w.k_vf / V0 ** 2) * dv
        grad[7] = w.k_T
        return float(val), grad

    return terminal


def mars_cost(theta, guidance: MarsGuidance, weights: CostWeights,
              grid: TimeGrid):
    """Cost value with its components reported separately."""
    theta = np.asarray(theta, dtype=float)
    f = _augmented_rhs(guidance)
    xq0 = np.concatenate([guidance.x0, [0.0]])
    traj = integrate_fixed(lambda t, x: value(f(t, x, theta)), xq0, grid)
    xq = traj.xs[-1]
    dr = xq[0:3] - guidance.r_fd
    dv = xq[3:6] - guidance.v_fd
    comps = {
        "position": float(weights.k_rf * (dr @ dr) / guidance.mission.s0 ** 2),
        "velocity": float(weights.k_vf * (dv @ dv) / guidance.mission.V0 ** 2),
        "fuel": float(weights.k_T * xq[7]),
        "regularizer": float(weights.k_theta * (theta @ theta)),
    }
    return sum(comps.values()), comps


def mars_cost_and_gradient(theta, guidance: MarsGuidance, weights: CostWeights,
                           grid: TimeGrid):
    """Cost and exact gradient of the RK4-discretized training objective."""
    f = _augmented_rhs(guidance)
    xq0 = np.concatenate([guidance.x0, [0.0]])
    terminal = _terminal_fn(guidance, weights)

    def regularizer(th):
        return weights.k_theta * (th @ th), (2.0 * weights.k_theta) * th

    return cost_gradient(f, theta, xq0, grid, terminal, regularizer)


def run_adam(value_and_grad: Callable, theta0, config: TrainConfig,
             value_only: Optional[Callable] = None):
    """ADAM with best-so-far tracking and plateau-decayed learning rate.

    Deterministic for fixed inputs.  Returns (best_theta, history,
    best_iteration); `history[k]` is the cost at the iterate entering
    step k.
    """
    theta = np.asarray(theta0, dtype=float).copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    lr = config.learning_rate
    decays = 0
    anchor = 0
    best_cost = np.inf
    best_theta = theta.copy()
    best_iter = 0
    history = []
    for k in range(config.iterations):
        J, g = value_and_grad(theta)
        if not np.isfinite(J) or not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite cost or gradient at iteration {k}")
        if config.audit and value_only is not None and k % config.audit_every == 0:
            _audit_gradient(value_only, theta, g, config, k)
        history.append(float(J))
        if J < best_cost:
            best_cost = float(J)
            best_theta = theta.copy()
            best_iter = k
        if (k - max(best_iter, anchor) >= config.plateau_patience
                and decays < config.max_decays):
            lr *= config.lr_decay
            decays += 1
            anchor = k
        m = config.beta1 * m + (1.0 - config.beta1) * g
        v = config.beta2 * v + (1.0 - config.beta2) * g * g
        mhat = m / (1.0 - config.beta1 ** (k + 1))
        vhat = v / (1.0 - config.beta2 ** (k + 1))
        theta = theta - lr * mhat / (np.sqrt(vhat) + config.eps)
    return best_theta, history, best_iter


def _audit_gradient(value_only, theta, grad, config: TrainConfig, iteration: int):
    rng = np.random.default_rng((config.seed, iteration))
    coords = rng.choice(theta.size, size=min(3, theta.size), replace=False)
    for j in coords:
        step = 1.0e-5 * max(1.0, abs(theta[j]))
        fd = five_point_derivative(value_only, theta, int(j), step)
        denom = max(abs(fd), abs(grad[j]), 1.0e-8)
        if abs(fd - grad[j]) / denom > config.audit_rel_tol:
            raise GradientAuditError(
                f"iteration {iteration}, coordinate {j}: adjoint {grad[j]:.6e} "
                f"vs finite difference {fd:.6e}")


def train(config: TrainConfig, guidance: MarsGuidance):
    """Stage-1 baseline optimization; returns (theta_star, report)."""
    t_start = time.perf_counter()
    grid = TimeGrid(0.0, guidance.mission.t_f, config.dt)
    theta0 = init_parameters(guidance.net.layer_dims, config.seed)

    def value_and_grad(th):
        return mars_cost_and_gradient(th, guidance, config.weights, grid)

    def value_only(th):
        J, _ = mars_cost(th, guidance, config.weights, grid)
        return J

    best_theta, history, best_iter = run_adam(value_and_grad, theta0, config,
                                              value_only)
    _, comps = mars_cost(best_theta, guidance, config.weights, grid)
    report = TrainReport(cost_history=history, components=comps,
                         best_iteration=best_iter,
                         iterations_run=len(history),
                         wall_time=time.perf_counter() - t_start)
    return best_theta, report
