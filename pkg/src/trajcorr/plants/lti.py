"""Analytic linear test plants with closed-form transition and Gramian data.

These are the oracle plants for the correction algorithms: every quantity
the correction pipeline propagates numerically has a hand-derived closed
form here, so exactness properties can be checked end to end.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict

import numpy as np

__all__ = [
    "AnalyticLti",
    "scalar_plant",
    "double_integrator",
    "lti_plants",
    "scalar_param_sensitivity",
    "double_integrator_param_sensitivity",
    "double_integrator_gramian",
    "scalar_gramian",
]


@dataclass(frozen=True)
class AnalyticLti:
    """Time-invariant plant dx/dt = A x + B u with an exact transition matrix."""

    name: str
    A: np.ndarray
    B: np.ndarray
    H: np.ndarray
    phi: Callable[[float, float], np.ndarray]

    def f_u(self, t, x, u):
        return self.A @ x + self.B @ u

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


def scalar_plant(a: float = -0.5, b: float = 1.0) -> AnalyticLti:
    """dx/dt = a x + b u with Phi(t2, t1) = exp(a (t2 - t1))."""
    return AnalyticLti(
        name="scalar",
        A=np.array([[a]]),
        B=np.array([[b]]),
        H=np.array([[1.0]]),
        phi=lambda t2, t1: np.array([[np.exp(a * (t2 - t1))]]),
    )


def double_integrator() -> AnalyticLti:
    """d(x1, x2)/dt = (x2, u) with Phi(t2, t1) = [[1, t2 - t1], [0, 1]]."""
    return AnalyticLti(
        name="double_integrator",
        A=np.array([[0.0, 1.0], [0.0, 0.0]]),
        B=np.array([[0.0], [1.0]]),
        H=np.eye(2),
        phi=lambda t2, t1: np.array([[1.0, t2 - t1], [0.0, 1.0]]),
    )


def lti_plants() -> Dict[str, AnalyticLti]:
    """Catalog of the analytic oracle plants."""
    return {p.name: p for p in (scalar_plant(), double_integrator())}


def scalar_param_sensitivity(a: float, b: float, t: float, t0: float = 0.0) -> np.ndarray:
    """Closed-form parameter sensitivity of dx/dt = a x + b theta.

    M(t) = integral of exp(a (t - tau)) b dtau = b (exp(a (t - t0)) - 1) / a,
    with the a -> 0 limit b (t - t0).
    """
    dt = t - t0
    if a == 0.0:
        return np.array([[b * dt]])
    return np.array([[b * (np.exp(a * dt) - 1.0) / a]])


def double_integrator_param_sensitivity(t: float, t0: float = 0.0) -> np.ndarray:
    """Closed-form sensitivity of (x1' = x2, x2' = theta): M = [dt^2/2, dt]."""
    dt = t - t0
    return np.array([[0.5 * dt * dt], [dt]])


def double_integrator_gramian(T: float) -> np.ndarray:
    """Output-controllability Gramian over [0, T] for H = I, R = 1.

    Integral of Phi(T, tau) B B' Phi(T, tau)' dtau = [[T^3/3, T^2/2],
    [T^2/2, T]].
    """
    return np.array([[T ** 3 / 3.0, T ** 2 / 2.0], [T ** 2 / 2.0, T]])


def scalar_gramian(a: float, b: float, r: float, T: float) -> float:
    """Gramian of dx/dt = a x + b u over [0, T] with weight r.

    Integral of exp(2 a (T - tau)) b^2 / r dtau, so b^2 (exp(2 a T) - 1)
    / (2 a r), with the a -> 0 limit b^2 T / r.
    """
    if a == 0.0:
        return b * b * T / r
    return b * b * (np.exp(2.0 * a * T) - 1.0) / (2.0 * a * r)
