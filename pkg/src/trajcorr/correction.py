"""Incremental correction of a trained policy: parameter and control-schedule forms.

Given a baseline closed-loop trajectory, both methods linearize the
dynamics along it and solve for the smallest adjustment that moves the
performance output onto its interim-point targets: a minimum-norm
parameter increment through the pseudoinverse of the sensitivity map, or
a minimum-weighted-energy corrective control schedule through windowed
output-controllability Gramians.  Everything here is generic over the
plant and policy callables.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .diff import linearize, value
from .odeint import TimeGrid, Trajectory, integrate_fixed, rk4_step

__all__ = [
    "InterimConstraintSet",
    "SensitivityMatrix",
    "GramianBundle",
    "CorrectionResult",
    "SolveDiagnostics",
    "CorrectiveSchedule",
    "propagate_M",
    "correct_parameters",
    "propagate_UN",
    "assemble_psi",
    "correct_control",
    "final_time_lqr_schedule",
    "apply_correction",
    "result_to_dict",
    "CorrectionError",
    "RankZero",
    "SingularU",
    "IllConditionedPsi",
]


class CorrectionError(RuntimeError):
    """Base class for correction solve failures."""


class RankZero(CorrectionError):
    """Every singular value was discarded: targets unreachable linearly."""


class SingularU(CorrectionError):
    """Fundamental matrix became numerically singular during propagation."""


class IllConditionedPsi(CorrectionError):
    """Gramian block matrix too ill-conditioned to invert reliably."""


@dataclass(frozen=True)
class InterimConstraintSet:
    """Equality targets z(t_i) = z_i on the output z = H x, sorted in time."""

    H: np.ndarray
    times: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        times = np.atleast_1d(np.asarray(self.times, dtype=float))
        targets = np.asarray(self.targets, dtype=float).reshape(times.size, H.shape[0])
        if times.size < 1:
            raise ValueError("need at least one interim point")
        if not np.all(np.diff(times) > 0.0):
            raise ValueError("interim times must be strictly increasing")
        for a in (H, times, targets):
            a.setflags(write=False)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "targets", targets)

    @property
    def n_points(self) -> int:
        return self.times.size

    @property
    def p(self) -> int:
        return self.H.shape[0]

    def output_gaps(self, baseline: Trajectory) -> np.ndarray:
        """Per-point target minus baseline output, shape (N, p)."""
        return np.stack([zi - self.H @ baseline.eval(ti)
                         for ti, zi in zip(self.times, self.targets)])


@dataclass(frozen=True)
class SolveDiagnostics:
    rank: int
    singular_values: np.ndarray
    condition: float
    rel_tol: Optional[float] = None


class SensitivityMatrix:
    """First-order map from parameter perturbations to state perturbations.

    Wraps the jointly propagated pair [Phi | M] where Phi is the
    transition matrix of the closed-loop linearization from t0 and M
    solves dM/dt = A M + B with M(t0) = 0; both interpolate densely in t.
    """

    def __init__(self, traj: Trajectory, n: int, l: int):
        self._traj = traj
        self.n = n
        self.l = l

    def block(self, t: float) -> np.ndarray:
        return self._traj.eval(t).reshape(self.n, self.n + self.l)

    def M(self, t: float) -> np.ndarray:
        return self.block(t)[:, self.n:]

    def Phi(self, t: float) -> np.ndarray:
        """Transition matrix Phi(t, t0) of the parameter-form linearization."""
        return self.block(t)[:, :self.n]

    def phi_between(self, t2: float, t1: float) -> np.ndarray:
        return np.linalg.solve(self.Phi(t1).T, self.Phi(t2).T).T


def propagate_M(f_theta, theta_star, baseline: Trajectory,
                grid: TimeGrid) -> SensitivityMatrix:
    """Propagate the parameter sensitivity along the baseline in one sweep.

    Jacobians of f_theta are evaluated on the baseline's dense output at
    every integrator stage; the homogeneous block rides along so initial
    state offsets can be mapped forward with the same data.
    """
    theta_star = np.asarray(theta_star, dtype=float)
    n = baseline.dim
    l = theta_star.size

    def rhs(t, y):
        block = y.reshape(n, n + l)
        x_star = baseline.eval(t)
        _, A, B = linearize(f_theta, t, x_star, theta_star)
        dblock = A @ block
        dblock[:, n:] += B
        return dblock.ravel()

    y0 = np.hstack([np.eye(n), np.zeros((n, l))]).ravel()
    traj = integrate_fixed(rhs, y0, grid)
    return SensitivityMatrix(traj, n, l)


def _min_norm_pinv(L: np.ndarray, b: np.ndarray, rel_tol: float):
    """Minimum-norm solution of L x = b via truncated SVD."""
    U, s, Vt = np.linalg.svd(L, full_matrices=False)
    if s.size == 0 or s[0] <= 0.0:
        raise RankZero("sensitivity map is identically zero")
    keep = int(np.count_nonzero(s > rel_tol * s[0]))
    if keep == 0:
        raise RankZero(f"all singular values below {rel_tol:g} * sigma_max")
    x = Vt[:keep].T @ ((U[:, :keep].T @ b) / s[:keep])
    diag = SolveDiagnostics(rank=keep, singular_values=s.copy(),
                            condition=float(s[0] / s[keep - 1]),
                            rel_tol=rel_tol)
    return x, diag


def correct_parameters(sens: SensitivityMatrix,
                       constraints: InterimConstraintSet,
                       baseline: Trajectory,
                       x_tilde0=None,
                       rel_tol: float = 0.005) -> "CorrectionResult":
    """Minimum-norm parameter increment hitting every interim target.

    Stacks H M(t_i) over the constraint points and solves the resulting
    underdetermined system with an SVD pseudoinverse, discarding singular
    values below rel_tol * sigma_max.
    """
    H = constraints.H
    n = sens.n
    x_tilde0 = np.zeros(n) if x_tilde0 is None else np.asarray(x_tilde0, dtype=float)
    rows, gaps = [], []
    for ti, zi in zip(constraints.times, constraints.targets):
        block = sens.block(ti)
        rows.append(H @ block[:, n:])
        gaps.append(zi - H @ baseline.eval(ti) - H @ (block[:, :n] @ x_tilde0))
    L = np.vstack(rows)
    b = np.concatenate(gaps)
    theta_tilde, diag = _min_norm_pinv(L, b, rel_tol)
    predicted = (b - L @ theta_tilde).reshape(constraints.n_points, constraints.p)
    return CorrectionResult(kind="parameter", theta_tilde=theta_tilde,
                            u_tilde=None, predicted_residuals=predicted,
                            diagnostics=diag)


def _as_rinv_fn(R, m: int):
    if callable(R):
        return lambda t: np.linalg.inv(np.atleast_2d(np.asarray(R(t), dtype=float)))
    R_inv = np.linalg.inv(np.atleast_2d(np.asarray(R, dtype=float)))
    if R_inv.shape != (m, m):
        raise ValueError(f"weight matrix must be {m}x{m}")
    return lambda t: R_inv


class GramianBundle:
    """Fundamental matrix U and integrated kernel N along the fixed grid.

    N accumulates U^-1 B R^-1 B' U^-T, so the windowed Gramian coupling
    constraints at t_i and t_j is H U(t_i) N(min(t_i, t_j)) U(t_j)' H'.
    Input-side data is re-evaluated on demand from the stored baseline
    callables, keeping the bundle valid at off-grid times.
    """

    def __init__(self, traj: Trajectory, n: int, m: int, f_u, x_of_t, u_of_t,
                 rinv_fn):
        self._traj = traj
        self.n = n
        self.m = m
        self._f_u = f_u
        self._x_of_t = x_of_t
        self._u_of_t = u_of_t
        self._rinv_fn = rinv_fn

    @property
    def ts(self) -> np.ndarray:
        return self._traj.ts

    def U(self, t: float) -> np.ndarray:
        n = self.n
        return self._traj.eval(t)[:n * n].reshape(n, n)

    def N(self, t: float) -> np.ndarray:
        n = self.n
        return self._traj.eval(t)[n * n:].reshape(n, n)

    def phi(self, t2: float, t1: float) -> np.ndarray:
        """State transition matrix Phi(t2, t1) = U(t2) U(t1)^-1."""
        return np.linalg.solve(self.U(t1).T, self.U(t2).T).T

    def B_at(self, t: float) -> np.ndarray:
        _, _, B = linearize(self._f_u, t, self._x_of_t(t), self._u_of_t(t))
        return B

    def u_baseline_at(self, t: float) -> np.ndarray:
        return value(self._u_of_t(t))

    def rinv_at(self, t: float) -> np.ndarray:
        return self._rinv_fn(t)


def propagate_UN(f_u, x_of_t, u_of_t, R, grid: TimeGrid,
                 cond_limit: float = 1e12) -> GramianBundle:
    """Joint forward sweep of the fundamental matrix and Gramian kernel.

    dU/dt = A_u U from the identity; dN/dt = (U^-1 B) R^-1 (U^-1 B)' from
    zero, with the inverse applied through an LU solve at every stage
    rather than formed explicitly.  Raises SingularU when U's condition
    number passes `cond_limit` (coarsening dt is the usual remedy).
    """
    x0 = np.asarray(x_of_t(grid.t0), dtype=float)
    u0 = np.asarray(value(u_of_t(grid.t0)), dtype=float)
    n, m = x0.size, u0.size
    rinv_fn = _as_rinv_fn(R, m)

    def rhs(t, y):
        U = y[:n * n].reshape(n, n)
        _, A, B = linearize(f_u, t, x_of_t(t), u_of_t(t))
        G = np.linalg.solve(U, B)
        S = G @ rinv_fn(t) @ G.T
        S = 0.5 * (S + S.T)
        return np.concatenate([(A @ U).ravel(), S.ravel()])

    y0 = np.concatenate([np.eye(n).ravel(), np.zeros(n * n)])
    traj = integrate_fixed(rhs, y0, grid)
    conds = [np.linalg.cond(row[:n * n].reshape(n, n)) for row in traj.xs]
    worst = int(np.argmax(conds))
    if not np.isfinite(conds[worst]) or conds[worst] > cond_limit:
        raise SingularU(
            f"cond(U) = {conds[worst]:.3e} at t = {traj.ts[worst]:.6g}; "
            "consider a coarser grid")
    return GramianBundle(traj, n, m, f_u, x_of_t, u_of_t, rinv_fn)


def assemble_psi(bundle: GramianBundle,
                 constraints: InterimConstraintSet) -> np.ndarray:
    """Block matrix of windowed Gramians over all constraint pairs.

    Off-diagonal blocks are mirrored as exact transposes, so the result
    is symmetric by construction.
    """
    H = constraints.H
    times = constraints.times
    N_pts, p = constraints.n_points, constraints.p
    HU = [H @ bundle.U(ti) for ti in times]
    psi = np.empty((N_pts * p, N_pts * p))
    for i in range(N_pts):
        for j in range(i, N_pts):
            block = HU[i] @ bundle.N(times[i]) @ HU[j].T
            psi[i * p:(i + 1) * p, j * p:(j + 1) * p] = block
            if j > i:
                psi[j * p:(j + 1) * p, i * p:(i + 1) * p] = block.T
    return psi


@dataclass(frozen=True)
class CorrectiveSchedule:
    """Piecewise-linear corrective control; exactly zero past the last target.

    Samples are stored per activation window, with two-sided values at
    interior constraint times, so interpolation never bridges the jumps
    where a constraint leaves the active set.
    """

    ts: np.ndarray
    us: np.ndarray
    t_cut: float

    def __call__(self, t: float) -> np.ndarray:
        m = self.us.shape[1]
        if t > self.t_cut:
            return np.zeros(m)
        ts = self.ts
        if t <= ts[0]:
            return self.us[0].copy()
        idx = int(np.searchsorted(ts, t))
        if idx < len(ts) and ts[idx] == t:
            return self.us[idx].copy()
        lo = idx - 1
        w = (t - ts[lo]) / (ts[idx] - ts[lo])
        return (1.0 - w) * self.us[lo] + w * self.us[idx]


@dataclass(frozen=True)
class CorrectionResult:
    """Either a parameter increment or a corrective control schedule."""

    kind: str
    theta_tilde: Optional[np.ndarray]
    u_tilde: Optional[CorrectiveSchedule]
    predicted_residuals: np.ndarray
    diagnostics: SolveDiagnostics
    mu_bar: Optional[np.ndarray] = None
    psi: Optional[np.ndarray] = None


def _schedule_samples(bundle: GramianBundle, constraints: InterimConstraintSet):
    """Sample times with the index of the first still-active constraint."""
    times = constraints.times
    samples = []
    for tk in bundle.ts:
        if tk > times[-1]:
            break
        if tk in times:
            continue
        samples.append((float(tk), int(np.searchsorted(times, tk))))
    for i, ti in enumerate(times):
        samples.append((float(ti), i))
        if i + 1 < times.size:
            samples.append((float(ti), i + 1))
    samples.sort()
    return samples


def _build_schedule(bundle: GramianBundle, constraints: InterimConstraintSet,
                    mu: np.ndarray) -> CorrectiveSchedule:
    H = constraints.H
    p = constraints.p
    times = constraints.times
    # suffix sums of U(t_i)' H' mu_i, so the active part of the multiplier
    # expression is one linear solve per sample time
    c = [bundle.U(ti).T @ (H.T @ mu[i * p:(i + 1) * p])
         for i, ti in enumerate(times)]
    suffix = [np.zeros(bundle.n)] * (times.size + 1)
    for i in range(times.size - 1, -1, -1):
        suffix[i] = suffix[i + 1] + c[i]
    ts, us = [], []
    for tau, active in _schedule_samples(bundle, constraints):
        rhs_vec = np.linalg.solve(bundle.U(tau).T, suffix[active])
        us.append(bundle.rinv_at(tau) @ (bundle.B_at(tau).T @ rhs_vec))
        ts.append(tau)
    return CorrectiveSchedule(ts=np.array(ts), us=np.array(us),
                              t_cut=float(times[-1]))


def correct_control(bundle: GramianBundle,
                    constraints: InterimConstraintSet,
                    baseline: Trajectory,
                    x_tilde0=None,
                    cond_limit: float = 1e10) -> CorrectionResult:
    """Minimum-weighted-energy corrective schedule hitting every target.

    Solves the block Gramian system for the constraint multipliers and
    returns the schedule t -> R^-1 B' Phi'(t_i, t) H' mu_i summed over the
    constraints still ahead of t; identically zero after the last one.
    """
    H = constraints.H
    n = bundle.n
    x_tilde0 = np.zeros(n) if x_tilde0 is None else np.asarray(x_tilde0, dtype=float)
    psi = assemble_psi(bundle, constraints)
    svals = np.linalg.svd(psi, compute_uv=False)
    cond = float(svals[0] / svals[-1]) if svals[-1] > 0.0 else np.inf
    if not np.isfinite(cond) or cond > cond_limit:
        raise IllConditionedPsi(f"cond(Psi) = {cond:.3e} exceeds {cond_limit:g}")
    gaps = []
    for ti, zi in zip(constraints.times, constraints.targets):
        gaps.append(zi - H @ baseline.eval(ti) - H @ (bundle.U(ti) @ x_tilde0))
    b = np.concatenate(gaps)
    mu = np.linalg.solve(psi, b)
    predicted = (b - psi @ mu).reshape(constraints.n_points, constraints.p)
    schedule = _build_schedule(bundle, constraints, mu)
    diag = SolveDiagnostics(rank=psi.shape[0], singular_values=svals,
                            condition=cond)
    return CorrectionResult(kind="control", theta_tilde=None, u_tilde=schedule,
                            predicted_residuals=predicted, diagnostics=diag,
                            mu_bar=mu, psi=psi)


def final_time_lqr_schedule(bundle: GramianBundle,
                            constraints: InterimConstraintSet,
                            baseline: Trajectory,
                            x_tilde0=None) -> CorrectiveSchedule:
    """Reference path for a single final-time constraint.

    This is the classic terminal-control form: a single Gramian inverse
    applied to the output gap, then u(t) = R^-1 B'(t) Phi'(t_c, t) H' mu.
    Kept separate from `correct_control` as a regression reference; the
    two must agree whenever N = 1.
    """
    if constraints.n_points != 1:
        raise ValueError("reference form requires exactly one constraint")
    H = constraints.H
    n = bundle.n
    tc = float(constraints.times[0])
    x_tilde0 = np.zeros(n) if x_tilde0 is None else np.asarray(x_tilde0, dtype=float)
    Uc = bundle.U(tc)
    psi = H @ Uc @ bundle.N(tc) @ Uc.T @ H.T
    gap = (constraints.targets[0] - H @ baseline.eval(tc)
           - H @ (Uc @ x_tilde0))
    mu = np.linalg.solve(psi, gap)
    cvec = Uc.T @ (H.T @ mu)
    ts, us = [], []
    for tk in bundle.ts:
        if tk > tc:
            break
        rhs_vec = np.linalg.solve(bundle.U(tk).T, cvec)
        us.append(bundle.rinv_at(tk) @ (bundle.B_at(tk).T @ rhs_vec))
        ts.append(float(tk))
    if ts[-1] != tc:
        rhs_vec = np.linalg.solve(bundle.U(tc).T, cvec)
        us.append(bundle.rinv_at(tc) @ (bundle.B_at(tc).T @ rhs_vec))
        ts.append(tc)
    return CorrectiveSchedule(ts=np.array(ts), us=np.array(us), t_cut=tc)


def _windowed_psi(bundle: GramianBundle, H: np.ndarray, times: np.ndarray,
                  t_now: float) -> np.ndarray:
    N_pts, p = times.size, H.shape[0]
    HU = [H @ bundle.U(ti) for ti in times]
    N_now = bundle.N(t_now)
    psi = np.empty((N_pts * p, N_pts * p))
    for i in range(N_pts):
        for j in range(i, N_pts):
            block = HU[i] @ (bundle.N(times[i]) - N_now) @ HU[j].T
            psi[i * p:(i + 1) * p, j * p:(j + 1) * p] = block
            if j > i:
                psi[j * p:(j + 1) * p, i * p:(i + 1) * p] = block.T
    return psi


def apply_correction(result: CorrectionResult, x0, grid: TimeGrid, *,
                     f_theta=None, theta_star=None, f_u=None, policy_fn=None,
                     mode: str = "single", sens: Optional[SensitivityMatrix] = None,
                     bundle: Optional[GramianBundle] = None,
                     constraints: Optional[InterimConstraintSet] = None,
                     baseline: Optional[Trajectory] = None,
                     rel_tol: float = 0.005,
                     cond_limit: float = 1e10) -> Trajectory:
    """Propagate the closed loop with the correction applied.

    Single-shot mode holds the correction computed at the initial time.
    Feedback mode re-derives it at every grid knot from the measured
    state, re-basing the stored sensitivity/Gramian data at the current
    time; when the remaining window becomes degenerate the last correction
    is held.
    """
    x0 = np.asarray(x0, dtype=float)
    if result.kind == "parameter":
        if f_theta is None or theta_star is None:
            raise ValueError("parameter correction needs f_theta and theta_star")
        theta_star = np.asarray(theta_star, dtype=float)
        if mode == "single":
            theta = theta_star + result.theta_tilde
            return integrate_fixed(lambda t, x: value(f_theta(t, x, theta)),
                                   x0, grid)
        if mode != "feedback":
            raise ValueError(f"unknown mode {mode!r}")
        if sens is None or constraints is None or baseline is None:
            raise ValueError("feedback mode needs sens, constraints, baseline")
        return _feedback_parameter(result, x0, grid, f_theta, theta_star,
                                   sens, constraints, baseline, rel_tol)
    if result.kind == "control":
        if f_u is None or policy_fn is None:
            raise ValueError("control correction needs f_u and policy_fn")
        if mode == "single":
            sched = result.u_tilde

            def rhs(t, x):
                return value(f_u(t, x, value(policy_fn(x)) + sched(t)))

            return integrate_fixed(rhs, x0, grid)
        if mode != "feedback":
            raise ValueError(f"unknown mode {mode!r}")
        if bundle is None or constraints is None or baseline is None:
            raise ValueError("feedback mode needs bundle, constraints, baseline")
        return _feedback_control(result, x0, grid, f_u, policy_fn, bundle,
                                 constraints, baseline, cond_limit)
    raise ValueError(f"unknown correction kind {result.kind!r}")


def _feedback_parameter(result, x0, grid, f_theta, theta_star, sens,
                        constraints, baseline, rel_tol):
    H = constraints.H
    n = sens.n
    ts = grid.knots()
    xs = np.empty((ts.size, n))
    fs = np.empty((ts.size, n))
    x = x0.copy()
    theta_tilde = result.theta_tilde
    for k in range(ts.size - 1):
        t_k = float(ts[k])
        # constraints less than two steps ahead are no longer actionable;
        # chasing them drives the windowed solve singular
        ahead = constraints.times > t_k + 2.0 * grid.dt
        if np.any(ahead):
            block_k = sens.block(t_k)
            Phi_k, M_k = block_k[:, :n], block_k[:, n:]
            x_tilde = x - baseline.eval(t_k)
            rows, gaps = [], []
            for ti, zi in zip(constraints.times[ahead],
                              constraints.targets[ahead]):
                block_i = sens.block(ti)
                phi_ik = np.linalg.solve(Phi_k.T, block_i[:, :n].T).T
                rows.append(H @ (block_i[:, n:] - phi_ik @ M_k))
                gaps.append(zi - H @ baseline.eval(ti) - H @ (phi_ik @ x_tilde))
            try:
                theta_tilde, _ = _min_norm_pinv(np.vstack(rows),
                                                np.concatenate(gaps), rel_tol)
            except RankZero:
                pass  # window degenerate: hold the previous increment
        theta = theta_star + theta_tilde
        xs[k] = x
        fs[k] = value(f_theta(t_k, x, theta))
        x = rk4_step(lambda t, xx: value(f_theta(t, xx, theta)), t_k, x,
                     float(ts[k + 1]) - t_k)
    xs[-1] = x
    fs[-1] = value(f_theta(float(ts[-1]), x,
                           theta_star + theta_tilde))
    return Trajectory(ts, xs, fs)


def _feedback_control(result, x0, grid, f_u, policy_fn, bundle, constraints,
                      baseline, cond_limit):
    H = constraints.H
    p = constraints.p
    n = bundle.n
    ts = grid.knots()
    xs = np.empty((ts.size, n))
    fs = np.empty((ts.size, n))
    x = x0.copy()
    u_tilde = result.u_tilde(grid.t0)
    for k in range(ts.size - 1):
        t_k = float(ts[k])
        ahead = constraints.times > t_k + 2.0 * grid.dt
        if np.any(ahead):
            times_a = constraints.times[ahead]
            targets_a = constraints.targets[ahead]
            psi_k = _windowed_psi(bundle, H, times_a, t_k)
            svals = np.linalg.svd(psi_k, compute_uv=False)
            if svals[-1] > 0.0 and svals[0] / svals[-1] <= cond_limit:
                x_tilde = x - baseline.eval(t_k)
                U_k = bundle.U(t_k)
                gaps = []
                for ti, zi in zip(times_a, targets_a):
                    phi_ik = np.linalg.solve(U_k.T, bundle.U(ti).T).T
                    gaps.append(zi - H @ baseline.eval(ti)
                                - H @ (phi_ik @ x_tilde))
                mu = np.linalg.solve(psi_k, np.concatenate(gaps))
                # B_u re-linearized at the measured state, baseline input
                _, _, B_meas = linearize(f_u, t_k, x,
                                         bundle.u_baseline_at(t_k))
                csum = np.zeros(n)
                for i, ti in enumerate(times_a):
                    csum += bundle.U(ti).T @ (H.T @ mu[i * p:(i + 1) * p])
                rhs_vec = np.linalg.solve(U_k.T, csum)
                u_tilde = bundle.rinv_at(t_k) @ (B_meas.T @ rhs_vec)
        elif t_k > constraints.times[-1]:
            u_tilde = np.zeros(bundle.m)
        u_hold = u_tilde

        def rhs(t, xx):
            return value(f_u(t, xx, value(policy_fn(xx)) + u_hold))

        xs[k] = x
        fs[k] = rhs(t_k, x)
        x = rk4_step(rhs, t_k, x, float(ts[k + 1]) - t_k)
    xs[-1] = x
    fs[-1] = value(f_u(float(ts[-1]), x, value(policy_fn(x))))
    return Trajectory(ts, xs, fs)


def result_to_dict(result: CorrectionResult) -> dict:
    """JSON-ready view of a correction result."""
    out = {
        "kind": result.kind,
        "predicted_residuals": [[float(v) for v in row]
                                for row in result.predicted_residuals],
        "diagnostics": {
            "rank": int(result.diagnostics.rank),
            "condition": float(result.diagnostics.condition),
            "singular_values": [float(v) for v in result.diagnostics.singular_values],
        },
    }
    if result.diagnostics.rel_tol is not None:
        out["diagnostics"]["rel_tol"] = float(result.diagnostics.rel_tol)
    if result.kind == "parameter":
        out["theta_tilde"] = [float(v) for v in result.theta_tilde]
    else:
        out["mu_bar"] = [float(v) for v in result.mu_bar]
        out["u_tilde"] = {
            "t": [float(v) for v in result.u_tilde.ts],
            "u": [[float(v) for v in row] for row in result.u_tilde.us],
            "t_cut": float(result.u_tilde.t_cut),
        }
    return out
