"""Fixed-step and adaptive ODE propagation with dense output and event stopping.

The fixed-step RK4 path is the deterministic backbone used for policy
training and for matrix propagation; the adaptive Dormand-Prince 5(4)
pair is meant for evaluation runs, where a stop condition may end the
flight before the nominal final time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

__all__ = [
    "TimeGrid",
    "StopCondition",
    "Trajectory",
    "integrate_fixed",
    "integrate_adaptive",
    "OdeError",
    "NonFiniteState",
    "StepUnderflow",
    "OutOfRange",
]


class OdeError(RuntimeError):
    """Base class for integration failures."""


class NonFiniteState(OdeError):
    """A step produced NaN or Inf (bad parameters or a singular model)."""


class StepUnderflow(OdeError):
    """The adaptive step collapsed below 1e-14 * (tf - t0)."""


class OutOfRange(OdeError):
    """Dense-output query outside the trajectory's time span."""


@dataclass(frozen=True)
class TimeGrid:
    """Integration window [t0, tf] with a fixed step or a tolerance pair."""

    t0: float
    tf: float
    dt: Optional[float] = None
    rtol: float = 1e-7
    atol: float = 1e-9

    def __post_init__(self):
        if not self.tf > self.t0:
            raise ValueError(f"need t0 < tf, got [{self.t0}, {self.tf}]")
        if self.dt is not None and not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if not (self.rtol > 0.0 and self.atol > 0.0):
            raise ValueError("rtol and atol must be positive")

    @property
    def n_steps(self) -> int:
        if self.dt is None:
            raise ValueError("grid has no fixed step")
        span = self.tf - self.t0
        n = int(round(span / self.dt))
        if n < 1 or abs(n * self.dt - span) > 1e-8 * span:
            raise ValueError(f"dt={self.dt} does not divide [{self.t0}, {self.tf}]")
        return n

    def knots(self) -> np.ndarray:
        n = self.n_steps
        ts = self.t0 + self.dt * np.arange(n + 1)
        ts[-1] = self.tf
        return ts


@dataclass(frozen=True)
class StopCondition:
    """Terminal event: integration halts when `event(t, x)` crosses zero.

    direction=+1 stops on a rising crossing (previous value < 0, new >= 0),
    -1 on a falling crossing, 0 on either.  `event` must be pure; the
    crossing is localized on the dense output by bisection.
    """

    event: Callable[[float, np.ndarray], float]
    direction: int = 0
    max_time: float = np.inf

    def triggered(self, g_prev: float, g_new: float) -> bool:
        if self.direction >= 0 and g_prev < 0.0 <= g_new:
            return True
        if self.direction <= 0 and g_prev > 0.0 >= g_new:
            return True
        return False


class Trajectory:
    """Immutable dense ODE solution over [t0, t_end].

    Knot states are returned exactly; between knots `eval` uses cubic
    Hermite interpolation (fixed-step runs) or the Dormand-Prince quartic
    interpolant (adaptive runs).  Instances are safe to share across
    threads.
    """

    __slots__ = ("_ts", "_xs", "_fs", "_dense", "_dense_h", "terminal_event")

    def __init__(self, ts, xs, fs, dense=None, terminal_event=None):
        ts = np.ascontiguousarray(ts, dtype=float)
        xs = np.ascontiguousarray(xs, dtype=float)
        fs = np.ascontiguousarray(fs, dtype=float)
        if not (len(ts) == len(xs) == len(fs)) or len(ts) < 2:
            raise ValueError("inconsistent knot arrays")
        if not np.all(np.diff(ts) > 0.0):
            raise ValueError("knot times must be strictly increasing")
        if dense is None:
            self._dense = None
            self._dense_h = None
        else:
            rcont, widths = dense
            rcont = np.ascontiguousarray(rcont, dtype=float)
            widths = np.ascontiguousarray(widths, dtype=float)
            rcont.setflags(write=False)
            widths.setflags(write=False)
            self._dense = rcont
            self._dense_h = widths
        for a in (ts, xs, fs):
            a.setflags(write=False)
        self._ts = ts
        self._xs = xs
        self._fs = fs
        self.terminal_event = terminal_event

    @property
    def ts(self) -> np.ndarray:
        return self._ts

    @property
    def xs(self) -> np.ndarray:
        return self._xs

    @property
    def fs(self) -> np.ndarray:
        return self._fs

    @property
    def t0(self) -> float:
        return float(self._ts[0])

    @property
    def t_end(self) -> float:
        return float(self._ts[-1])

    @property
    def dim(self) -> int:
        return self._xs.shape[1]

    def __len__(self) -> int:
        return len(self._ts)

    def eval(self, t: float) -> np.ndarray:
        """Interpolated state at time t; exact at the knots."""
        ts = self._ts
        if t < ts[0] or t > ts[-1]:
            raise OutOfRange(f"t={t} outside [{ts[0]}, {ts[-1]}]")
        i = int(np.searchsorted(ts, t))
        if i < len(ts) and ts[i] == t:
            return self._xs[i].copy()
        i -= 1
        if self._dense is not None:
            s = (t - ts[i]) / self._dense_h[i]
            r1, r2, r3, r4, r5 = self._dense[i]
            return r1 + s * (r2 + (1.0 - s) * (r3 + s * (r4 + (1.0 - s) * r5)))
        h = ts[i + 1] - ts[i]
        s = (t - ts[i]) / h
        omt = 1.0 - s
        h00 = (1.0 + 2.0 * s) * omt * omt
        h10 = s * omt * omt
        h01 = s * s * (3.0 - 2.0 * s)
        h11 = s * s * (s - 1.0)
        return (h00 * self._xs[i] + (h * h10) * self._fs[i]
                + h01 * self._xs[i + 1] + (h * h11) * self._fs[i + 1])


def _require_finite(x: np.ndarray, t: float):
    if not np.all(np.isfinite(x)):
        raise NonFiniteState(f"non-finite state at t={t}")


def rk4_step(f, t: float, x: np.ndarray, dt: float) -> np.ndarray:
    """One classical 4th-order Runge-Kutta step."""
    k1 = np.asarray(f(t, x), dtype=float)
    k2 = np.asarray(f(t + 0.5 * dt, x + (0.5 * dt) * k1), dtype=float)
    k3 = np.asarray(f(t + 0.5 * dt, x + (0.5 * dt) * k2), dtype=float)
    k4 = np.asarray(f(t + dt, x + dt * k3), dtype=float)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_fixed(f, x0, grid: TimeGrid) -> Trajectory:
    """Propagate dx/dt = f(t, x) with classical RK4 on a fixed grid.

    Deterministic: repeated runs with the same inputs give bit-identical
    trajectories.  Raises NonFiniteState as soon as a step yields NaN/Inf.
    """
    x = np.asarray(x0, dtype=float).copy()
    n = grid.n_steps
    dt = grid.dt
    ts = grid.knots()
    xs = np.empty((n + 1, x.size))
    fs = np.empty((n + 1, x.size))
    _require_finite(x, grid.t0)
    xs[0] = x
    fs[0] = np.asarray(f(grid.t0, x), dtype=float)
    for i in range(n):
        t = grid.t0 + i * dt
        k1 = fs[i]
        k2 = np.asarray(f(t + 0.5 * dt, x + (0.5 * dt) * k1), dtype=float)
        k3 = np.asarray(f(t + 0.5 * dt, x + (0.5 * dt) * k2), dtype=float)
        k4 = np.asarray(f(t + dt, x + dt * k3), dtype=float)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _require_finite(x, float(ts[i + 1]))
        xs[i + 1] = x
        fs[i + 1] = np.asarray(f(float(ts[i + 1]), x), dtype=float)
    return Trajectory(ts, xs, fs)


# Dormand-Prince 5(4) tableau, error weights, and dense-output weights.
_DP_C = (0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0)
_DP_A = (
    (),
    (1.0 / 5.0,),
    (3.0 / 40.0, 9.0 / 40.0),
    (44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0),
    (19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0),
    (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0,
     -5103.0 / 18656.0),
    (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0,
     11.0 / 84.0),
)
_DP_E = np.array([71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0,
                  -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0])
_DP_D = np.array([-12715105075.0 / 11282082432.0, 0.0,
                  87487479700.0 / 32700410799.0,
                  -10690763975.0 / 1880347072.0,
                  701980252875.0 / 199316789632.0,
                  -1453857185.0 / 822651844.0,
                  69997945.0 / 29380423.0])


def _dense_row(x, x_new, h, k):
    ydiff = x_new - x
    bspl = h * k[0] - ydiff
    return np.stack([x, ydiff, bspl, ydiff - h * k[6] - bspl, h * (_DP_D @ k)])


def _dense_eval(row, s):
    r1, r2, r3, r4, r5 = row
    return r1 + s * (r2 + (1.0 - s) * (r3 + s * (r4 + (1.0 - s) * r5)))


def _initial_step(f, t0, x0, f0, span, rtol, atol):
    scale = atol + rtol * np.abs(x0)
    d0 = np.sqrt(np.mean((x0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, 0.1 * span)
    x1 = x0 + h0 * f0
    f1 = np.asarray(f(t0 + h0, x1), dtype=float)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100.0 * h0, h1, span)


def _bisect_event(stop, g_prev, f_event_args, t_lo, t_hi, row, h_row, t_base):
    # First time in (t_lo, t_hi] at which the crossing holds, localized on
    # the step's own interpolant; 60 halvings cap the work.
    lo, hi = t_lo, t_hi
    for _ in range(60):
        tm = 0.5 * (lo + hi)
        xm = _dense_eval(row, (tm - t_base) / h_row)
        if stop.triggered(g_prev, float(stop.event(tm, xm))):
            hi = tm
        else:
            lo = tm
    return hi


def integrate_adaptive(f, x0, grid: TimeGrid, stop: Optional[StopCondition] = None) -> Trajectory:
    """Propagate with the embedded Dormand-Prince 5(4) pair.

    Proportional step control targets the (rtol, atol) pair of `grid`;
    dense output is the standard quartic interpolant.  Integration halts
    at the first StopCondition crossing or at stop.max_time, whichever
    comes first, and otherwise at grid.tf.
    """
    x = np.asarray(x0, dtype=float).copy()
    t = grid.t0
    t_end = grid.tf if stop is None else min(grid.tf, stop.max_time)
    if not t_end > t:
        raise ValueError("empty integration window")
    rtol, atol = grid.rtol, grid.atol
    span = t_end - t
    h_min = 1e-14 * (grid.tf - grid.t0)
    _require_finite(x, t)
    f_now = np.asarray(f(t, x), dtype=float)
    h = _initial_step(f, t, x, f_now, span, rtol, atol)

    ts = [t]
    xs = [x.copy()]
    fs = [f_now.copy()]
    rows = []
    widths = []
    g_prev = float(stop.event(t, x)) if stop is not None else 0.0
    event = None
    k = np.empty((7, x.size))

    while t < t_end:
        h = min(h, t_end - t)
        if h < h_min:
            raise StepUnderflow(f"step {h:.3e} below floor at t={t}")
        k[0] = f_now
        for i in range(1, 6):
            xi = x + h * sum(a * k[j] for j, a in enumerate(_DP_A[i]))
            k[i] = np.asarray(f(t + _DP_C[i] * h, xi), dtype=float)
        x_new = x + h * sum(a * k[j] for j, a in enumerate(_DP_A[6]))
        k[6] = np.asarray(f(t + h, x_new), dtype=float)
        scale = atol + rtol * np.maximum(np.abs(x), np.abs(x_new))
        err_vec = h * (_DP_E @ k)
        err = np.sqrt(np.mean((err_vec / scale) ** 2))
        if not np.isfinite(err):
            if not np.all(np.isfinite(x_new)):
                raise NonFiniteState(f"non-finite state at t={t + h}")
            h *= 0.2
            continue
        if err > 1.0:
            h *= max(0.2, 0.9 * err ** -0.2)
            continue
        # accepted
        _require_finite(x_new, t + h)
        row = _dense_row(x, x_new, h, k)
        t_new = t + h
        if abs(t_end - t_new) < 1e-12 * max(1.0, abs(t_end)):
            t_new = t_end
        if stop is not None:
            g_new = float(stop.event(t_new, x_new))
            if stop.triggered(g_prev, g_new):
                t_ev = _bisect_event(stop, g_prev, None, t, t_new, row, h, t)
                x_ev = _dense_eval(row, (t_ev - t) / h)
                if t_ev <= ts[-1]:
                    t_ev = np.nextafter(ts[-1], np.inf)
                ts.append(t_ev)
                xs.append(x_ev)
                fs.append(np.asarray(f(t_ev, x_ev), dtype=float))
                rows.append(row)
                widths.append(h)
                event = (float(t_ev), "stop_condition")
                break
            g_prev = g_new
        ts.append(t_new)
        xs.append(x_new)
        fs.append(k[6].copy())
        rows.append(row)
        widths.append(h)
        x = x_new
        t = t_new
        f_now = k[6].copy()
        h *= min(5.0, max(0.2, 0.9 * err ** -0.2)) if err > 0.0 else 5.0

    if event is None and stop is not None and t_end < grid.tf:
        event = (float(t_end), "max_time")
    return Trajectory(np.array(ts), np.array(xs), np.array(fs),
                      dense=(np.array(rows), np.array(widths)),
                      terminal_event=event)
