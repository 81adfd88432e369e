"""Forward-mode dual numbers and the reverse sweep through the fixed-step integrator.

Jacobians of ODE right-hand sides and of the policy network come from
`Dual` arithmetic (exact to machine precision); the training gradient is
the exact discrete adjoint of the RK4-discretized cost, so it matches
finite differences of the discretized problem up to truncation error of
the stencil.
"""

from __future__ import annotations

import numpy as np

from .odeint import TimeGrid, integrate_fixed

__all__ = [
    "Dual",
    "seed",
    "value",
    "concat",
    "jacobian",
    "jacobian_x",
    "jacobian_theta",
    "jacobian_u",
    "linearize",
    "cost_gradient",
    "central_difference_jacobian",
    "NonFiniteDerivative",
]


class NonFiniteDerivative(RuntimeError):
    """A derivative evaluation overflowed or produced NaN."""


class Dual:
    """Array value with a trailing axis of partial derivatives.

    `v` holds the value (any shape); `d` holds the partials with shape
    ``v.shape + (k,)`` for k seed directions.  Arithmetic satisfies the
    product and chain rules exactly; numpy ufuncs (sin, cos, exp, sqrt,
    tanh, maximum, ...) dispatch here via ``__array_ufunc__``.
    """

    __slots__ = ("v", "d")

    def __init__(self, v, d):
        self.v = v if isinstance(v, np.ndarray) else np.asarray(v, dtype=float)
        self.d = d if isinstance(d, np.ndarray) else np.asarray(d, dtype=float)

    # -- structure ----------------------------------------------------
    @property
    def shape(self):
        return self.v.shape

    @property
    def nseeds(self) -> int:
        return self.d.shape[-1]

    def __len__(self):
        return len(self.v)

    def __getitem__(self, idx):
        return Dual(self.v[idx], self.d[idx])

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return Dual(self.v.reshape(shape), self.d.reshape(shape + (self.nseeds,)))

    def __repr__(self):
        return f"Dual(v={self.v!r}, k={self.nseeds})"

    # -- arithmetic ---------------------------------------------------
    def __add__(self, o):
        if isinstance(o, Dual):
            return Dual(self.v + o.v, self.d + o.d)
        vres = self.v + np.asarray(o, dtype=float)
        return Dual(vres, _spread(self.d, vres.shape))

    __radd__ = __add__

    def __sub__(self, o):
        if isinstance(o, Dual):
            return Dual(self.v - o.v, self.d - o.d)
        vres = self.v - np.asarray(o, dtype=float)
        return Dual(vres, _spread(self.d, vres.shape))

    def __rsub__(self, o):
        vres = np.asarray(o, dtype=float) - self.v
        return Dual(vres, _spread(-self.d, vres.shape))

    def __neg__(self):
        return Dual(-self.v, -self.d)

    def __mul__(self, o):
        if isinstance(o, Dual):
            return Dual(self.v * o.v,
                        self.d * o.v[..., None] + o.d * self.v[..., None])
        ov = np.asarray(o, dtype=float)
        return Dual(self.v * ov, self.d * ov[..., None] if ov.ndim else self.d * ov)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, Dual):
            inv = 1.0 / o.v
            vres = self.v * inv
            return Dual(vres, self.d * inv[..., None] - o.d * (vres * inv)[..., None])
        ov = np.asarray(o, dtype=float)
        return Dual(self.v / ov, self.d / ov[..., None] if ov.ndim else self.d / ov)

    def __rtruediv__(self, o):
        ov = np.asarray(o, dtype=float)
        inv = 1.0 / self.v
        vres = ov * inv
        return Dual(vres, -self.d * (vres * inv)[..., None])

    def __pow__(self, p):
        if isinstance(p, Dual):
            raise TypeError("dual-valued exponents are not supported")
        return Dual(self.v ** p, (p * self.v ** (p - 1))[..., None] * self.d)

    def __matmul__(self, o):
        if isinstance(o, Dual):
            if self.v.ndim == 1 and o.v.ndim == 1:
                return Dual(self.v @ o.v, o.v @ self.d + self.v @ o.d)
            if self.v.ndim == 2 and o.v.ndim == 1:
                d = np.einsum("ijk,j->ik", self.d, o.v) + self.v @ o.d
                return Dual(self.v @ o.v, d)
            raise TypeError("unsupported dual matmul shapes")
        ov = np.asarray(o, dtype=float)
        if self.v.ndim == 1 and ov.ndim == 1:
            return Dual(self.v @ ov, ov @ self.d)
        if self.v.ndim == 1 and ov.ndim == 2:
            return Dual(self.v @ ov, ov.T @ self.d)
        if self.v.ndim == 2 and ov.ndim == 1:
            return Dual(self.v @ ov, np.einsum("ijk,j->ik", self.d, ov))
        raise TypeError("unsupported dual matmul shapes")

    def __rmatmul__(self, o):
        ov = np.asarray(o, dtype=float)
        if self.v.ndim == 1 and ov.ndim in (1, 2):
            return Dual(ov @ self.v, ov @ self.d)
        if self.v.ndim == 2 and ov.ndim == 2:
            return Dual(ov @ self.v, np.einsum("ij,jlk->ilk", ov, self.d))
        raise TypeError("unsupported dual matmul shapes")

    # -- numpy ufunc dispatch ------------------------------------------
    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs:
            return NotImplemented
        entry = _SMOOTH.get(ufunc)
        if entry is not None:
            x = inputs[0]
            vres, slope = entry(x.v)
            return Dual(vres, slope[..., None] * x.d)
        if ufunc is np.add:
            a, b = inputs
            return a + b if isinstance(a, Dual) else b + a
        if ufunc is np.subtract:
            a, b = inputs
            return a - b if isinstance(a, Dual) else b.__rsub__(a)
        if ufunc is np.multiply:
            a, b = inputs
            return a * b if isinstance(a, Dual) else b * a
        if ufunc is np.true_divide:
            a, b = inputs
            return a / b if isinstance(a, Dual) else b.__rtruediv__(a)
        if ufunc is np.power:
            return inputs[0] ** inputs[1]
        if ufunc is np.negative:
            return -inputs[0]
        if ufunc is np.matmul:
            a, b = inputs
            return a @ b if isinstance(a, Dual) else b.__rmatmul__(a)
        if ufunc is np.maximum:
            return _extremum(inputs[0], inputs[1], np.greater_equal)
        if ufunc is np.minimum:
            return _extremum(inputs[0], inputs[1], np.less_equal)
        return NotImplemented


_SMOOTH = {
    np.sin: lambda v: (np.sin(v), np.cos(v)),
    np.cos: lambda v: (np.cos(v), -np.sin(v)),
    np.exp: lambda v: (lambda e: (e, e))(np.exp(v)),
    np.sqrt: lambda v: (lambda s: (s, 0.5 / s))(np.sqrt(v)),
    np.tanh: lambda v: (lambda t: (t, 1.0 - t * t))(np.tanh(v)),
    np.log: lambda v: (np.log(v), 1.0 / v),
}


def _spread(d, vshape):
    if d.shape[:-1] == vshape:
        return d
    return np.broadcast_to(d, vshape + (d.shape[-1],)).copy()


def _extremum(a, b, cmp):
    if isinstance(a, Dual) and isinstance(b, Dual):
        take_a = cmp(a.v, b.v)
        return Dual(np.where(take_a, a.v, b.v),
                    np.where(take_a[..., None], a.d, b.d))
    if isinstance(a, Dual):
        bv = np.asarray(b, dtype=float)
        take_a = cmp(a.v, bv)
        return Dual(np.where(take_a, a.v, bv),
                    np.where(take_a[..., None], a.d, 0.0))
    av = np.asarray(a, dtype=float)
    take_b = cmp(b.v, av)
    return Dual(np.where(take_b, b.v, av),
                np.where(take_b[..., None], b.d, 0.0))


def value(y) -> np.ndarray:
    """Plain value of a dual or array-like."""
    return np.asarray(y.v if isinstance(y, Dual) else y, dtype=float)


_SEED_CACHE: dict = {}


def _seed_matrix(n: int, total: int, offset: int) -> np.ndarray:
    key = (n, total, offset)
    mat = _SEED_CACHE.get(key)
    if mat is None:
        mat = np.zeros((n, total))
        mat[np.arange(n), offset + np.arange(n)] = 1.0
        mat.setflags(write=False)
        _SEED_CACHE[key] = mat
    return mat


def seed(x, total: int | None = None, offset: int = 0) -> Dual:
    """Attach identity partials to x inside a `total`-wide seed block."""
    x = np.asarray(x, dtype=float)
    n = x.size
    total = n if total is None else total
    return Dual(x, _seed_matrix(n, total, offset).reshape(x.shape + (total,)))


def concat(parts) -> "Dual | np.ndarray":
    """Concatenate 1-D pieces, promoting to Dual when any piece has partials."""
    k = next((p.nseeds for p in parts if isinstance(p, Dual)), None)
    vs, ds = [], []
    for p in parts:
        if isinstance(p, Dual):
            v = np.atleast_1d(p.v)
            ds.append(p.d.reshape(v.size, k))
        else:
            v = np.atleast_1d(np.asarray(p, dtype=float))
            if k is not None:
                ds.append(np.zeros((v.size, k)))
        vs.append(v)
    v = np.concatenate(vs)
    if k is None:
        return v
    return Dual(v, np.concatenate(ds, axis=0))


def _partials_of(out, n_out_hint, k):
    if isinstance(out, Dual):
        J = np.asarray(out.d, dtype=float)
        if not np.all(np.isfinite(J)):
            raise NonFiniteDerivative("non-finite partial derivatives")
        return J
    return np.zeros((np.asarray(out).size, k))


def jacobian(f, x) -> np.ndarray:
    """Full Jacobian of a vector function of one vector argument."""
    out = f(seed(x))
    return _partials_of(out, None, np.asarray(x).size)


def jacobian_x(f, t, x, d) -> np.ndarray:
    """d f(t, x, d) / d x evaluated exactly via dual seeds."""
    out = f(t, seed(x), d)
    return _partials_of(out, None, np.asarray(x).size)


def jacobian_theta(f, t, x, theta, chunk: int | None = 32) -> np.ndarray:
    """d f(t, x, theta) / d theta with seeds chunked to bound memory.

    Chunking splits the seed directions only; results are bit-identical
    for any chunk size.
    """
    theta = np.asarray(theta, dtype=float)
    l = theta.size
    if chunk is None or chunk >= l:
        out = f(t, x, seed(theta))
        return _partials_of(out, None, l)
    cols = []
    for j0 in range(0, l, chunk):
        kk = min(chunk, l - j0)
        d = np.zeros((l, kk))
        d[j0 + np.arange(kk), np.arange(kk)] = 1.0
        out = f(t, x, Dual(theta, d))
        cols.append(_partials_of(out, None, kk))
    return np.concatenate(cols, axis=-1)


def jacobian_u(f, t, x, u) -> np.ndarray:
    """d f(t, x, u) / d u evaluated exactly via dual seeds."""
    out = f(t, x, seed(u))
    return _partials_of(out, None, np.asarray(u).size)


def linearize(f, t, x, d):
    """Value and both Jacobians of f(t, x, d) from one dual evaluation.

    Returns (f_value, df/dx, df/dd).
    """
    x = np.asarray(x, dtype=float)
    darr = np.asarray(d, dtype=float)
    n, l = x.size, darr.size
    out = f(t, seed(x, n + l, 0), seed(darr, n + l, n))
    if not isinstance(out, Dual):
        v = np.asarray(out, dtype=float)
        return v, np.zeros((v.size, n)), np.zeros((v.size, l))
    J = out.d
    if not np.all(np.isfinite(J)):
        raise NonFiniteDerivative(f"non-finite Jacobian at t={t}")
    return np.asarray(out.v, dtype=float), J[:, :n], J[:, n:]


def central_difference_jacobian(fun, x, step) -> np.ndarray:
    """Independent 2nd-order finite-difference Jacobian of fun at x.

    `step` may be a scalar or per-coordinate array.  Used as the oracle
    side of derivative checks; never reuses dual arithmetic.
    """
    x = np.asarray(x, dtype=float)
    steps = np.broadcast_to(np.asarray(step, dtype=float), x.shape)
    cols = []
    for j in range(x.size):
        e = np.zeros(x.size)
        e[j] = steps.flat[j]
        fp = np.asarray(fun(x + e), dtype=float)
        fm = np.asarray(fun(x - e), dtype=float)
        cols.append((fp - fm) / (2.0 * steps.flat[j]))
    return np.stack(cols, axis=-1)


def five_point_derivative(fun, x, j, step) -> float:
    """5-point central difference of a scalar function along coordinate j."""
    e = np.zeros(np.asarray(x).size)
    e[j] = 1.0
    f = lambda c: float(fun(np.asarray(x, dtype=float) + c * step * e))
    return (-f(2.0) + 8.0 * f(1.0) - 8.0 * f(-1.0) + f(-2.0)) / (12.0 * step)


def cost_gradient(f, theta, x0, grid: TimeGrid, terminal, regularizer=None):
    """Value and theta-gradient of J = terminal(x(tf)) + regularizer(theta).

    The state follows dx/dt = f(t, x, theta) on the fixed RK4 grid; the
    gradient is the exact reverse accumulation through the RK4 stages.
    Running costs are handled by augmenting the state with a quadrature
    variable before calling this.  `terminal(x) -> (value, dvalue/dx)`,
    `regularizer(theta) -> (value, grad)`.
    """
    theta = np.asarray(theta, dtype=float)
    traj = integrate_fixed(lambda t, x: value(f(t, x, theta)), x0, grid)
    xs = traj.xs
    dt = grid.dt
    n_steps = grid.n_steps
    n = xs.shape[1]
    J_term, lam = terminal(xs[-1])
    lam = np.asarray(lam, dtype=float).copy()
    grad = np.zeros(theta.size)
    I = np.eye(n)
    half = 0.5 * dt
    for i in range(n_steps - 1, -1, -1):
        t = grid.t0 + i * dt
        x = xs[i]
        k1, A1, B1 = linearize(f, t, x, theta)
        k2, A2, B2 = linearize(f, t + half, x + half * k1, theta)
        k3, A3, B3 = linearize(f, t + half, x + half * k2, theta)
        _, A4, B4 = linearize(f, t + dt, x + dt * k3, theta)
        K1x, K1p = A1, B1
        K2x = A2 + half * (A2 @ K1x)
        K2p = B2 + half * (A2 @ K1p)
        K3x = A3 + half * (A3 @ K2x)
        K3p = B3 + half * (A3 @ K2p)
        K4x = A4 + dt * (A4 @ K3x)
        K4p = B4 + dt * (A4 @ K3p)
        step_x = I + (dt / 6.0) * (K1x + 2.0 * K2x + 2.0 * K3x + K4x)
        step_p = (dt / 6.0) * (K1p + 2.0 * K2p + 2.0 * K3p + K4p)
        grad += step_p.T @ lam
        lam = step_x.T @ lam
        if not np.all(np.isfinite(lam)):
            raise NonFiniteDerivative(f"non-finite adjoint at step {i}")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteDerivative("non-finite gradient")
    J = float(J_term)
    if regularizer is not None:
        val, g = regularizer(theta)
        J += float(val)
        grad = grad + np.asarray(g, dtype=float)
    return J, grad
