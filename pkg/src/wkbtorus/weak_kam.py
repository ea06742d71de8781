"""Positive-type weak KAM solutions by discrete Lax-Oleinik iteration.

The solver looks for S+ with (1/2m)|grad S+|^2 + V = c[0] as the fixed point
(up to the drift dt * c[0]) of

    (T u)(x) = max_y { u(y) - c_dt(x, y) },

where the maximum runs over grid nodes and c_dt is a one-step approximation
of the minimal action h_dt.  Two one-step actions are available:

``"trapezoid"``
    m |d|^2 / 2dt - dt (V(x) + V(y)) / 2, the Stormer-Verlet discrete
    Lagrangian.  Its local error is O(dt^3).

``"corrected"`` (default)
    the trapezoid action plus the midpoint terms
    dt d.HessV(xm).d / 12 - dt^3 |grad V(xm)|^2 / 24m, which remove the
    O(dt^3) term.  The extra accuracy lets dt be large enough that the
    velocity lattice (spacing / dt) does not pollute grad S+ near the
    maximum of V.

Here d is the lifted displacement y + 2 pi nu - x and xm = x + d/2.

Restricting y to nodes leaves an O(h^2) jitter in the fixed point which
finite differences turn into O(h) noise in grad S+.  With ``refine`` on, the
node iteration is followed by the same iteration with y continuous: u is
replaced by its periodic cubic spline and each maximiser is polished by
Newton steps started from the node maximiser.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from scipy import ndimage

from .errors import NonConvergence
from .grid import (
    ScalarField,
    TorusGrid,
    VectorField,
    as_points,
    corner_indices,
    interpolate_periodic,
    make_grid,
    reduce_mod,
)
from .hamiltonian import Potential, critical_value

ACTIONS = ("corrected", "trapezoid")


@dataclass(frozen=True)
class LaxOleinikConfig:
    dt: float = 0.1
    max_iters: int = 5000
    tol: float = 1e-10
    winding_range: int = 1
    action: str = "corrected"
    # None -> 0.5 * sqrt(spacing); see differentiability_mask
    mask_tau: float = None
    refine: bool = True

    def __post_init__(self):
        if not 0 < self.dt <= 0.5:
            raise ValueError(f"dt must lie in (0, 0.5], got {self.dt}")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.winding_range < 1:
            raise ValueError("winding_range must be >= 1")
        if self.action not in ACTIONS:
            raise ValueError(f"action must be one of {ACTIONS}")


@dataclass(frozen=True)
class WeakKamSolution:
    grid: TorusGrid
    values: np.ndarray = field(repr=False)
    gradient: VectorField = field(repr=False)
    diff_mask: np.ndarray = field(repr=False)
    c0: float
    residual: float
    mass: float = 1.0
    anchor: int = 0
    iterations: int = 0
    final_change: float = 0.0
    drift_per_step: float = float("nan")
    dt: float = float("nan")
    refined: bool = False

    @property
    def as_field(self) -> ScalarField:
        return ScalarField(self.grid, self.values)

    def value_at(self, x):
        return interpolate_periodic(self.as_field, x)

    def gradient_at(self, x):
        """grad S+ at arbitrary points by multilinear interpolation, shape (P, dim)."""
        return interpolate_periodic(self.gradient, x)

    def in_domain(self, x) -> np.ndarray:
        """A point belongs to dom grad S+ when every corner of its cell is in the mask."""
        corners = corner_indices(self.grid, x)
        return np.all(self.diff_mask.ravel()[corners], axis=-1)

    def require_in_domain(self, x):
        from .errors import ParticleOutsideDomain

        ok = self.in_domain(x)
        if not np.all(ok):
            bad = np.flatnonzero(~ok)
            raise ParticleOutsideDomain(
                f"{bad.size} point(s) outside dom grad S+, first index {bad[0]}", bad
            )

    def eikonal_residual_field(self, V: Potential) -> np.ndarray:
        p2 = np.sum(self.gradient.components**2, axis=0)
        return np.abs(p2 / (2 * self.mass) + V.sample(self.grid).values - self.c0)

    def band_mask(self, width: int = 3) -> np.ndarray:
        """Mask with an extra ``width``-node band removed around excluded nodes."""
        bad = ~self.diff_mask
        grown = bad.copy()
        for ax in range(self.grid.dim):
            for s in range(1, width + 1):
                grown |= np.roll(bad, s, axis=ax) | np.roll(bad, -s, axis=ax)
        return ~grown


# ---------------------------------------------------------------------------
# one-step action


def _windings(dim, W):
    return np.array(list(itertools.product(range(-W, W + 1), repeat=dim)), dtype=float)


def one_step_cost(x, y, dt: float, V: Potential, m: float = 1.0,
                  winding_range: int = 1, action: str = "corrected"):
    """Approximate minimal action c_dt(x, y), minimised over windings nu.

    ``x`` and ``y`` broadcast against each other; the trailing axis holds the
    coordinates.  In 1D an array whose last axis is not of length one is read
    as a batch of scalar coordinates.
    """
    dim = V.dim
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if dim == 1 and (y.ndim == 0 or y.shape[-1] != 1):
        y = y[..., None]
    x, y = np.broadcast_arrays(x, y)
    shape = x.shape[:-1]
    xf = x.reshape(-1, dim)
    yf = y.reshape(-1, dim)
    vx = V(xf)
    vy = V(yf)
    best = np.full(xf.shape[0], np.inf)
    for nu in _windings(dim, winding_range):
        d = yf + 2 * np.pi * nu - xf
        c = m * np.sum(d * d, axis=-1) / (2 * dt) - dt * (vx + vy) / 2
        if action == "corrected":
            xm = xf + d / 2
            g, hess = V.derivatives(xm)
            c = c + dt * np.einsum("pi,pij,pj->p", d, hess, d) / 12
            c = c - dt**3 * np.sum(g * g, axis=-1) / (24 * m)
        best = np.minimum(best, c)
    return best.reshape(shape)


# ---------------------------------------------------------------------------
# Lax-Oleinik operator


def _split_axes(V: Potential):
    """Per-axis 1D potentials summing to V (V must be separable)."""
    parts = []
    k, a = V.wavevectors, V.coefficients
    for ax in range(V.dim):
        sel = k[:, ax] != 0
        if ax == 0:
            sel = sel | np.all(k == 0, axis=1)
        parts.append(Potential(1, k[sel][:, [ax]], a[sel], name=f"{V.name}[{ax}]"))
    return parts


def _lipschitz(u, grid):
    """Discrete Lipschitz constant of grid data w.r.t. the torus metric."""
    h = grid.spacing
    lips = [np.max(np.abs(np.diff(u, axis=ax, append=np.take(u, [0], axis=ax)))) / h
            for ax in range(grid.dim)]
    return float(np.sqrt(np.sum(np.square(lips))))


def _band_radius(lip, grid, dt, V, m, action):
    """Offset radius (in nodes) that provably contains every maximiser.

    A maximiser y of u(y) - c(x, y) satisfies c(x, y) - c(x, x) <= lip |d|,
    while c(x, y) - c(x, x) >= a |d|^2 - b with a, b read off the action.
    """
    h = grid.spacing
    G, K, osc = V.bounds()
    a = m / (2 * dt)
    b = dt * osc / 2
    if action == "corrected":
        a -= dt * K / 12
        b += dt**3 * G**2 / (24 * m)
    if a <= 0:
        return grid.points_per_dim
    r = (lip + np.sqrt(lip * lip + 4 * a * b)) / (2 * a)
    return int(np.ceil(r / h)) + 1


class _Operator:
    """Cached cost tables for repeated applications of the max-plus operator."""

    def __init__(self, grid: TorusGrid, V: Potential, m: float, cfg: LaxOleinikConfig):
        self.grid, self.V, self.m, self.cfg = grid, V, m, cfg
        self.separable = grid.dim == 1 or cfg.action == "trapezoid" or V.is_separable
        self.radius = -1
        self.tables = None

    def _offsets(self, radius):
        n = self.grid.points_per_dim
        if 2 * radius + 1 >= n:
            return np.arange(-(n // 2), n - n // 2)
        return np.arange(-radius, radius + 1)

    def _build(self, radius):
        grid, cfg, m = self.grid, self.cfg, self.m
        offs = self._offsets(radius)
        ax = grid.axis
        n = grid.points_per_dim
        if grid.dim == 1:
            xi = ax[:, None, None]
            yj = ax[(np.arange(n)[:, None] + offs[None, :]) % n][..., None]
            self.tables = [one_step_cost(xi, yj, cfg.dt, self.V, m, cfg.winding_range, cfg.action)]
        elif cfg.action == "trapezoid":
            zero = Potential.zero(1)
            xi = ax[:, None, None]
            yj = ax[(np.arange(n)[:, None] + offs[None, :]) % n][..., None]
            t = one_step_cost(xi, yj, cfg.dt, zero, m, cfg.winding_range, cfg.action)
            self.tables = [t, t]
        elif self.separable:
            self.tables = []
            xi = ax[:, None, None]
            yj = ax[(np.arange(n)[:, None] + offs[None, :]) % n][..., None]
            for part in _split_axes(self.V):
                self.tables.append(
                    one_step_cost(xi, yj, cfg.dt, part, m, cfg.winding_range, cfg.action))
        else:
            self.tables = None
        self.offs = offs
        self.radius = radius

    def apply(self, u):
        grid, cfg = self.grid, self.cfg
        lip = _lipschitz(u, grid)
        radius = _band_radius(lip, grid, cfg.dt, self.V, self.m, cfg.action)
        if radius > self.radius:
            # size the table for the a priori bound sqrt(2 m osc V) on |grad S+|
            guess = np.sqrt(2 * self.m * self.V.bounds()[2])
            self._build(max(radius, _band_radius(max(lip, guess), grid, cfg.dt,
                                                 self.V, self.m, cfg.action)))
        if grid.dim == 1:
            return _max_plus_axis(u, self.tables[0], self.offs, 0)
        if cfg.action == "trapezoid":
            half = cfg.dt * self.V.sample(grid).values / 2
            w = u + half
            w = _max_plus_axis(w, self.tables[1], self.offs, 1)
            w = _max_plus_axis(w, self.tables[0], self.offs, 0)
            return w + half
        if self.separable:
            w = _max_plus_axis(u, self.tables[1], self.offs, 1)
            return _max_plus_axis(w, self.tables[0], self.offs, 0)
        return _max_plus_direct(u, grid, self.offs, self.V, self.m, cfg)

    def argmax(self, u):
        """Node offsets (dim, *shape) of a maximiser y - x for every node x."""
        grid = self.grid
        self.apply(u)
        if grid.dim == 1:
            return _max_plus_axis(u, self.tables[0], self.offs, 0, True)[1][None]
        if not self.separable:
            return _max_plus_direct(u, grid, self.offs, self.V, self.m, self.cfg, True)[1]
        w = u
        if self.cfg.action == "trapezoid":
            w = u + self.cfg.dt * self.V.sample(grid).values / 2
        w, a1 = _max_plus_axis(w, self.tables[1], self.offs, 1, True)
        _, a0 = _max_plus_axis(w, self.tables[0], self.offs, 0, True)
        n = grid.points_per_dim
        ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        return np.stack([a0, a1[(ii + a0) % n, jj]])


class _Polisher:
    """max_y {U(y) - c_dt(x, y)} over continuous y, U the periodic cubic spline of u.

    Newton steps with finite-difference derivatives, started from given
    maximisers; steps are capped at one grid spacing.
    """

    EPS = 1e-4

    def __init__(self, grid: TorusGrid, V: Potential, m: float, cfg: LaxOleinikConfig):
        self.grid, self.V, self.m, self.cfg = grid, V, m, cfg
        self.X = grid.nodes()

    def _f(self, coef, Y):
        h = self.grid.spacing
        U = ndimage.map_coordinates(coef, (Y / h).T, order=3, mode="grid-wrap", prefilter=False)
        # Y stays within a few nodes of X, so the direct displacement is the shortest
        return U - one_step_cost(self.X, Y, self.cfg.dt, self.V, self.m, 0, self.cfg.action)

    def maximise(self, coef, Y, iters: int = 8):
        d = self.grid.dim
        h = self.grid.spacing
        E = np.eye(d) * self.EPS
        for _ in range(iters):
            f0 = self._f(coef, Y)
            fp = [self._f(coef, Y + E[i]) for i in range(d)]
            fm = [self._f(coef, Y - E[i]) for i in range(d)]
            g = np.stack([(fp[i] - fm[i]) / (2 * self.EPS) for i in range(d)], -1)
            H = np.empty((len(Y), d, d))
            for i in range(d):
                H[:, i, i] = (fp[i] - 2 * f0 + fm[i]) / self.EPS**2
                for j in range(i + 1, d):
                    H[:, i, j] = H[:, j, i] = (
                        self._f(coef, Y + E[i] + E[j]) - self._f(coef, Y + E[i] - E[j])
                        - self._f(coef, Y - E[i] + E[j]) + self._f(coef, Y - E[i] - E[j])
                    ) / (4 * self.EPS**2)
            concave = np.all(np.linalg.eigvalsh(H) < 0, axis=-1)
            Hs = np.where(concave[:, None, None], H, -np.eye(d))
            step = -np.linalg.solve(Hs, g[..., None])[..., 0]
            step = np.where(concave[:, None], step, g * self.cfg.dt / self.m)
            size = np.linalg.norm(step, axis=-1, keepdims=True)
            step *= np.minimum(1.0, h / np.maximum(size, 1e-300))
            Y = Y + step
            if size.max() < 1e-11:
                break
        return Y

    def apply(self, u, Y):
        coef = ndimage.spline_filter(np.asarray(u, dtype=float), order=3, mode="grid-wrap")
        Y = self.maximise(coef, Y)
        return self._f(coef, Y).reshape(self.grid.shape), Y

    def start(self, op: _Operator, u):
        offs = op.argmax(u)
        return self.X + offs.reshape(self.grid.dim, -1).T * self.grid.spacing


def _max_plus_axis(u, table, offs, axis, with_arg=False):
    """out[i] = max_o u[i + o] - table[i, o] along one axis (periodic).

    With ``with_arg`` the maximising offsets (first one on ties) are returned too.
    """
    shape = [1] * u.ndim
    shape[axis] = -1
    out = np.full(u.shape, -np.inf)
    arg = np.zeros(u.shape, dtype=int) if with_arg else None
    for col, o in enumerate(offs):
        cand = np.roll(u, -o, axis=axis) - table[:, col].reshape(shape)
        if with_arg:
            arg[cand > out] = o
        np.maximum(out, cand, out=out)
    return (out, arg) if with_arg else out


def _max_plus_direct(u, grid, offs, V, m, cfg, with_arg=False):
    """2D banded evaluation for non-separable potentials (slow path)."""
    n = grid.points_per_dim
    arg = np.zeros((2, grid.size), dtype=int) if with_arg else None
    nodes = grid.nodes()
    out = np.full(grid.size, -np.inf)
    ii = np.arange(n)
    flat_u = u.ravel()
    for ox in offs:
        for oy in offs:
            tgt = np.ravel_multi_index(
                np.meshgrid((ii + ox) % n, (ii + oy) % n, indexing="ij"), grid.shape
            ).ravel()
            c = one_step_cost(nodes, nodes[tgt], cfg.dt, V, m, cfg.winding_range, cfg.action)
            cand = flat_u[tgt] - c
            if arg is not None:
                better = cand > out
                arg[0][better] = ox
                arg[1][better] = oy
            np.maximum(out, cand, out=out)
    if arg is not None:
        return out.reshape(grid.shape), arg.reshape((2,) + grid.shape)
    return out.reshape(grid.shape)


def lax_oleinik_plus(u: ScalarField, cfg: LaxOleinikConfig, V: Potential, m: float = 1.0):
    """One application of T+_dt: (T u)(x) = max over grid nodes y of u(y) - c_dt(x, y)."""
    op = _Operator(u.grid, V, m, cfg)
    return ScalarField(u.grid, op.apply(np.asarray(u.values, dtype=float)))


def lax_oleinik_plus_bruteforce(u: ScalarField, cfg: LaxOleinikConfig, V: Potential,
                                m: float = 1.0) -> ScalarField:
    """Reference O(N^2) double loop over all node pairs (for testing)."""
    grid = u.grid
    nodes = grid.nodes()
    flat = u.values.ravel()
    out = np.empty(grid.size)
    for i in range(grid.size):
        c = one_step_cost(nodes[i][None, :], nodes, cfg.dt, V, m, cfg.winding_range, cfg.action)
        out[i] = np.max(flat - c)
    return ScalarField(grid, out.reshape(grid.shape))


# ---------------------------------------------------------------------------
# differentiability and gradients


def default_tau(grid: TorusGrid) -> float:
    return 0.5 * np.sqrt(grid.spacing)


def differentiability_mask(values, grid: TorusGrid, tau: float = None) -> np.ndarray:
    """Nodes where forward and backward difference quotients agree.

    A node is excluded when, along some axis, |forward - backward| exceeds
    tau * (1 + |central|).
    """
    if tau is None:
        tau = default_tau(grid)
    s = np.asarray(values, dtype=float).reshape(grid.shape)
    h = grid.spacing
    mask = np.ones(grid.shape, dtype=bool)
    for ax in range(grid.dim):
        fwd = (np.roll(s, -1, axis=ax) - s) / h
        bwd = (s - np.roll(s, 1, axis=ax)) / h
        ctr = 0.5 * (fwd + bwd)
        mask &= np.abs(fwd - bwd) <= tau * (1 + np.abs(ctr))
    return mask


def finite_difference_gradient(values, grid: TorusGrid, mask) -> np.ndarray:
    """Central differences on the mask, backward differences elsewhere."""
    s = np.asarray(values, dtype=float).reshape(grid.shape)
    h = grid.spacing
    comps = []
    for ax in range(grid.dim):
        ctr = (np.roll(s, -1, axis=ax) - np.roll(s, 1, axis=ax)) / (2 * h)
        bwd = (s - np.roll(s, 1, axis=ax)) / h
        comps.append(np.where(mask, ctr, bwd))
    return np.stack(comps)


def solve_weak_kam_plus(V: Potential, m: float = 1.0, cfg: LaxOleinikConfig = None,
                        grid: TorusGrid = None) -> WeakKamSolution:
    """Iterate u <- T+u - dt c[0] from u = 0, anchored at a maximiser of V.

    Raises NonConvergence when the sup-norm update stays above ``cfg.tol``
    after ``cfg.max_iters`` sweeps.
    """
    cfg = cfg or LaxOleinikConfig()
    grid = grid or make_grid(V.dim, 1024 if V.dim == 1 else 128)
    if m <= 0:
        raise ValueError("mass must be positive")
    c0 = critical_value(V)
    vnodes = V.sample(grid).values
    anchor = int(np.argmax(vnodes.ravel()))
    op = _Operator(grid, V, m, cfg)
    u = np.zeros(grid.shape)
    change = np.inf
    drifts = []
    it = 0
    for it in range(1, cfg.max_iters + 1):
        tu = op.apply(u)
        drifts.append(tu.ravel()[anchor] - u.ravel()[anchor])
        new = tu - cfg.dt * c0
        new = new - new.ravel()[anchor]
        change = float(np.max(np.abs(new - u)))
        u = new
        if change <= cfg.tol:
            break
    else:
        raise NonConvergence(
            f"Lax-Oleinik iteration did not converge in {cfg.max_iters} sweeps "
            f"(last change {change:.3e})",
            final_change=change,
        )
    refined = False
    if cfg.refine:
        pol = _Polisher(grid, V, m, cfg)
        Y = pol.start(op, u)
        for it2 in range(1, cfg.max_iters + 1):
            val, Y = pol.apply(u, Y)
            new = val - cfg.dt * c0
            new = new - new.ravel()[anchor]
            change = float(np.max(np.abs(new - u)))
            u = new
            if change <= cfg.tol:
                break
        else:
            raise NonConvergence(
                f"refined Lax-Oleinik iteration did not converge in {cfg.max_iters} sweeps "
                f"(last change {change:.3e})",
                final_change=change,
            )
        it += it2
        refined = True
    mask = differentiability_mask(u, grid, cfg.mask_tau)
    grad = finite_difference_gradient(u, grid, mask)
    p2 = np.sum(grad**2, axis=0)
    res_field = np.abs(p2 / (2 * m) + vnodes - c0)
    residual = float(res_field[mask].max()) if mask.any() else float("nan")
    tail = drifts[-min(len(drifts), 10):]
    return WeakKamSolution(
        grid=grid,
        values=u,
        gradient=VectorField(grid, grad),
        diff_mask=mask,
        c0=c0,
        residual=residual,
        mass=m,
        anchor=anchor,
        iterations=it,
        final_change=change,
        drift_per_step=float(np.mean(tail)),
        dt=cfg.dt,
        refined=refined,
    )


def fixed_point_defect(S: WeakKamSolution, V: Potential, cfg: LaxOleinikConfig) -> float:
    """sup |T+S - dt c[0] - S| for the operator S was solved with (node or refined)."""
    if S.refined:
        op = _Operator(S.grid, V, S.mass, cfg)
        pol = _Polisher(S.grid, V, S.mass, cfg)
        tu = pol.apply(S.values, pol.start(op, S.values))[0]
    else:
        tu = lax_oleinik_plus(S.as_field, cfg, V, S.mass).values
    new = tu - cfg.dt * S.c0
    return float(np.max(np.abs(new - S.values)))


def flat_solution(grid: TorusGrid, m: float = 1.0) -> WeakKamSolution:
    """S+ = 0 for V = 0 (useful for static checks)."""
    zeros = np.zeros(grid.shape)
    return WeakKamSolution(
        grid=grid,
        values=zeros,
        gradient=VectorField(grid, np.zeros((grid.dim,) + grid.shape)),
        diff_mask=np.ones(grid.shape, dtype=bool),
        c0=0.0,
        residual=0.0,
        mass=m,
    )


def check_c_convexity(S: WeakKamSolution, t: float, sample_points, costs=None,
                      targets=None, V: Potential = None) -> float:
    """sup over samples x of |max_y {S(y) - t c0 - h_t(x, y)} - S(x)|.

    ``costs`` is a :class:`~wkbtorus.transport.CostMatrix` (or a plain array)
    of h_t(x_i, y_j) with rows at ``sample_points``; its targets supply the
    y's; without them the one-step action at time t is used.  At t = 0 the
    exact h_0 (0 on the diagonal, +inf elsewhere) makes the defect vanish.
    """
    xs = as_points(sample_points, S.grid.dim)
    if t == 0:
        # h_0(x, y) is 0 for y = x and +inf otherwise
        ys = xs if targets is None else as_points(targets, S.grid.dim)
        same = np.all(reduce_mod(ys)[None, :, :] == reduce_mod(xs)[:, None, :], axis=-1)
        C = np.where(same, 0.0, np.inf)
        if not same.any(axis=1).all():
            raise ValueError("at t = 0 every sample point must also be a target")
    elif costs is None:
        if V is None:
            raise ValueError("V is required when costs are not supplied")
        ys = xs if targets is None else as_points(targets, S.grid.dim)
        C = one_step_cost(xs[:, None, :], ys[None, :, :], t, V, S.mass)
    else:
        C = np.asarray(getattr(costs, "values", costs), dtype=float)
        ys = getattr(costs, "targets", targets)
        ys = as_points(ys, S.grid.dim)
    s_y = S.value_at(reduce_mod(ys))
    s_x = S.value_at(xs)
    best = np.max(s_y[None, :] - t * S.c0 - C, axis=1)
    return float(np.max(np.abs(best - s_x)))
