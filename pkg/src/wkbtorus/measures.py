"""Probability measures on the torus and on its cotangent bundle.

Particles are the primary representation: pushforwards move atoms and keep
their weights, so no numerical diffusion enters.  Grid densities represent
absolutely continuous measures; a nodal value rho_j is read as a constant
density on the cell [x_j - h/2, x_j + h/2) along each axis.

The random-curve space of the Lagrangian formulation is identified with the
particle index set: particle i follows one curve and carries probability w_i.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import CflViolation, GridError, NonConvergence
from .grid import TWO_PI, TorusGrid, as_points, reduce_mod
from .hamiltonian import Potential, flow

WEIGHT_TOL = 1e-12
MASS_TOL = 1e-10


def _check_weights(w, n):
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.shape[0] != n:
        raise ValueError(f"{w.shape[0]} weights for {n} points")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    if abs(w.sum() - 1.0) > WEIGHT_TOL:
        raise ValueError(f"weights sum to {w.sum():.15g}, expected 1")
    return w


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ParticleMeasure:
    """sum_i w_i delta_{x_i} on the torus; points are stored reduced mod 2 pi."""

    points: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    dim: int = 1

    def __post_init__(self):
        pts = reduce_mod(as_points(self.points, self.dim))
        if not np.all(np.isfinite(pts)):
            raise ValueError("particle positions must be finite")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weights", _frozen(_check_weights(self.weights, len(pts))))

    @classmethod
    def uniform(cls, points, dim: int = 1) -> "ParticleMeasure":
        pts = as_points(points, dim)
        return cls(pts, np.full(len(pts), 1.0 / len(pts)), dim)

    def __len__(self):
        return self.points.shape[0]

    def integrate(self, g: Callable) -> float:
        """sum_i w_i g(x_i) for a vectorised g acting on (P, dim) arrays."""
        return np.sum(self.weights * np.asarray(g(self.points)))


@dataclass(frozen=True)
class PhaseParticleMeasure:
    """sum_i w_i delta_{(x_i, p_i)} on T^n x R^n."""

    points: np.ndarray = field(repr=False)
    momenta: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    dim: int = 1

    def __post_init__(self):
        pts = reduce_mod(as_points(self.points, self.dim))
        mom = as_points(self.momenta, self.dim)
        if pts.shape != mom.shape:
            raise ValueError("positions and momenta must have the same shape")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(mom))):
            raise ValueError("phase points must be finite")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "momenta", _frozen(mom))
        object.__setattr__(self, "weights", _frozen(_check_weights(self.weights, len(pts))))

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class GridMeasure:
    """Cell-constant density with sum(density) * cell_volume = 1."""

    grid: TorusGrid
    density: np.ndarray = field(repr=False)

    def __post_init__(self):
        d = np.asarray(self.density, dtype=float)
        if d.size != self.grid.size:
            raise ValueError(f"density has {d.size} values, grid needs {self.grid.size}")
        d = d.reshape(self.grid.shape)
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise ValueError("density must be finite and nonnegative")
        mass = d.sum() * self.grid.cell_volume
        if abs(mass - 1.0) > MASS_TOL:
            raise ValueError(f"density has mass {mass:.12g}, expected 1")
        object.__setattr__(self, "density", _frozen(d))

    @classmethod
    def normalized(cls, grid: TorusGrid, values) -> "GridMeasure":
        v = np.clip(np.asarray(values, dtype=float).reshape(grid.shape), 0.0, None)
        total = v.sum() * grid.cell_volume
        if total <= 0:
            raise ValueError("cannot normalise a density with zero mass")
        return cls(grid, v / total)

    @classmethod
    def uniform(cls, grid: TorusGrid) -> "GridMeasure":
        return cls(grid, np.full(grid.shape, 1.0 / TWO_PI**grid.dim))

    @property
    def mass(self) -> float:
        return float(self.density.sum() * self.grid.cell_volume)

    def cell_masses(self) -> np.ndarray:
        return self.density * self.grid.cell_volume


# ---------------------------------------------------------------------------
# lifts and pushforwards


def lift_graph(sigma: ParticleMeasure, S) -> PhaseParticleMeasure:
    """Place each particle on Graph(grad S+).

    Raises ParticleOutsideDomain (with the offending indices) when a particle
    sits in a cell that touches the complement of the differentiability mask.
    """
    S.require_in_domain(sigma.points)
    p = S.gradient_at(sigma.points)
    return PhaseParticleMeasure(sigma.points, p, sigma.weights, sigma.dim)


def pushforward_flow(omega: PhaseParticleMeasure, t: float, V: Potential,
                     m: float = 1.0, step: float = 1e-3) -> PhaseParticleMeasure:
    """Advance every phase particle by the Stormer-Verlet flow; weights unchanged."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    x, p = flow(omega.points, omega.momenta, t, V, m, step)
    return PhaseParticleMeasure(x, p, omega.weights, omega.dim)


def project(omega: PhaseParticleMeasure) -> ParticleMeasure:
    return ParticleMeasure(omega.points, omega.weights, omega.dim)


def pushforward_map(sigma: ParticleMeasure, Psi: Callable) -> ParticleMeasure:
    """Image measure Psi_# sigma; ``Psi`` maps (P, dim) arrays to (P, dim) arrays."""
    return ParticleMeasure(Psi(sigma.points), sigma.weights, sigma.dim)


@dataclass(frozen=True)
class GraphDistance:
    """Momentum distance to Graph(grad S+), split by mask membership."""

    distance: float
    exit_count: int
    exit_mass: float
    max_excursion: float

    def __float__(self):
        return self.distance


def graph_distance_report(omega: PhaseParticleMeasure, S) -> GraphDistance:
    """max_i |p_i - grad S+(x_i)| over particles in dom grad S+.

    Particles that have left the domain are counted separately; their worst
    momentum mismatch is reported as ``max_excursion``.
    """
    inside = S.in_domain(omega.points)
    gap = np.linalg.norm(omega.momenta - S.gradient_at(omega.points), axis=-1)
    dist = float(gap[inside].max()) if inside.any() else 0.0
    out = ~inside
    return GraphDistance(
        distance=dist,
        exit_count=int(out.sum()),
        exit_mass=float(omega.weights[out].sum()),
        max_excursion=float(gap[out].max()) if out.any() else 0.0,
    )


def graph_distance(omega: PhaseParticleMeasure, S) -> float:
    return graph_distance_report(omega, S).distance


# ---------------------------------------------------------------------------
# circular Wasserstein distance


def _cdf_pieces(mu, breaks):
    """Right limits of the CDF at ``breaks`` and the density on each gap."""
    if isinstance(mu, GridMeasure):
        g = mu.grid
        if g.dim != 1:
            raise ValueError("w1_circle needs one-dimensional measures")
        h = g.spacing
        # cells [x_j - h/2, x_j + h/2) starting from 0, cell 0 split at the seam
        edges = np.concatenate(([0.0], (np.arange(g.n) + 0.5) * h, [TWO_PI]))
        dens = np.concatenate((mu.density, mu.density[:1]))
        cum = np.concatenate(([0.0], np.cumsum(dens * np.diff(edges))))
        F = np.interp(breaks, edges, cum)
        mids = 0.5 * (breaks[:-1] + breaks[1:])
        seg = np.clip(np.searchsorted(edges, mids, side="right") - 1, 0, len(dens) - 1)
        return F, dens[seg]
    if mu.dim != 1:
        raise ValueError("w1_circle needs one-dimensional measures")
    x = mu.points[:, 0]
    order = np.argsort(x, kind="stable")
    xs, cw = x[order], np.cumsum(mu.weights[order])
    idx = np.searchsorted(xs, breaks, side="right")
    F = np.where(idx > 0, cw[np.maximum(idx - 1, 0)], 0.0)
    return F, np.zeros(len(breaks) - 1)


def _breakpoints(mu):
    if isinstance(mu, GridMeasure):
        h = mu.grid.spacing
        return (np.arange(mu.grid.n) + 0.5) * h
    return mu.points[:, 0]


def _abs_integral(a, b, L):
    """Exact integral of |linear function| over a segment with end values a, b."""
    same = a * b >= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        cross = L * (a * a + b * b) / (2 * np.abs(b - a))
    return np.where(same, L * np.abs(a + b) / 2, cross)


def w1_circle(mu, nu) -> float:
    """Exact 1-Wasserstein distance on the circle R / 2 pi Z.

    Uses W1 = min_alpha int_0^{2 pi} |F_mu - F_nu - alpha| dx, with alpha a
    Lebesgue median of the CDF difference.  Either argument may be a
    ParticleMeasure or a GridMeasure.
    """
    breaks = np.unique(np.concatenate(([0.0, TWO_PI], _breakpoints(mu), _breakpoints(nu))))
    breaks = breaks[(breaks >= 0) & (breaks <= TWO_PI)]
    Fm, dm = _cdf_pieces(mu, breaks)
    Fn, dn = _cdf_pieces(nu, breaks)
    g0 = (Fm - Fn)[:-1]
    s = dm - dn
    L = np.diff(breaks)
    g1 = g0 + s * L
    lo, hi = np.minimum(g0, g1), np.maximum(g0, g1)

    def below(alpha):
        # Lebesgue measure of {G < alpha}
        span = np.where(hi > lo, hi - lo, 1.0)
        frac = np.where(hi > lo, (alpha - lo) / span, (alpha > lo).astype(float))
        return np.sum(L * np.clip(frac, 0.0, 1.0))

    a, b = float(lo.min()), float(hi.max())
    for _ in range(200):
        mid = 0.5 * (a + b)
        if below(mid) < np.pi:
            a = mid
        else:
            b = mid
        if b - a <= 1e-16 * max(1.0, abs(a)):
            break
    alpha = 0.5 * (a + b)
    return float(np.sum(_abs_integral(g0 - alpha, g1 - alpha, L)))


# ---------------------------------------------------------------------------
# entropic transport


@dataclass(frozen=True)
class TransportPlan:
    """Coupling pi_ij >= 0 with row sums mu and column sums nu."""

    weights: np.ndarray = field(repr=False)
    mu: np.ndarray = field(repr=False)
    nu: np.ndarray = field(repr=False)
    method: str = "exact"
    dual_u: np.ndarray = field(default=None, repr=False)
    dual_v: np.ndarray = field(default=None, repr=False)
    epsilon: float = 0.0
    marginal_error: float = 0.0

    def cost(self, C) -> float:
        return float(np.sum(self.weights * np.asarray(getattr(C, "values", C))))


def _weights_of(mu):
    return np.asarray(getattr(mu, "weights", mu), dtype=float).reshape(-1)


def sinkhorn(mu, nu, C, epsilon: float = None, max_iters: int = 10000,
             tol: float = 1e-10, scaling: float = 0.5):
    """Entropic optimal transport in the log domain with epsilon-scaling.

    Solves min <pi, C> + eps KL(pi | mu x nu) over couplings and returns
    (<pi, C>, TransportPlan).  ``epsilon`` defaults to 1e-2 * median(C).
    The schedule starts at eps = max|C| and shrinks by ``scaling`` per stage;
    ``max_iters`` bounds the total number of Sinkhorn sweeps.
    """
    a, b = _weights_of(mu), _weights_of(nu)
    Cv = np.asarray(getattr(C, "values", C), dtype=float)
    if Cv.shape != (a.size, b.size):
        raise ValueError(f"cost shape {Cv.shape} does not match ({a.size}, {b.size})")
    if not np.all(np.isfinite(Cv)):
        raise ValueError("cost matrix must be finite")
    if epsilon is None:
        med = float(np.median(np.abs(Cv)))
        epsilon = 1e-2 * (med if med > 0 else 1.0)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    la, lb = np.log(a, where=a > 0, out=np.full_like(a, -np.inf)), \
        np.log(b, where=b > 0, out=np.full_like(b, -np.inf))
    f = np.zeros(a.size)
    g = np.zeros(b.size)
    eps_sched = []
    e = max(float(np.max(np.abs(Cv))), epsilon)
    while e > epsilon:
        eps_sched.append(e)
        e *= scaling
    eps_sched.append(epsilon)
    sweeps = 0
    err = np.inf
    for k, eps in enumerate(eps_sched):
        final = k == len(eps_sched) - 1
        stage_tol = tol if final else max(tol, 1e-3)
        while True:
            f = -eps * logsumexp(lb[None, :] + (g[None, :] - Cv) / eps, axis=1)
            g = -eps * logsumexp(la[:, None] + (f[:, None] - Cv) / eps, axis=0)
            sweeps += 1
            logp = la[:, None] + lb[None, :] + (f[:, None] + g[None, :] - Cv) / eps
            P = np.exp(logp)
            err = float(np.abs(P.sum(axis=1) - a).sum())
            if err <= stage_tol:
                break
            if sweeps >= max_iters:
                raise NonConvergence(
                    f"Sinkhorn stopped after {sweeps} sweeps (marginal error {err:.3e})",
                    final_change=err,
                )
    plan = TransportPlan(P, a, b, method="sinkhorn", dual_u=f, dual_v=g,
                         epsilon=epsilon, marginal_error=err)
    return float(np.sum(P * Cv)), plan


# ---------------------------------------------------------------------------
# weak-form residuals


def time_bump(t, a: float = 0.0, b: float = 1.0):
    """C-infinity bump supported in (a, b) and its t-derivative."""
    t = np.asarray(t, dtype=float)
    s = (t - a) / (b - a)
    inside = (s > 0) & (s < 1)
    ss = np.where(inside, s, 0.5)
    val = np.where(inside, np.exp(4.0 - 1.0 / (ss * (1.0 - ss))), 0.0)
    dval = val * (1.0 - 2.0 * ss) / (ss * (1.0 - ss)) ** 2 / (b - a)
    return val, np.where(inside, dval, 0.0)


def momentum_bump(p, center=0.0, radius: float = 1.0):
    """Compact bump exp(1 - 1/(1 - r^2)) in |p - center| / radius and its p-gradient."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    d = (p - np.asarray(center, dtype=float)) / radius
    r2 = np.sum(d * d, axis=-1)
    inside = r2 < 1
    q = np.where(inside, 1.0 - r2, 1.0)
    val = np.where(inside, np.exp(1.0 - 1.0 / q), 0.0)
    grad = (val * (-2.0 / (q * q)))[:, None] * d / radius
    return val, np.where(inside[:, None], grad, 0.0)


@dataclass(frozen=True)
class SpaceTimeTest:
    """f(t, x, p) = bump_[a,b](t) * exp(i q.x) * chi(p).

    ``p_center`` None means chi = 1 (a test function of (t, x) only).
    """

    q: tuple
    t_support: tuple = (0.0, 1.0)
    p_center: tuple = None
    p_radius: float = 1.0

    def parts(self, t, x, p=None):
        """Values of f and of (df/dt, grad_x f, grad_p f) at a common time."""
        bt, dbt = time_bump(t, *self.t_support)
        q = np.asarray(self.q, dtype=float)
        ex = np.exp(1j * (x @ q))
        if self.p_center is None or p is None:
            chi, dchi = np.ones(x.shape[0]), np.zeros_like(x)
        else:
            chi, dchi = momentum_bump(p, self.p_center, self.p_radius)
        f = bt * ex * chi
        ft = dbt * ex * chi
        fx = (bt * 1j * ex * chi)[:, None] * q[None, :]
        fp = (bt * ex)[:, None] * dchi
        return f, ft, fx, fp


def test_battery(dim: int = 1, qmax: int = 3, momentum: bool = False,
                 p_centers: Sequence = (-1.5, 0.0, 1.5), p_radius: float = 1.5):
    """Standard space-time test functions.

    Spatial modes exp(i q.x) with |q| <= qmax, one representative per +/- pair
    (the residual of -q is the conjugate), on two time supports (0, 1) and
    (1/4, 3/4).  With ``momentum`` each is also multiplied by bumps in p.
    """
    modes = []
    for q in np.ndindex(*([2 * qmax + 1] * dim)):
        q = tuple(int(v) - qmax for v in q)
        if sum(v * v for v in q) > qmax * qmax:
            continue
        neg = tuple(-v for v in q)
        if neg in modes:
            continue
        modes.append(q)
    supports = [(0.0, 1.0), (0.25, 0.75)]
    tests = []
    for sup in supports:
        for q in modes:
            if momentum:
                for c in p_centers:
                    center = tuple([c] + [0.0] * (dim - 1))
                    tests.append(SpaceTimeTest(q, sup, center, p_radius))
            else:
                tests.append(SpaceTimeTest(q, sup))
    return tests


test_battery.__test__ = False  # not a pytest test


def _check_uniform(times):
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 3:
        raise ValueError("need at least three time samples")
    dts = np.diff(times)
    if np.any(dts <= 0) or np.ptp(dts) > 1e-9 * dts.mean():
        raise ValueError("time samples must be uniform and increasing")
    return times, float(dts.mean())


def continuity_residual(times, sigma_path: Sequence[ParticleMeasure], S, m: float = 1.0,
                        tests=None) -> float:
    """max_f |int int (d_t f + grad_x f . grad S+ / m) d sigma_t dt|.

    The time integral uses the trapezoid rule on the uniform samples; the
    test functions vanish near both ends of their support so the rule is
    very accurate for smooth paths.
    """
    times, dt = _check_uniform(times)
    if len(sigma_path) != times.size:
        raise ValueError("one measure per time sample required")
    tests = test_battery(S.grid.dim) if tests is None else tests
    if len(tests) == 0:
        return 0.0
    acc = np.zeros(len(tests), dtype=complex)
    for k, (t, sig) in enumerate(zip(times, sigma_path)):
        wq = dt * (0.5 if k in (0, times.size - 1) else 1.0)
        x = sig.points
        v = S.gradient_at(x) / m
        for i, f in enumerate(tests):
            _, ft, fx, _ = f.parts(t, x)
            acc[i] += wq * np.sum(sig.weights * (ft + np.sum(fx * v, axis=-1)))
    return float(np.max(np.abs(acc)))


def liouville_residual(times, omega_path: Sequence[PhaseParticleMeasure], V: Potential,
                       m: float = 1.0, tests=None) -> float:
    """max_f |int int (d_s f + {H, f}) d omega_s ds| with {H, f} = p/m . grad_x f - grad V . grad_p f."""
    times, dt = _check_uniform(times)
    if len(omega_path) != times.size:
        raise ValueError("one measure per time sample required")
    tests = test_battery(V.dim, momentum=True) if tests is None else tests
    if len(tests) == 0:
        return 0.0
    acc = np.zeros(len(tests), dtype=complex)
    for k, (t, om) in enumerate(zip(times, omega_path)):
        wq = dt * (0.5 if k in (0, times.size - 1) else 1.0)
        x, p = om.points, om.momenta
        gv = V.gradient(x)
        for i, f in enumerate(tests):
            _, ft, fx, fp = f.parts(t, x, p)
            pb = np.sum(fx * p / m, axis=-1) - np.sum(fp * gv, axis=-1)
            acc[i] += wq * np.sum(om.weights * (ft + pb))
    return float(np.max(np.abs(acc)))


# ---------------------------------------------------------------------------
# grid solver for the continuity equation


def face_velocities(S, m: float = 1.0):
    """Velocity (S_{j+1} - S_j) / (h m) on the face between nodes j and j+1, per axis."""
    s = np.asarray(S.values, dtype=float)
    h = S.grid.spacing
    return [(np.roll(s, -1, axis=ax) - s) / (h * m) for ax in range(S.grid.dim)]


def advect_density_upwind(sigma0: GridMeasure, S, m: float = 1.0, t: float = 1.0,
                          cfl: float = 0.5, velocity=None) -> GridMeasure:
    """First-order conservative donor-cell solution of d_t rho + div(rho grad S / m) = 0.

    ``velocity`` overrides the face velocities: a constant per axis or a list
    of face arrays (testing only).  The time step is the largest one for
    which no cell loses more than ``cfl`` of its mass per step, which keeps
    the density nonnegative.
    """
    if not 0 < cfl <= 0.9:
        raise CflViolation(f"cfl must lie in (0, 0.9], got {cfl}")
    grid = sigma0.grid
    if S is not None and S.grid != grid:
        raise GridError(f"density lives on {grid} but S+ on {S.grid}; solve S+ on the density grid")
    if t < 0:
        raise ValueError("t must be nonnegative")
    h = grid.spacing
    if velocity is None:
        faces = face_velocities(S, m)
    else:
        vel = np.broadcast_to(np.asarray(velocity, dtype=float), (grid.dim,) + grid.shape) \
            if np.ndim(velocity) <= 1 else velocity
        faces = [np.broadcast_to(np.asarray(vel[ax], dtype=float), grid.shape)
                 for ax in range(grid.dim)]
    rate = np.zeros(grid.shape)
    for ax, vf in enumerate(faces):
        rate += np.maximum(vf, 0.0) / h + np.maximum(-np.roll(vf, 1, axis=ax), 0.0) / h
    rmax = float(rate.max())
    n = 0 if t == 0 else max(1, int(np.ceil(t * rmax / cfl - 1e-12)))
    dt = t / n if n else 0.0
    rho = np.array(sigma0.density, dtype=float)
    for _ in range(n):
        div = np.zeros(grid.shape)
        for ax, vf in enumerate(faces):
            flux = np.where(vf > 0, vf * rho, vf * np.roll(rho, -1, axis=ax))
            div += (flux - np.roll(flux, 1, axis=ax)) / h
        rho = rho - dt * div
    rho = np.maximum(rho, 0.0)
    # rounding only: the flux form conserves mass to machine precision
    return GridMeasure(grid, rho / (rho.sum() * grid.cell_volume))


# ---------------------------------------------------------------------------
# grid <-> particles


def grid_to_particles(sigma: GridMeasure, count: int, seed: int = 0) -> ParticleMeasure:
    """Deterministic equal-weight sampling of a grid density.

    1D: systematic inverse-CDF sampling, u_i = (i + U) / count with one
    uniform U drawn from ``seed``, inverted through the piecewise-linear CDF.
    2D: systematic allocation of particles to cells, then uniform positions
    inside each cell.
    """
    if count < 1:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(seed)
    grid = sigma.grid
    h = grid.spacing
    u = (np.arange(count) + rng.uniform()) / count
    if grid.dim == 1:
        edges = (np.arange(grid.n + 1) - 0.5) * h
        cum = np.concatenate(([0.0], np.cumsum(sigma.cell_masses())))
        cum /= cum[-1]
        # c[j-1] < u <= c[j] picks a cell with positive mass
        j = np.clip(np.searchsorted(cum, u, side="left"), 1, grid.n)
        x = edges[j - 1] + (u - cum[j - 1]) / (cum[j] - cum[j - 1]) * h
        return ParticleMeasure.uniform(reduce_mod(x), 1)
    cum = np.cumsum(sigma.cell_masses().ravel())
    cum /= cum[-1]
    cells = np.minimum(np.searchsorted(cum, u, side="right"), grid.size - 1)
    idx = np.stack(np.unravel_index(cells, grid.shape), axis=-1)
    jitter = rng.uniform(-0.5, 0.5, size=idx.shape)
    return ParticleMeasure.uniform(reduce_mod((idx + jitter) * h), grid.dim)


def particles_to_grid(sigma: ParticleMeasure, grid: TorusGrid,
                      bandwidth: float = None) -> GridMeasure:
    """Cloud-in-cell deposit, optionally smoothed by a periodic Gaussian.

    ``bandwidth`` is the Gaussian standard deviation in radians; None or 0
    gives the bare multilinear deposit.
    """
    if sigma.dim != grid.dim:
        raise ValueError("measure and grid dimensions differ")
    h = grid.spacing
    s = sigma.points / h
    base = np.floor(s)
    frac = s - base
    idx = base.astype(np.int64) % grid.n
    mass = np.zeros(grid.size)
    for offs in np.ndindex(*([2] * grid.dim)):
        offs = np.asarray(offs)
        w = np.prod(np.where(offs == 1, frac, 1.0 - frac), axis=-1)
        flat = np.ravel_multi_index(tuple(((idx + offs) % grid.n).T), grid.shape)
        mass += np.bincount(flat, weights=w * sigma.weights, minlength=grid.size)
    mass = mass.reshape(grid.shape)
    if bandwidth:
        ks = grid.frequencies()
        k2 = sum(k * k for k in ks)
        mass = np.real(np.fft.ifftn(np.fft.fftn(mass) * np.exp(-0.5 * bandwidth**2 * k2)))
        mass = np.maximum(mass, 0.0)
    return GridMeasure.normalized(grid, mass / grid.cell_volume)


__all__ = [
    "ParticleMeasure", "PhaseParticleMeasure", "GridMeasure", "GraphDistance",
    "TransportPlan", "SpaceTimeTest", "lift_graph", "pushforward_flow", "project",
    "pushforward_map", "graph_distance", "graph_distance_report", "w1_circle",
    "sinkhorn", "time_bump", "momentum_bump", "test_battery", "continuity_residual",
    "liouville_residual", "face_velocities", "advect_density_upwind",
    "grid_to_particles", "particles_to_grid",
]
