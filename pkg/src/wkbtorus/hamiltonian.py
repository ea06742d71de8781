"""Classical mechanics of H(x, p) = |p|^2 / 2m + V(x) on the torus.

Potentials are real trigonometric polynomials, so values, gradients and
Hessians are available in closed form at any point.  A sampled potential is
turned into one through its discrete Fourier coefficients, which is exact for
band-limited samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .grid import (
    ScalarField,
    TorusGrid,
    VectorField,
    as_points,
    make_grid,
    reduce_mod,
)


@dataclass(frozen=True)
class Potential:
    """V(x) = Re sum_m a_m exp(i k_m . x).

    ``wavevectors`` is an integer array of shape (M, dim) and ``coefficients``
    a complex array of shape (M,).  Taking the real part keeps V real for any
    coefficients, so conjugate pairs need not be listed.
    """

    dim: int
    wavevectors: np.ndarray = field(repr=False)
    coefficients: np.ndarray = field(repr=False)
    name: str = "custom"

    def __post_init__(self):
        k = np.asarray(self.wavevectors, dtype=float).reshape(-1, self.dim)
        a = np.asarray(self.coefficients, dtype=complex).reshape(-1)
        if k.shape[0] != a.shape[0]:
            raise ValueError("one coefficient per wavevector required")
        if not np.all(np.isfinite(a)):
            raise ValueError("potential coefficients must be finite")
        if np.any(k != np.round(k)):
            raise ValueError("wavevectors must be integer (periodicity)")
        object.__setattr__(self, "wavevectors", k)
        object.__setattr__(self, "coefficients", a)

    # -- constructors ------------------------------------------------------
    @classmethod
    def zero(cls, dim: int = 1) -> "Potential":
        return cls(dim, np.zeros((0, dim)), np.zeros(0), name="zero")

    @classmethod
    def cosine(cls, amplitude: float = 1.0, dim: int = 1, weights=None) -> "Potential":
        """amplitude * sum_i w_i cos(x_i); default weights (1,) in 1D, (1, 1/2) in 2D."""
        if weights is None:
            weights = (1.0,) if dim == 1 else (1.0, 0.5)
        ks = np.eye(dim)
        return cls(dim, ks, amplitude * np.asarray(weights, dtype=float), name="cosine")

    @classmethod
    def two_mode(cls, amplitudes=(1.0, 0.3), phases=(0.0, 0.0)) -> "Potential":
        """a1 cos(x + phi1) + a2 cos(2x + phi2) on the circle."""
        a = np.asarray(amplitudes, dtype=float) * np.exp(1j * np.asarray(phases, dtype=float))
        return cls(1, np.array([[1.0], [2.0]]), a, name="two-mode")

    @classmethod
    def from_field(cls, f: ScalarField) -> "Potential":
        """Trigonometric interpolant of sampled values (exact at the nodes)."""
        grid = f.grid
        c = np.fft.fftn(f.values) / grid.size
        ks = np.stack([k.ravel() for k in grid.frequencies()], axis=-1)
        c = c.ravel()
        keep = np.abs(c) > 1e-15 * max(1.0, np.abs(c).max())
        ks, c = ks[keep], c[keep]
        return cls(grid.dim, ks, c, name="sampled")

    # -- evaluation --------------------------------------------------------
    def _phases(self, pts):
        return np.exp(1j * pts @ self.wavevectors.T)

    def __call__(self, x):
        pts = as_points(x, self.dim)
        if self.coefficients.size == 0:
            return np.zeros(pts.shape[0])
        return np.real(self._phases(pts) @ self.coefficients)

    def gradient(self, x):
        """Shape (P, dim)."""
        pts = as_points(x, self.dim)
        if self.coefficients.size == 0:
            return np.zeros_like(pts)
        e = self._phases(pts) * self.coefficients
        return np.real(1j * e @ self.wavevectors)

    def hessian(self, x):
        """Shape (P, dim, dim)."""
        pts = as_points(x, self.dim)
        if self.coefficients.size == 0:
            return np.zeros((pts.shape[0], self.dim, self.dim))
        e = self._phases(pts) * self.coefficients
        kk = self.wavevectors[:, :, None] * self.wavevectors[:, None, :]
        return -np.real(np.einsum("pm,mij->pij", e, kk))

    def derivatives(self, x):
        """Gradient (P, dim) and Hessian (P, dim, dim) from one phase evaluation."""
        pts = as_points(x, self.dim)
        if self.coefficients.size == 0:
            return np.zeros_like(pts), np.zeros((pts.shape[0], self.dim, self.dim))
        e = self._phases(pts) * self.coefficients
        grad = np.real(1j * e @ self.wavevectors)
        kk = self.wavevectors[:, :, None] * self.wavevectors[:, None, :]
        hess = -np.real(np.einsum("pm,mij->pij", e, kk))
        return grad, hess

    def sample(self, grid: TorusGrid) -> ScalarField:
        return ScalarField(grid, self(grid.nodes()).reshape(grid.shape))

    def gradient_field(self, grid: TorusGrid) -> VectorField:
        g = self.gradient(grid.nodes())
        return VectorField(grid, np.moveaxis(g, -1, 0).reshape((grid.dim,) + grid.shape))

    @property
    def is_separable(self) -> bool:
        """True when every mode depends on a single coordinate."""
        return bool(np.all(np.count_nonzero(self.wavevectors, axis=1) <= 1))

    def bounds(self):
        """(sup |grad V|, sup ||Hess V||, oscillation) upper bounds from coefficients."""
        a = np.abs(self.coefficients)
        kn = np.sqrt(np.sum(self.wavevectors**2, axis=1))
        return float(np.sum(a * kn)), float(np.sum(a * kn**2)), float(2 * np.sum(a))


def _argmax_search(V: Potential):
    n = 2048 if V.dim == 1 else 256
    grid = make_grid(V.dim, n)
    nodes = grid.nodes()
    vals = V(nodes)
    best = nodes[int(np.argmax(vals))]
    if V.coefficients.size == 0:
        return best, 0.0
    res = optimize.minimize(
        lambda z: -V(z)[0],
        best,
        jac=lambda z: -V.gradient(z)[0],
        method="BFGS",
        options={"gtol": 1e-13},
    )
    cand = reduce_mod(res.x) if res.fun <= -vals.max() else best
    return cand, float(V(cand)[0])


def critical_value(V: Potential) -> float:
    """c[0] = max V for the mechanical Hamiltonian (refined grid + local polish)."""
    return _argmax_search(V)[1]


def potential_argmax(V: Potential) -> np.ndarray:
    return _argmax_search(V)[0]


def ham_eval(x, p, V: Potential, m: float = 1.0):
    p = as_points(p, V.dim)
    return np.sum(p * p, axis=-1) / (2.0 * m) + V(x)


def lagrangian_eval(x, xi, V: Potential, m: float = 1.0):
    xi = as_points(xi, V.dim)
    return 0.5 * m * np.sum(xi * xi, axis=-1) - V(x)


def verlet_step(x, p, h: float, V: Potential, m: float = 1.0):
    """One kick-drift-kick Stormer-Verlet step; ``h`` may be negative."""
    p_half = p - 0.5 * h * V.gradient(x)
    x_new = x + h * p_half / m
    p_new = p_half - 0.5 * h * V.gradient(x_new)
    return x_new, p_new


def step_count(t: float, step: float) -> int:
    """Number of Verlet steps used for a time span; at least one when t > 0."""
    if step <= 0:
        raise ValueError("step must be positive")
    if t == 0:
        return 0
    return max(1, int(round(abs(t) / step)))


def flow(x, p, t: float, V: Potential, m: float = 1.0, step: float = 1e-3,
         reduce: bool = True):
    """Approximate phi_H^t(x, p) by Stormer-Verlet.

    The step actually used is t / round(t / step) so the endpoint is hit
    exactly.  Inputs may hold many phase points (arrays of shape (P, dim)).
    Positions are returned reduced mod 2 pi unless ``reduce`` is False, in
    which case they live on the universal cover.
    """
    dim = V.dim
    xs = as_points(x, dim).copy()
    ps = as_points(p, dim).copy()
    n = step_count(t, step)
    h = t / n if n else 0.0
    for _ in range(n):
        xs, ps = verlet_step(xs, ps, h, V, m)
    return (reduce_mod(xs) if reduce else xs), ps


def trajectory(x, p, t: float, V: Potential, m: float = 1.0, step: float = 1e-3):
    """Full Verlet trajectory: times (n+1,), positions and momenta (n+1, P, dim).

    Positions stay on the universal cover so that velocities and actions can
    be read off without unwrapping.
    """
    dim = V.dim
    xs = as_points(x, dim).copy()
    ps = as_points(p, dim).copy()
    n = step_count(t, step)
    h = t / n if n else 0.0
    X = np.empty((n + 1,) + xs.shape)
    P = np.empty((n + 1,) + ps.shape)
    X[0], P[0] = xs, ps
    for i in range(n):
        xs, ps = verlet_step(xs, ps, h, V, m)
        X[i + 1], P[i + 1] = xs, ps
    return np.linspace(0.0, t, n + 1), X, P


def flow_graph_map(x, S, t: float, V: Potential, m: float = 1.0, step: float = 1e-3,
                   check_domain: bool = True):
    """Psi^t(x) = position of the flow started on the graph of grad S+.

    ``S`` is a :class:`~wkbtorus.weak_kam.WeakKamSolution`.  Raises
    ParticleOutsideDomain for starting points outside its mask.
    """
    pts = as_points(x, S.grid.dim)
    if check_domain:
        S.require_in_domain(pts)
    p0 = S.gradient_at(pts)
    xt, _ = flow(pts, p0, t, V, m, step)
    return xt
