"""WKB initial data and split-step propagation of the Schrodinger equation.

    i hbar d_t psi = -(hbar^2 / 2m) Laplace psi + V psi    on the torus.

The amplitude of the WKB state a e^{i S+/hbar} is taken independent of hbar:
a = sqrt(rho) where rho is the initial density after removing a neighbourhood
of the cut locus of S+ with a smooth window.  Wave functions are normalised
with the nodal quadrature sum |psi_j|^2 h^n = 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import EmptySupport, ResolutionError
from .grid import TWO_PI, TorusGrid, interpolate_periodic
from .hamiltonian import Potential
from .measures import GridMeasure, w1_circle

NORM_TOL = 1e-10


@dataclass(frozen=True)
class WaveFunction:
    grid: TorusGrid
    values: np.ndarray = field(repr=False)
    hbar: float
    mass: float = 1.0

    def __post_init__(self):
        if self.hbar <= 0 or self.mass <= 0:
            raise ValueError("hbar and mass must be positive")
        v = np.asarray(self.values, dtype=complex)
        if v.size != self.grid.size:
            raise ValueError(f"{v.size} amplitudes for a grid of {self.grid.size} nodes")
        v = v.reshape(self.grid.shape).copy()
        if not np.all(np.isfinite(v)):
            raise ValueError("amplitudes must be finite")
        nrm = np.sum(np.abs(v) ** 2) * self.grid.cell_volume
        if abs(nrm - 1.0) > NORM_TOL:
            raise ValueError(f"wave function has squared norm {nrm:.12g}, expected 1")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def normalized(cls, grid, values, hbar, mass=1.0) -> "WaveFunction":
        v = np.asarray(values, dtype=complex).reshape(grid.shape)
        nrm = np.sqrt(np.sum(np.abs(v) ** 2) * grid.cell_volume)
        if nrm == 0:
            raise ValueError("cannot normalise the zero function")
        return cls(grid, v / nrm, hbar, mass)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * self.grid.cell_volume))

    def density(self) -> GridMeasure:
        return GridMeasure.normalized(self.grid, np.abs(self.values) ** 2)

    def with_values(self, values) -> "WaveFunction":
        return WaveFunction(self.grid, values, self.hbar, self.mass)


@dataclass(frozen=True)
class WkbConfig:
    """Construction knobs for a sqrt(rho) e^{i S / hbar} state.

    Attributes
    ----------
    hbar : float
    mask_margin : int
        Number of nodes (of the weak KAM grid) removed around every node
        outside the differentiability mask.
    mollifier_bandwidth : float
        Width in radians of the smooth transition of the trimming window.
    amplitude_floor : float
        Amplitudes below this fraction of the maximum are set to zero.
    points_per_wavelength : float
        Minimum number of nodes per local wavelength 2 pi hbar / |grad S|.
    """

    hbar: float
    mask_margin: int = 2
    mollifier_bandwidth: float = 0.1
    amplitude_floor: float = 0.0
    points_per_wavelength: float = 8.0

    def __post_init__(self):
        if self.hbar <= 0:
            raise ValueError("hbar must be positive")
        if self.mask_margin < 1:
            raise ValueError("mask_margin must be >= 1")
        if self.mollifier_bandwidth <= 0:
            raise ValueError("mollifier_bandwidth must be positive")
        if self.amplitude_floor < 0:
            raise ValueError("amplitude_floor must be nonnegative")


@dataclass(frozen=True)
class WkbState:
    """A WKB wave function together with the trimmed density it encodes."""

    psi: WaveFunction
    trimmed: GridMeasure
    window: np.ndarray = field(repr=False)
    trim_w1: float
    removed_mass: float


def smooth_step(u):
    """C-infinity step: 0 for u <= 0, 1 for u >= 1."""
    u = np.asarray(u, dtype=float)

    def e(s):
        return np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)

    a, b = e(u), e(1.0 - u)
    return a / (a + b)


def _eroded_mask(S, margin):
    bad = ~np.asarray(S.diff_mask, dtype=bool)
    grown = bad.copy()
    for ax in range(S.grid.dim):
        for s in range(1, margin + 1):
            grown |= np.roll(bad, s, axis=ax) | np.roll(bad, -s, axis=ax)
    return ~grown


def _periodic_distance(inside, spacing):
    """Distance (radians) from each node to the nearest node where ``inside`` is False."""
    if inside.all():
        return np.full(inside.shape, np.inf)
    reps = (3,) * inside.ndim
    tiled = np.tile(inside, reps)
    d = ndimage.distance_transform_edt(tiled)
    sl = tuple(slice(n, 2 * n) for n in inside.shape)
    return d[sl] * spacing


def trimming_window(grid: TorusGrid, S, cfg: WkbConfig) -> np.ndarray:
    """Smooth window on ``grid`` vanishing outside the eroded domain of grad S+."""
    eroded = _eroded_mask(S, cfg.mask_margin)
    if eroded.all():
        return np.ones(grid.shape)
    if S.grid == grid:
        inside = eroded
    else:
        from .grid import corner_indices

        corners = corner_indices(S.grid, grid.nodes())
        inside = np.all(eroded.ravel()[corners], axis=-1).reshape(grid.shape)
    dist = _periodic_distance(inside, grid.spacing)
    return smooth_step(dist / cfg.mollifier_bandwidth)


def phase_values(grid: TorusGrid, S) -> np.ndarray:
    """S+ at the nodes of ``grid`` (multilinear interpolation across grids)."""
    if S.grid == grid:
        return np.asarray(S.values, dtype=float)
    return interpolate_periodic(S.as_field, grid.nodes()).reshape(grid.shape)


def _trimmed_amplitude(sigma0: GridMeasure, S, cfg: WkbConfig):
    grid = sigma0.grid
    window = trimming_window(grid, S, cfg)
    rho = sigma0.density * window
    kept = rho.sum() * grid.cell_volume
    if kept <= 1e-14:
        raise EmptySupport("trimming around the cut locus removed all of the mass")
    amp = np.sqrt(rho / kept)
    if cfg.amplitude_floor > 0:
        amp = np.where(amp < cfg.amplitude_floor * amp.max(), 0.0, amp)
    return amp, window, kept


def trimmed_density(sigma0: GridMeasure, S, cfg: WkbConfig) -> GridMeasure:
    """|a|^2 of the WKB amplitude; does not depend on hbar and never checks resolution."""
    amp, _, _ = _trimmed_amplitude(sigma0, S, cfg)
    return GridMeasure.normalized(sigma0.grid, amp**2)


def build_wkb(sigma0: GridMeasure, S, cfg: WkbConfig, mass: float = None) -> WkbState:
    """Trim, renormalise and attach the phase; see :func:`wkb_initial`."""
    grid = sigma0.grid
    mass = S.mass if mass is None else mass
    amp, window, kept = _trimmed_amplitude(sigma0, S, cfg)
    support = amp > 0
    grads = S.gradient_at(grid.nodes()[support.ravel()])
    pmax = float(np.max(np.linalg.norm(grads, axis=-1))) if grads.size else 0.0
    if pmax > 0:
        ppw = TWO_PI * cfg.hbar / pmax / grid.spacing
        if ppw < cfg.points_per_wavelength:
            raise ResolutionError(
                f"{ppw:.2f} nodes per phase wavelength at hbar={cfg.hbar:g}; "
                f"need {cfg.points_per_wavelength:g} (refine the grid or raise hbar)"
            )
    psi = WaveFunction.normalized(grid, amp * np.exp(1j * phase_values(grid, S) / cfg.hbar),
                                  cfg.hbar, mass)
    trimmed = GridMeasure.normalized(grid, amp**2)
    if grid.dim == 1:
        trim_w1 = w1_circle(sigma0, trimmed)
    else:
        # W1 <= (moved mass) * diameter of the torus
        trim_w1 = float(np.sum(np.abs(sigma0.density - trimmed.density)) * grid.cell_volume
                        / 2 * np.pi * np.sqrt(grid.dim))
    return WkbState(psi, trimmed, window, float(trim_w1), float(1.0 - kept))


def wkb_initial(sigma0: GridMeasure, S, cfg: WkbConfig, mass: float = None) -> WaveFunction:
    """phi = a e^{i S+ / hbar} with a = sqrt of the trimmed initial density.

    ``sigma0`` lives on the quantum grid; S+ may live on a coarser grid and
    is interpolated.  Raises EmptySupport when nothing survives the trimming
    and ResolutionError when the phase is under-resolved.
    """
    return build_wkb(sigma0, S, cfg, mass).psi


def hbar_gradient_norm(psi_or_amp, grid: TorusGrid, hbar: float) -> float:
    """||hbar grad a||_{L^2} by spectral differentiation of the modulus."""
    a = np.abs(np.asarray(getattr(psi_or_amp, "values", psi_or_amp)))
    c = np.fft.fftn(a)
    tot = 0.0
    for k in grid.frequencies():
        d = np.fft.ifftn(1j * k * c)
        tot += np.sum(np.abs(d) ** 2)
    return float(hbar * np.sqrt(tot * grid.cell_volume))


# ---------------------------------------------------------------------------
# propagation


class StrangPropagator:
    """e^{-i V dt / 2 hbar} e^{-i hbar |k|^2 dt / 2m} e^{-i V dt / 2 hbar} with cached factors."""

    def __init__(self, grid: TorusGrid, V: Potential, hbar: float, mass: float, dt: float):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.grid, self.hbar, self.mass, self.dt = grid, hbar, mass, dt
        self.half_potential = np.exp(-0.5j * dt * V.sample(grid).values / hbar)
        k2 = sum(k * k for k in grid.frequencies())
        self.kinetic = np.exp(-0.5j * hbar * dt * k2 / mass)

    def step_values(self, v, nsteps: int = 1):
        for _ in range(nsteps):
            v = self.half_potential * v
            v = np.fft.ifftn(self.kinetic * np.fft.fftn(v))
            v = self.half_potential * v
        return v


def strang_step(psi: WaveFunction, dt: float, V: Potential) -> WaveFunction:
    """One second-order splitting step of length dt."""
    prop = StrangPropagator(psi.grid, V, psi.hbar, psi.mass, dt)
    return psi.with_values(prop.step_values(psi.values))


def _step_count(t, dt):
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = int(round(t / dt))
    if abs(n * dt - t) > 1e-9 * max(1.0, t):
        raise ValueError(f"t={t} is not a multiple of dt={dt}")
    return n


def propagate(psi: WaveFunction, t: float, dt: float, V: Potential) -> WaveFunction:
    """psi(t) = U(t) psi by repeated Strang steps; t must be a multiple of dt."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    n = _step_count(t, dt)
    if n == 0:
        return psi
    prop = StrangPropagator(psi.grid, V, psi.hbar, psi.mass, dt)
    return psi.with_values(prop.step_values(psi.values, n))


def propagate_samples(psi: WaveFunction, times, dt: float, V: Potential):
    """States at each of the increasing sample ``times`` (multiples of dt)."""
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or times[0] < 0:
        raise ValueError("times must be nonnegative and increasing")
    prop = StrangPropagator(psi.grid, V, psi.hbar, psi.mass, dt)
    out = []
    v = psi.values
    done = 0
    for t in times:
        n = _step_count(t, dt)
        v = prop.step_values(v, n - done)
        done = n
        out.append(psi.with_values(v))
    return out


def energy(psi: WaveFunction, V: Potential) -> float:
    """<psi, H psi> with the spectral kinetic energy and nodal quadrature."""
    grid = psi.grid
    c = np.fft.fftn(psi.values) / grid.size
    k2 = sum(k * k for k in grid.frequencies())
    kin = TWO_PI**grid.dim * np.sum(psi.hbar**2 * k2 / (2 * psi.mass) * np.abs(c) ** 2)
    pot = np.sum(V.sample(grid).values * np.abs(psi.values) ** 2) * grid.cell_volume
    return float(kin + pot)
