"""Weyl quantization on the torus, semiclassical pairings and Husimi densities.

The toroidal Weyl quantization of a symbol b(x, xi) is

    Op(b) psi(x) = (2 pi)^-n sum_k int e^{i (x - y).k} b(y, hbar k / 2) psi(2y - x) dy.

On a grid with N nodes per axis the y-integral is the nodal sum and k runs
over the N^n discrete frequencies.  For a symbol b(y, xi) = b_x(y) chi(xi)
and offsets l = i - j this becomes

    Op(b) psi_i = (h / 2 pi)^n sum_l K_l b_x(y_{i-l}) psi_{i-2l},
    K_l = sum_k chi(hbar k / 2) e^{i k x_l},

which is exact for states whose frequencies stay below N/4 in modulus.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import MomentumWindowExceeded, PairingNotReal, WindowTooSmall
from .grid import TWO_PI, ComplexField, TorusGrid
from .hamiltonian import Potential
from .measures import GridMeasure, PhaseParticleMeasure
from .schrodinger import WaveFunction

# ---------------------------------------------------------------------------
# symbols


@dataclass(frozen=True)
class MomentumProfile:
    """Compactly supported smooth chi(xi) in R^n.

    ``kind`` is one of
      "constant"  chi = 1 (unbounded support; only for tests)
      "plateau"   1 on |xi - center| <= radius, smooth decay to 0 at radius + width
      "bump"      exp(1 - 1/(1 - r^2)) with r = |xi - center| / radius
    """

    kind: str = "plateau"
    radius: float = 3.0
    width: float = 1.0
    center: tuple = (0.0,)

    def __post_init__(self):
        if self.kind not in ("constant", "plateau", "bump"):
            raise ValueError(f"unknown momentum profile {self.kind!r}")
        if self.radius <= 0 or self.width <= 0:
            raise ValueError("radius and width must be positive")

    @property
    def support_radius(self) -> float:
        """Largest |xi| where chi can be nonzero."""
        c = float(np.linalg.norm(self.center))
        if self.kind == "constant":
            return np.inf
        if self.kind == "plateau":
            return c + self.radius + self.width
        return c + self.radius

    def __call__(self, xi):
        xi = np.asarray(xi, dtype=float)
        if self.kind == "constant":
            return np.ones(xi.shape[:-1])
        dim = xi.shape[-1]
        center = np.zeros(dim)
        center[: len(self.center)] = self.center[:dim]
        r = np.linalg.norm(xi - center, axis=-1)
        if self.kind == "plateau":
            from .schrodinger import smooth_step

            return smooth_step((self.radius + self.width - r) / self.width)
        s = r / self.radius
        q = np.where(s < 1, 1.0 - s * s, 1.0)
        return np.where(s < 1, np.exp(1.0 - 1.0 / q), 0.0)


@dataclass(frozen=True)
class TestSymbol:
    """phi(x, xi) = Re sum_q c_q e^{i q.x} chi(xi).

    Taking the real part keeps phi real for any complex coefficients.
    """

    __test__ = False  # not a pytest class

    modes: np.ndarray = field(repr=False)
    coefficients: np.ndarray = field(repr=False)
    profile: MomentumProfile = MomentumProfile()
    name: str = ""

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.modes, dtype=float))
        c = np.asarray(self.coefficients, dtype=complex).reshape(-1)
        if q.shape[0] != c.shape[0]:
            raise ValueError("one coefficient per spatial mode required")
        if np.any(q != np.round(q)):
            raise ValueError("spatial modes must be integer vectors")
        object.__setattr__(self, "modes", q)
        object.__setattr__(self, "coefficients", c)

    @property
    def dim(self) -> int:
        return self.modes.shape[1]

    def spatial(self, x):
        """Re sum_q c_q e^{i q.x} at points of shape (P, dim)."""
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        return np.real(np.exp(1j * x @ self.modes.T) @ self.coefficients)

    def __call__(self, x, xi):
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        xi = np.asarray(xi, dtype=float).reshape(-1, self.dim)
        return self.spatial(x) * self.profile(xi)


def cos_symbol(q, profile: MomentumProfile) -> TestSymbol:
    q = np.atleast_1d(q)
    return TestSymbol(q[None, :], [1.0], profile, name=f"cos{tuple(int(v) for v in q)}")


def sin_symbol(q, profile: MomentumProfile) -> TestSymbol:
    q = np.atleast_1d(q)
    return TestSymbol(q[None, :], [-1j], profile, name=f"sin{tuple(int(v) for v in q)}")


def shell_profile(V: Potential, m: float = 1.0, c0: float = None,
                  margin: float = 1.0, width: float = 1.0) -> MomentumProfile:
    """Plateau equal to 1 on |xi| <= sqrt(2 m (c0 - min V)) + margin."""
    from .hamiltonian import critical_value

    c0 = critical_value(V) if c0 is None else c0
    g = np.linspace(0, TWO_PI, 257)[:-1]
    mesh = np.stack([m_.ravel() for m_ in np.meshgrid(*([g] * V.dim), indexing="ij")], -1)
    vmin = float(V(mesh).min()) - 1e-6
    r = np.sqrt(2 * m * max(c0 - vmin, 0.0)) + margin
    return MomentumProfile("plateau", r, width, (0.0,) * V.dim)


def symbol_battery(dim: int, profile: MomentumProfile, qmax: int = 3):
    """cos(q.x) chi(xi) and sin(q.x) chi(xi) for |q| <= qmax, one per +/- pair."""
    out = []
    seen = set()
    for idx in np.ndindex(*([2 * qmax + 1] * dim)):
        q = tuple(int(v) - qmax for v in idx)
        if sum(v * v for v in q) > qmax * qmax or tuple(-v for v in q) in seen:
            continue
        seen.add(q)
        qa = np.asarray(q, dtype=float)
        out.append(cos_symbol(qa, profile))
        if any(q):
            out.append(sin_symbol(qa, profile))
    return out


# ---------------------------------------------------------------------------
# quantization


def _weyl_kernel(grid: TorusGrid, profile: MomentumProfile, hbar: float):
    """K_l = sum_k chi(hbar k / 2) e^{i k x_l} on the grid offsets l."""
    ks = grid.frequencies()
    xi = 0.5 * hbar * np.stack(ks, axis=-1).astype(float)
    chi = profile(xi.reshape(-1, grid.dim)).reshape(grid.shape)
    return np.fft.ifftn(chi) * grid.size


def check_momentum_window(grid: TorusGrid, profile: MomentumProfile, hbar: float):
    """The symbol must vanish before xi reaches the largest representable hbar k / 2."""
    limit = 0.5 * hbar * (grid.n // 2 - 1)
    if profile.support_radius > limit:
        raise MomentumWindowExceeded(
            f"symbol support |xi| <= {profile.support_radius:g} exceeds the grid "
            f"window {limit:g} at hbar={hbar:g}"
        )


def weyl_quantize_apply(b: TestSymbol, psi: WaveFunction, check_window: bool = True) -> ComplexField:
    """Op^w_hbar(b) psi by direct evaluation of the toroidal Weyl sum.

    Cost O(N^{2n}) per spatial mode; each offset l contributes one shifted
    product over all nodes.  The 2y - x argument always lands on a node.
    """
    grid = psi.grid
    if b.dim != grid.dim:
        raise ValueError("symbol and wave function dimensions differ")
    if check_window and b.profile.kind != "constant":
        check_momentum_window(grid, b.profile, psi.hbar)
    n = grid.n
    K = _weyl_kernel(grid, b.profile, psi.hbar)
    bx = b.spatial(grid.nodes()).reshape(grid.shape)
    u = psi.values
    out = np.zeros(grid.shape, dtype=complex)
    pref = (grid.spacing / TWO_PI) ** grid.dim
    for l in np.ndindex(*grid.shape):
        kl = K[l]
        if kl == 0:
            continue
        # b_x(y_{i-l}) psi_{i-2l}
        sh1 = tuple(l)
        sh2 = tuple((2 * v) % n for v in l)
        out += kl * np.roll(bx, sh1, axis=tuple(range(grid.dim))) * \
            np.roll(u, sh2, axis=tuple(range(grid.dim)))
    return ComplexField(grid, pref * out)


def pairing(psi: WaveFunction, phi: TestSymbol, imag_tol: float = 1e-8) -> float:
    """<psi, Op^w(phi) psi> with nodal quadrature; raises PairingNotReal if not real."""
    val = np.sum(np.conj(psi.values) * weyl_quantize_apply(phi, psi).values) * psi.grid.cell_volume
    if abs(val.imag) > imag_tol:
        raise PairingNotReal(f"pairing has imaginary part {val.imag:.3e}")
    return float(val.real)


def classical_pairing(phi: TestSymbol, omega: PhaseParticleMeasure) -> float:
    """sum_i w_i phi(x_i, p_i)."""
    return float(np.sum(omega.weights * phi(omega.points, omega.momenta)))


# ---------------------------------------------------------------------------
# Husimi densities


@dataclass(frozen=True)
class HusimiField:
    """Husimi density on the x-grid times the lattice hbar * k, |hbar k| <= p_max.

    ``values[..., j]`` belongs to momentum ``momenta[j]`` (shape (K, dim)).
    ``mass`` is sum(values) * h^n * hbar^n.
    """

    grid: TorusGrid
    hbar: float
    momenta: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    mass: float

    def position_density(self) -> np.ndarray:
        return self.values.sum(axis=-1) * self.hbar**self.grid.dim

    def momentum_density(self) -> np.ndarray:
        axes = tuple(range(self.grid.dim))
        return self.values.sum(axis=axes) * self.grid.cell_volume


def husimi(psi: WaveFunction, p_window: float, min_mass: float = 0.99) -> HusimiField:
    """H(x0, p0) = |<g_{x0,p0}, psi>|^2 / (2 pi hbar)^n for p0 in hbar Z^n, |p0| <= p_window.

    g is the periodised Gaussian coherent state of width sqrt(hbar),
    (pi hbar)^{-n/4} sum_nu exp(-|x - x0 - 2 pi nu|^2 / 2 hbar + i p0.(x - x0) / hbar).
    The overlap is computed from the Fourier coefficients c_j of psi,

        <g, psi> = (pi hbar)^{-n/4} (2 pi hbar)^{n/2} sum_j c_j e^{-hbar |j - k|^2 / 2} e^{i j.x0},

    which includes every periodic image.  Raises WindowTooSmall when the
    window captures less than ``min_mass`` of the total.
    """
    grid = psi.grid
    hbar = psi.hbar
    dim = grid.dim
    kmax = int(np.floor(p_window / hbar))
    c = np.fft.fftn(psi.values) / grid.size
    freqs = np.stack(grid.frequencies(), axis=-1).astype(float)
    ks = np.array([k for k in np.ndindex(*([2 * kmax + 1] * dim))], dtype=float) - kmax
    ks = ks[np.linalg.norm(ks, axis=-1) * hbar <= p_window + 1e-12]
    pref = (np.pi * hbar) ** (-dim / 4) * (TWO_PI * hbar) ** (dim / 2)
    vals = np.empty(grid.shape + (len(ks),))
    for j, k in enumerate(ks):
        damp = np.exp(-0.5 * hbar * np.sum((freqs - k) ** 2, axis=-1))
        ov = pref * np.fft.ifftn(c * damp) * grid.size
        vals[..., j] = np.abs(ov) ** 2 / (TWO_PI * hbar) ** dim
    mass = float(vals.sum() * grid.cell_volume * hbar**dim)
    if mass < min_mass:
        raise WindowTooSmall(
            f"momentum window |p| <= {p_window:g} holds only {mass:.4f} of the Husimi mass"
        )
    return HusimiField(grid, hbar, ks * hbar, vals, mass)


def husimi_position_marginal(H: HusimiField) -> GridMeasure:
    """Position density of a Husimi field, renormalised to unit mass."""
    return GridMeasure.normalized(H.grid, H.position_density())


def husimi_tube_mass(H: HusimiField, S, width: float) -> float:
    """Fraction of Husimi mass with |p - grad S+(x)| <= width."""
    gradS = S.gradient_at(H.grid.nodes()).reshape(H.grid.shape + (H.grid.dim,))
    dist = np.linalg.norm(gradS[..., None, :] - H.momenta, axis=-1)
    inside = np.where(dist <= width, H.values, 0.0).sum()
    return float(inside / H.values.sum())


__all__ = [
    "MomentumProfile", "TestSymbol", "HusimiField", "cos_symbol", "sin_symbol",
    "shell_profile", "symbol_battery", "weyl_quantize_apply", "pairing",
    "classical_pairing", "husimi", "husimi_position_marginal", "husimi_tube_mass",
    "check_momentum_window",
]
