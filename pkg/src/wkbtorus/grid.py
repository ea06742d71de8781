"""Uniform periodic grids on the flat torus (R / 2 pi Z)^n, n in {1, 2}.

Spectral normalization
----------------------
``spectral_transform(f, "forward")`` returns

    c_k = N^-d * sum_j f_j exp(-i k . x_j),

so the constant field 1 has coefficient 1 at k = 0, and the inverse is the
plain Fourier sum f_j = sum_k c_k exp(i k . x_j).  Parseval then reads
``mean(|f|^2) == sum(|c|^2)``.  Coefficients are stored in numpy FFT order;
``frequencies(grid)`` gives the integer wavenumber of each slot, covering
{-N/2, ..., N/2 - 1} per axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import GridError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid with ``points_per_dim`` nodes per axis on [0, 2 pi)^dim."""

    dim: int
    points_per_dim: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise GridError(f"dim must be 1 or 2, got {self.dim}")
        n = self.points_per_dim
        if n < 8 or n & (n - 1):
            raise GridError(f"points_per_dim must be a power of two >= 8, got {n}")

    @property
    def n(self) -> int:
        return self.points_per_dim

    @property
    def spacing(self) -> float:
        return TWO_PI / self.points_per_dim

    @property
    def shape(self) -> tuple:
        return (self.points_per_dim,) * self.dim

    @property
    def size(self) -> int:
        return self.points_per_dim**self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @property
    def axis(self) -> np.ndarray:
        return np.arange(self.points_per_dim) * self.spacing

    def mesh(self) -> tuple:
        """Coordinate arrays, one per axis, each of ``shape``."""
        return np.meshgrid(*([self.axis] * self.dim), indexing="ij")

    def nodes(self) -> np.ndarray:
        """All node coordinates as an array of shape (size, dim), row-major."""
        return np.stack([m.ravel() for m in self.mesh()], axis=-1)

    def frequencies(self) -> tuple:
        """Integer wavenumber arrays (FFT order), one per axis, each of ``shape``."""
        k = np.fft.fftfreq(self.points_per_dim, d=1.0 / self.points_per_dim)
        return np.meshgrid(*([k] * self.dim), indexing="ij")


def make_grid(dim: int, points_per_dim: int) -> TorusGrid:
    return TorusGrid(int(dim), int(points_per_dim))


def reduce_mod(x):
    """Reduce coordinates into [0, 2 pi)."""
    r = np.mod(x, TWO_PI)
    # np.mod can return exactly 2 pi for tiny negative inputs
    return np.where(r >= TWO_PI, 0.0, r)


def torus_displacement(x, y):
    """Signed shortest displacement y - x per axis, in [-pi, pi)."""
    d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
    return np.mod(d + np.pi, TWO_PI) - np.pi


def torus_distance(x, y):
    """Geodesic distance on the flat torus; the last axis indexes coordinates."""
    d = torus_displacement(x, y)
    return np.sqrt(np.sum(d * d, axis=-1))


def as_points(x, dim: int) -> np.ndarray:
    """Coerce scalars / 1-D arrays / (P, dim) arrays into shape (P, dim)."""
    a = np.asarray(x, dtype=float)
    if dim == 1 and a.ndim <= 1:
        return a.reshape(-1, 1)
    a = a.reshape(-1, dim)
    return a


@dataclass(frozen=True)
class _Field:
    grid: TorusGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != self.grid.shape:
            if v.size != self.grid.size:
                raise GridError(
                    f"field has {v.size} values, grid needs {self.grid.size}"
                )
            v = v.reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise GridError("field values must be finite")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class ScalarField(_Field):
    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        super().__post_init__()


@dataclass(frozen=True)
class ComplexField(_Field):
    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=complex))
        super().__post_init__()


@dataclass(frozen=True)
class VectorField:
    """``components`` has shape (dim, *grid.shape)."""

    grid: TorusGrid
    components: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.components, dtype=float)
        want = (self.grid.dim,) + self.grid.shape
        if c.shape != want:
            raise GridError(f"vector field shape {c.shape}, expected {want}")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "components", c)

    def norm(self) -> np.ndarray:
        return np.sqrt(np.sum(self.components**2, axis=0))


AnyField = Union[ScalarField, ComplexField, VectorField]


def sample(grid: TorusGrid, func, complex_valued: bool = False):
    """Evaluate ``func(*coords)`` on the grid nodes."""
    vals = func(*grid.mesh())
    return ComplexField(grid, vals) if complex_valued else ScalarField(grid, vals)


def spectral_transform(field, direction: str = "forward"):
    """Forward: field -> coefficient array.  Inverse: coefficient array -> ComplexField.

    For the inverse direction pass ``(grid, coefficients)`` as a tuple or a
    ComplexField whose values are coefficients.
    """
    if direction == "forward":
        vals = np.asarray(field.values, dtype=complex)
        return np.fft.fftn(vals) / field.grid.size
    if direction == "inverse":
        if isinstance(field, tuple):
            grid, coeffs = field
        else:
            grid, coeffs = field.grid, field.values
        coeffs = np.asarray(coeffs, dtype=complex)
        if coeffs.shape != grid.shape:
            raise GridError(f"coefficient shape {coeffs.shape} != {grid.shape}")
        return ComplexField(grid, np.fft.ifftn(coeffs) * grid.size)
    raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")


def gradient_spectral(field: ScalarField) -> VectorField:
    """Spectral gradient of a smooth periodic field.  The Nyquist mode is dropped."""
    grid = field.grid
    coeffs = np.fft.fftn(field.values)
    n = grid.points_per_dim
    comps = []
    for k in grid.frequencies():
        k = np.where(np.abs(k) == n // 2, 0.0, k)
        comps.append(np.real(np.fft.ifftn(1j * k * coeffs)))
    return VectorField(grid, np.stack(comps))


def _cell_weights(grid: TorusGrid, points: np.ndarray):
    """Lower-corner indices and fractional offsets for multilinear interpolation."""
    s = reduce_mod(points) / grid.spacing
    base = np.floor(s)
    frac = s - base
    idx = base.astype(np.int64) % grid.points_per_dim
    return idx, frac


def corner_indices(grid: TorusGrid, points):
    """Flat node indices of the 2^dim cell corners around each point, shape (P, 2^dim)."""
    pts = as_points(points, grid.dim)
    idx, _ = _cell_weights(grid, pts)
    n = grid.points_per_dim
    corners = []
    for offs in np.ndindex(*([2] * grid.dim)):
        ii = (idx + np.asarray(offs)) % n
        corners.append(np.ravel_multi_index(tuple(ii.T), grid.shape))
    return np.stack(corners, axis=-1)


def interpolate_periodic(field: AnyField, x):
    """Multilinear interpolation with periodic wrap.

    ``x`` is a single point or an array of points of shape (P, dim) (for
    dim = 1 a flat array also works).  Returns shape (P,) for scalar fields
    and (P, dim) for vector fields.
    """
    grid = field.grid
    pts = as_points(x, grid.dim)
    idx, frac = _cell_weights(grid, pts)
    n = grid.points_per_dim
    if isinstance(field, VectorField):
        data = field.components
        flat = data.reshape(grid.dim, -1)
    else:
        data = field.values
        flat = data.reshape(1, -1)
    out = np.zeros((flat.shape[0], pts.shape[0]), dtype=flat.dtype)
    for offs in np.ndindex(*([2] * grid.dim)):
        offs = np.asarray(offs)
        w = np.prod(np.where(offs == 1, frac, 1.0 - frac), axis=-1)
        ii = (idx + offs) % n
        flat_idx = np.ravel_multi_index(tuple(ii.T), grid.shape)
        out += w * flat[:, flat_idx]
    if isinstance(field, VectorField):
        return out.T
    return out[0]
