"""Experiment configuration (JSON, unknown keys rejected).

Example (every key optional; shown values are the defaults)::

    {
      "potential": {"name": "cosine", "amplitude": 1.0},
      "dim": 1, "mass": 1.0,
      "classical_points": 1024, "quantum_points": 4096,
      "weak_kam": {"dt": 0.1, "max_iters": 5000, "tol": 1e-10,
                   "winding_range": 1, "action": "corrected", "mask_tau": null},
      "sigma0": {"kind": "bump", "center": [3.141592653589793], "width": 0.5, "file": null},
      "wkb": {"mask_margin": 2, "mollifier_bandwidth": 0.1, "amplitude_floor": 0.0},
      "hbars": [0.125, 0.0625, 0.03125, 0.015625, 0.0078125],
      "times": [0.0, 0.25, 0.5, 0.75, 1.0],
      "particles": 4096, "flow_step": 0.001, "schrodinger_dt": 0.001,
      "energy_hbar": 0.03125,
      "residuals": {"time_samples": 64, "refine": 2},
      "ot": {"atoms": 48, "path_nodes": 64, "winding_range": 1,
             "cconv_samples": 32, "cconv_targets": 128, "cconv_times": [0.5, 1.0]},
      "cross_solver": {"levels": [256, 512, 1024], "particles": [2048, 4096, 8192],
                       "cfl": 0.5},
      "criteria": [1, 2, 3, 4, 5, 6, 7, 8, 9, 10],
      "output": "out", "seed": 0
    }

Potentials: ``{"name": "zero"}``, ``{"name": "cosine", "amplitude": a}``
(in 2D V = a (cos x + cos y / 2) unless ``"weights"`` is given) and
``{"name": "two-mode", "amplitudes": [a1, a2], "phases": [f1, f2]}`` (1D).
``sigma0.kind`` is "bump" (C-infinity bump of the given width) or
"uniform"; ``sigma0.file`` (a grid-density CSV on the quantum grid) wins
over both.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError
from .hamiltonian import Potential
from .weak_kam import LaxOleinikConfig


@dataclass(frozen=True)
class PotentialSpec:
    name: str = "cosine"
    amplitude: float = 1.0
    weights: Optional[list] = None
    amplitudes: Optional[list] = None
    phases: Optional[list] = None

    def build(self, dim: int) -> Potential:
        if self.name == "zero":
            return Potential.zero(dim)
        if self.name == "cosine":
            return Potential.cosine(self.amplitude, dim, self.weights)
        if self.name == "two-mode":
            if dim != 1:
                raise ConfigError("the two-mode potential is one-dimensional")
            return Potential.two_mode(tuple(self.amplitudes or (1.0, 0.3)),
                                      tuple(self.phases or (0.0, 0.0)))
        raise ConfigError(f"unknown potential {self.name!r}")


@dataclass(frozen=True)
class Sigma0Spec:
    kind: str = "bump"
    center: Optional[list] = None
    width: float = 0.5
    file: Optional[str] = None


@dataclass(frozen=True)
class WkbSpec:
    mask_margin: int = 2
    mollifier_bandwidth: float = 0.1
    amplitude_floor: float = 0.0


@dataclass(frozen=True)
class ResidualSpec:
    time_samples: int = 64
    refine: int = 2


@dataclass(frozen=True)
class OtSpec:
    atoms: int = 48
    path_nodes: int = 64
    winding_range: int = 1
    cconv_samples: int = 32
    cconv_targets: int = 128
    cconv_times: list = field(default_factory=lambda: [0.5, 1.0])


@dataclass(frozen=True)
class CrossSolverSpec:
    levels: list = field(default_factory=lambda: [256, 512, 1024])
    particles: list = field(default_factory=lambda: [2048, 4096, 8192])
    cfl: float = 0.5


@dataclass(frozen=True)
class ExperimentConfig:
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    dim: int = 1
    mass: float = 1.0
    classical_points: int = 1024
    quantum_points: int = 4096
    weak_kam: LaxOleinikConfig = field(default_factory=LaxOleinikConfig)
    sigma0: Sigma0Spec = field(default_factory=Sigma0Spec)
    wkb: WkbSpec = field(default_factory=WkbSpec)
    hbars: list = field(default_factory=lambda: [2.0**-k for k in range(3, 8)])
    times: list = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])
    particles: int = 4096
    flow_step: float = 1e-3
    schrodinger_dt: float = 1e-3
    energy_hbar: float = 2.0**-5
    residuals: ResidualSpec = field(default_factory=ResidualSpec)
    ot: OtSpec = field(default_factory=OtSpec)
    cross_solver: CrossSolverSpec = field(default_factory=CrossSolverSpec)
    criteria: list = field(default_factory=lambda: list(range(1, 11)))
    output: str = "out"
    seed: int = 0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigError("dim must be 1 or 2")
        if self.mass <= 0:
            raise ConfigError("mass must be positive")
        for n in (self.classical_points, self.quantum_points):
            if n < 8 or n & (n - 1):
                raise ConfigError(f"grid sizes must be powers of two >= 8, got {n}")
        if self.quantum_points % self.classical_points and \
                self.classical_points % self.quantum_points:
            raise ConfigError("classical and quantum grids must be nested (ratio a power of two)")
        if not self.hbars or any(h <= 0 for h in self.hbars):
            raise ConfigError("hbars must be a nonempty list of positive numbers")
        t = np.asarray(self.times, dtype=float)
        if t.size == 0 or np.any(t < 0) or np.any(np.diff(t) <= 0):
            raise ConfigError("times must be nonnegative and strictly increasing")
        if self.particles < 1 or self.ot.atoms < 2:
            raise ConfigError("need at least one particle and two OT atoms")
        if len(self.cross_solver.levels) != len(self.cross_solver.particles):
            raise ConfigError("cross_solver levels and particles must have equal length")
        if self.sigma0.kind not in ("bump", "uniform"):
            raise ConfigError(f"sigma0 kind must be 'bump' or 'uniform', got {self.sigma0.kind!r}")
        bad = [c for c in self.criteria if c not in range(1, 11)]
        if bad:
            raise ConfigError(f"unknown criteria {bad}")

    @property
    def potential_obj(self) -> Potential:
        return self.potential.build(self.dim)

    @property
    def sigma0_center(self):
        c = self.sigma0.center
        return np.full(self.dim, np.pi) if c is None else np.asarray(c, dtype=float)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def report_dict(self) -> dict:
        """Config as recorded in reports: the output location is left out."""
        d = self.to_dict()
        d.pop("output")
        return d


_NESTED = {
    "potential": PotentialSpec,
    "weak_kam": LaxOleinikConfig,
    "sigma0": Sigma0Spec,
    "wkb": WkbSpec,
    "residuals": ResidualSpec,
    "ot": OtSpec,
    "cross_solver": CrossSolverSpec,
}


def _strict(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict, **overrides) -> ExperimentConfig:
    data = dict(data)
    data.update({k: v for k, v in overrides.items() if v is not None})
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown}")
    kw = {}
    for k, v in data.items():
        kw[k] = _strict(_NESTED[k], v, k) if k in _NESTED else v
    try:
        return ExperimentConfig(**kw)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path, **overrides) -> ExperimentConfig:
    if path is None:
        return config_from_dict({}, **overrides)
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data, **overrides)
