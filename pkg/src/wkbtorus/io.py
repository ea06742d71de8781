"""CSV and JSON serialisation of fields and measures.

CSV layouts (header row first, floats written with 17 significant digits):

* scalar field: ``x[,y],value``; vector field: ``x[,y],v0[,v1]``
* particle measure: ``x[,y],w``; phase measure: ``x[,y],p0[,p1],w``
* grid measure: ``x[,y],density``

The JSON form of a field or grid measure is
``{"kind", "dim", "points_per_dim", "values"}`` with values flattened
row-major; measures use ``{"kind", "dim", "points", "weights"[, "momenta"]}``.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .grid import ScalarField, VectorField, make_grid
from .measures import GridMeasure, ParticleMeasure, PhaseParticleMeasure

FMT = "%.17g"


def _coord_names(dim):
    return ["x", "y"][:dim]


def write_table(path, header, columns):
    """Write equally long columns to CSV with a fixed float format."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = [np.asarray(c) for c in columns]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([_fmt(v) for v in row])
    return path


def write_rows(path, rows):
    """Write a list of dicts (long format) to CSV; keys of the first row are the header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in header])
    return path


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FMT % float(v)
    return str(v)


def read_table(path):
    """Header and float array of a numeric CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    return header, data.reshape(-1, len(header))


# fields ----------------------------------------------------------------------


def field_to_csv(field, path, mask=None):
    grid = field.grid
    nodes = grid.nodes()
    cols = [nodes[:, i] for i in range(grid.dim)]
    header = _coord_names(grid.dim)
    if isinstance(field, VectorField):
        for i in range(grid.dim):
            cols.append(field.components[i].ravel())
            header.append(f"v{i}")
    else:
        cols.append(np.asarray(field.values).ravel())
        header.append("value")
    if mask is not None:
        cols.append(np.asarray(mask).ravel().astype(int))
        header.append("mask")
    return write_table(path, header, cols)


def field_to_json(field) -> dict:
    return {
        "kind": "vector" if isinstance(field, VectorField) else "scalar",
        "dim": field.grid.dim,
        "points_per_dim": field.grid.n,
        "values": (field.components if isinstance(field, VectorField)
                   else field.values).ravel().tolist(),
    }


def field_from_json(d):
    grid = make_grid(d["dim"], d["points_per_dim"])
    vals = np.asarray(d["values"], dtype=float)
    if d["kind"] == "vector":
        return VectorField(grid, vals.reshape((grid.dim,) + grid.shape))
    return ScalarField(grid, vals)


# measures --------------------------------------------------------------------


def measure_to_csv(mu, path):
    names = _coord_names(getattr(mu, "dim", None) or mu.grid.dim)
    if isinstance(mu, GridMeasure):
        nodes = mu.grid.nodes()
        return write_table(path, names + ["density"],
                           [nodes[:, i] for i in range(mu.grid.dim)] + [mu.density.ravel()])
    cols = [mu.points[:, i] for i in range(mu.dim)]
    header = list(names)
    if isinstance(mu, PhaseParticleMeasure):
        cols += [mu.momenta[:, i] for i in range(mu.dim)]
        header += [f"p{i}" for i in range(mu.dim)]
    return write_table(path, header + ["w"], cols + [mu.weights])


def measure_from_csv(path):
    """Inverse of :func:`measure_to_csv`; the header decides the measure type."""
    header, data = read_table(path)
    dim = sum(1 for h in header if h in ("x", "y"))
    if header[-1] == "density":
        n = int(round(len(data) ** (1.0 / dim)))
        return GridMeasure(make_grid(dim, n), data[:, -1])
    w = data[:, -1]
    w = w / w.sum()
    if any(h.startswith("p") for h in header):
        return PhaseParticleMeasure(data[:, :dim], data[:, dim:2 * dim], w, dim)
    return ParticleMeasure(data[:, :dim], w, dim)


def measure_to_json(mu) -> dict:
    if isinstance(mu, GridMeasure):
        return {"kind": "grid", "dim": mu.grid.dim, "points_per_dim": mu.grid.n,
                "values": mu.density.ravel().tolist()}
    d = {"kind": "particles", "dim": mu.dim, "points": mu.points.tolist(),
         "weights": mu.weights.tolist()}
    if isinstance(mu, PhaseParticleMeasure):
        d["kind"] = "phase"
        d["momenta"] = mu.momenta.tolist()
    return d


def measure_from_json(d):
    if d["kind"] == "grid":
        return GridMeasure(make_grid(d["dim"], d["points_per_dim"]), d["values"])
    if d["kind"] == "phase":
        return PhaseParticleMeasure(d["points"], d["momenta"], d["weights"], d["dim"])
    return ParticleMeasure(d["points"], d["weights"], d["dim"])


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")
