"""Solve for S+ with V = cos x and compare with the closed form 4 cos(d/2) - 4.

d is the torus distance to the maximum of V.  Writes weakkam_cosine.csv.
"""

import numpy as np

from wkbtorus.grid import make_grid, torus_distance
from wkbtorus.hamiltonian import Potential
from wkbtorus.io import write_table
from wkbtorus.weak_kam import solve_weak_kam_plus

V = Potential.cosine()
print(f"{'N':>6} {'iters':>6} {'residual':>10} {'max |S - exact|':>16}")
for n in (128, 256, 512, 1024):
    S = solve_weak_kam_plus(V, grid=make_grid(1, n))
    d = torus_distance(S.grid.axis[:, None], np.zeros((1, 1)))
    exact = 4 * np.cos(d / 2) - 4
    print(f"{n:6d} {S.iterations:6d} {S.residual:10.2e} {np.max(np.abs(S.values - exact)):16.2e}")

write_table("weakkam_cosine.csv", ["x", "S", "exact", "dS", "mask"],
            [S.grid.axis, S.values, exact, S.gradient.components[0], S.diff_mask.astype(int)])
