"""Optimality of the pushforward coupling for the Lagrangian cost at t = 1.

Compares the mean action along characteristics, the cost of the graph
coupling and the exact Kantorovich optimum for 48 atoms.
"""

import numpy as np

from wkbtorus.grid import make_grid
from wkbtorus.hamiltonian import Potential
from wkbtorus.measures import grid_to_particles
from wkbtorus.pipeline import bump_density
from wkbtorus.schrodinger import WkbConfig, trimmed_density
from wkbtorus.transport import displacement_check
from wkbtorus.weak_kam import solve_weak_kam_plus

V = Potential.cosine()
S = solve_weak_kam_plus(V, grid=make_grid(1, 1024))
sig = trimmed_density(bump_density(make_grid(1, 4096), [np.pi], 0.5), S, WkbConfig(0.125))
atoms = grid_to_particles(sig, 48)
for t in (0.25, 0.5, 1.0):
    rep = displacement_check(atoms, S, t, V)
    print(f"t={t:4.2f}  flow={rep.flow_action:+.6f}  graph={rep.graph_cost:+.6f}  "
          f"optimal={rep.optimal_cost:+.6f}  rel gap={rep.rel_gap_graph:.1e}")
