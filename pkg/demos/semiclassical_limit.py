"""WKB states a e^{i S+/hbar} against the classical pushforward, as hbar shrinks.

For each hbar the state is propagated to t = 1 and its Husimi position
marginal is compared (W1 on the circle) with the particle pushforward of the
trimmed initial density.  The gaps shrink roughly in proportion to hbar.
"""

import numpy as np

from wkbtorus.grid import make_grid
from wkbtorus.hamiltonian import Potential
from wkbtorus.measures import grid_to_particles, lift_graph, project, pushforward_flow, w1_circle
from wkbtorus.pipeline import bump_density
from wkbtorus.schrodinger import WkbConfig, build_wkb, propagate
from wkbtorus.weak_kam import solve_weak_kam_plus
from wkbtorus.wigner import husimi, husimi_position_marginal

V = Potential.cosine()
S = solve_weak_kam_plus(V, grid=make_grid(1, 1024))
qgrid = make_grid(1, 4096)
sigma0 = bump_density(qgrid, [np.pi], 0.5)

t = 1.0
print(f"{'hbar':>9} {'W1(Husimi, pushforward)':>24}")
for k in range(3, 8):
    hbar = 2.0**-k
    st = build_wkb(sigma0, S, WkbConfig(hbar))
    classical = project(pushforward_flow(lift_graph(grid_to_particles(st.trimmed, 4096), S), t, V))
    psi = propagate(st.psi, t, 1e-3, V)
    marg = husimi_position_marginal(husimi(psi, 3.0 + 8 * np.sqrt(hbar)))
    print(f"{hbar:9.5f} {w1_circle(marg, classical):24.4f}")
