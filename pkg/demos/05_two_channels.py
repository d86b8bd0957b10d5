"""Belief-space policy for a secondary user choosing between two primary channels."""
import numpy as np

from arqaccess import channel, dp

m1 = channel.erasure(0.99, 0.01)
m2 = channel.erasure(0.99, 0.01)
grid = dp.solve(m1, dp.SolverParams(w=0.6, grid_resolution=65), model2=m2)

# Print the action map on a coarse subgrid of beliefs (q1, q2) = (P1(E), P2(E)).
names = grid.action_names
for q2 in np.linspace(1, 0, 6):
    row = []
    for q1 in np.linspace(0, 1, 6):
        row.append(names[int(grid.action_at([[q1, q2]])[0])][:8].ljust(9))
    print(f"q2={q2:.1f} ", " ".join(row))
