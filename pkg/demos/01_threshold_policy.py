"""Threshold structure of the optimal access policy on a two-state erasure channel.

Run with ``python demos/01_threshold_policy.py``.
"""
import numpy as np

from arqaccess import channel, closedform, dp

# A slowly mixing primary channel: erasure runs last about 100 slots.
model = channel.erasure(p_ee=0.99, p_ne=0.01)
print("stationary P(E):", model.stationary()[0])

# Solve the discounted belief MDP for a few weights on the primary's throughput.
for w in (0.3, 0.6, 0.8):
    params = dp.SolverParams(w=w, alpha=0.999)
    grid = dp.solve(model, params)
    rep = dp.extract_threshold(grid, params, model)
    if isinstance(rep, dp.AllSameActionReport):
        print(f"w={w}: {rep.action} everywhere")
        continue
    print(f"w={w}: transmit once P(E) > {rep.p_th:.4f}  (bracket {rep.lower_bound:.4f}..{rep.upper_bound:.4f})")
    # After a NACK the belief sits at P_EE and decays; effective_m counts the transmit slots.
    print("    burst length from DP:", dp.effective_m(grid, model),
          " optimal M from closed form:", closedform.optimal_m(closedform.MPolicyParams(0.99, 0.01, w)))

# The value function is convex in the belief.
grid = dp.solve(model, dp.SolverParams(w=0.6))
v = grid.values
print("max second difference sign violation:", float(min(0.0, np.diff(v, 2).min())))
