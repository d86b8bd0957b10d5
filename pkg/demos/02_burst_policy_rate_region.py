"""Closed-form throughput of burst policies and the resulting rate region."""
import numpy as np

from arqaccess import closedform as cf

params = cf.MPolicyParams(p_ee=0.99, p_ne=0.01, w=0.6)

# Throughput as a function of the burst length M: rises, peaks, then decays to the M = inf limit.
Ms = np.array([0, 1, 5, 10, 20, 50, 200, np.inf])
for M, R in zip(Ms, cf.throughput(Ms, params)):
    print(f"M={M:>5}: R={R:.5f}")

M_star = cf.optimal_m(params)
ev = cf.evaluate_m_policy(M_star, params)
print(f"M*={M_star}, primary {ev.R_p:.4f}, secondary {ev.R_s:.4f}")

# The continuous root of the first-difference equation lands one step below M*.
root = cf.root_equation_m1(params)
print("continuous root:", root.M_cont)

# Sweeping the weight traces the upper boundary of the achievable (R_p, R_s) region.
for row in cf.w_sweep(0.99, 0.01, [0.45, 0.55, 0.7, 0.9]):
    print(row)
region = cf.rate_region(0.99, 0.01, [0, 1, 10, 100, np.inf])
print("region vertices:", region.points)
