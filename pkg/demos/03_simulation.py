"""Monte Carlo comparison of access policies against the closed form."""
from arqaccess import channel, closedform, sim

model = channel.erasure()
w = 0.75
for kind in ("always_listen", "always_transmit", "greedy", "mpolicy", "dp", "genie"):
    cfg = sim.SimConfig(model, sim.PolicySpec(kind), w=w, horizon=200_000, replications=8, seed=1)
    st = sim.simulate(cfg)
    print(f"{kind:>15}: R={st.R_hat:.4f} +- {st.stderr:.4f}  (R_p={st.R_p_hat:.3f}, R_s={st.R_s_hat:.3f})")

M = closedform.optimal_m(closedform.MPolicyParams(0.99, 0.01, w))
print("closed form for the optimal burst:", closedform.evaluate_m_policy(M, closedform.MPolicyParams(0.99, 0.01, w)).R)

# Same seed, different policies: per-replication differences cancel most of the channel noise.
a = sim.simulate(sim.SimConfig(model, sim.PolicySpec("dp"), w=w, horizon=200_000, replications=8, seed=1))
b = sim.simulate(sim.SimConfig(model, sim.PolicySpec("greedy"), w=w, horizon=200_000, replications=8, seed=1))
d = a.R_reps - b.R_reps
print(f"dp - greedy: {d.mean():.5f} +- {d.std(ddof=1) / len(d) ** 0.5:.5f}")
