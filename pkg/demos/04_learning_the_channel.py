"""Estimating the channel from ARQ feedback and planning with the estimate."""
import numpy as np

from arqaccess import channel, hmm

truth = channel.erasure(p_ee=0.99, p_ne=0.01)
spec = hmm.HmmSpec.from_model(truth)
rng = np.random.default_rng(3)

for L in (300, 3_000, 30_000):
    obs, states, _ = hmm.generate_observations(truth, L, rng)
    f = hmm.fit(obs, spec, seed=0)
    A = f.transitions_hat.rows
    print(f"L={L:>6}: P_EE={A[0, 0]:.4f}  P_NE={A[1, 0]:.4f}  ({f.iterations} EM iterations)")

# Posterior state probabilities for a short trace, by scaled forward-backward.
obs = hmm.ObservationSequence.silent([1, 1, 0, 0, 0, 1])
fb = hmm.forward_backward(obs, spec, truth.P)
print("P(E | feedback) per slot:", np.round(fb.posteriors[:, 0], 3))

# Throughput lost when the burst length is planned from a short training trace.
for row in hmm.degradation_experiment(truth, training_length=100, w_grid=[0.6, 0.8], seed=5):
    print(row)

# Gilbert-Elliot and three-state channels use the same interface.
ge = channel.gilbert_elliot()
obs, _, _ = hmm.generate_observations(ge, 5_000, rng)
print("GE estimate:\n", hmm.fit(obs, hmm.HmmSpec.from_model(ge)).transitions_hat.rows.round(3))
