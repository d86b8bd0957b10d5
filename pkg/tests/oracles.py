"""Reference computations that share no code with the package under test."""

from __future__ import annotations

import itertools

import numpy as np


def stationary_eig(P) -> np.ndarray:
    """Left Perron eigenvector of P, normalised to sum 1."""
    vals, vecs = np.linalg.eig(np.asarray(P, dtype=float).T)
    k = int(np.argmin(np.abs(vals - 1.0)))
    v = np.real(vecs[:, k])
    return v / v.sum()


def m_policy_slot_chain(M: int, p_ee: float, p_ne: float, r_p: float = 1.0, r_s: float = 1.0):
    """(R_p, R_s) of the M-burst policy from a slot-level (counter, previous state) chain.

    State at the start of a slot is (c, x_prev): c transmissions left, x_prev
    the channel state of the previous slot (0 = E, 1 = N).  The slot moves
    the channel, transmits iff c > 0, and the secondary hears a NACK iff it
    listened while the channel was E.
    """
    P = np.array([[p_ee, 1 - p_ee], [p_ne, 1 - p_ne]])
    states = [(c, x) for c in range(M + 1) for x in (0, 1)]
    index = {s: i for i, s in enumerate(states)}
    n = len(states)
    T = np.zeros((n, n))
    rp = np.zeros(n)
    rs = np.zeros(n)
    for (c, xp), i in index.items():
        for x in (0, 1):
            pr = P[xp, x]
            if c > 0:
                nxt = (c - 1, x)
                rs[i] += pr * r_s
            else:
                nxt = (M, x) if x == 0 else (0, x)
                if x == 1:
                    rp[i] += pr * r_p
            T[i, index[nxt]] += pr
    # drop unreachable states (e.g. M = 0 has no transmit states)
    pi = stationary_eig(T)
    return float(pi @ rp), float(pi @ rs)


def brute_force_hmm(A, E, pi):
    """Likelihood and per-slot posteriors by enumerating all state paths.

    ``E`` is the (L, S) emission-likelihood matrix of one observation sequence.
    """
    A = np.asarray(A)
    E = np.asarray(E)
    L, S = E.shape
    paths = np.array(list(itertools.product(range(S), repeat=L)), dtype=np.int64)
    w = pi[paths[:, 0]] * E[0, paths[:, 0]]
    for t in range(1, L):
        w = w * A[paths[:, t - 1], paths[:, t]] * E[t, paths[:, t]]
    lik = w.sum()
    post = np.zeros((L, S))
    for t in range(L):
        post[t] = np.bincount(paths[:, t], weights=w, minlength=S) / lik
    return lik, post


def brute_force_all_sequences(A, silent, transmit, regimes, pi):
    """Likelihood of every ACK/NACK sequence of length L = len(regimes), by path enumeration.

    Returns (sequences (2^L, L) of 0/1, likelihoods (2^L,), posteriors (2^L, L, S)).
    """
    A = np.asarray(A)
    S = A.shape[0]
    L = len(regimes)
    paths = np.array(list(itertools.product(range(S), repeat=L)), dtype=np.int64)
    seqs = np.array(list(itertools.product((0, 1), repeat=L)), dtype=np.int64)
    ack = np.where(np.asarray(regimes)[None, :], np.asarray(transmit)[paths], np.asarray(silent)[paths])  # (paths, L)
    prior = pi[paths[:, 0]].copy()
    for t in range(1, L):
        prior = prior * A[paths[:, t - 1], paths[:, t]]
    # joint[path, seq] = prior[path] * prod_t P(seq_t | path_t)
    joint = np.repeat(prior[:, None], len(seqs), axis=1)
    for t in range(L):
        e = np.where(seqs[None, :, t] == 1, ack[:, t : t + 1], 1.0 - ack[:, t : t + 1])
        joint *= e
    lik = joint.sum(axis=0)
    post = np.zeros((len(seqs), L, S))
    for t in range(L):
        for i in range(S):
            post[:, t, i] = joint[paths[:, t] == i].sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        post /= lik[:, None, None]
    return seqs, lik, post


def bayes_then_step(prior, ack_probs, ack: bool, P) -> np.ndarray:
    """Belief update written from the definition with plain loops."""
    S = len(prior)
    post = [prior[i] * (ack_probs[i] if ack else 1 - ack_probs[i]) for i in range(S)]
    z = sum(post)
    post = [x / z for x in post]
    return np.array([sum(post[i] * P[i][j] for i in range(S)) for j in range(S)])
