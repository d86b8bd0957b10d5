"""Estimating primary-channel transition probabilities from ARQ feedback.

The hidden chain is the primary channel state; each slot emits ACK or NACK
with the known probabilities of the channel's success profile under the
secondary user's regime (silent or transmitting) in that slot.  Only the
transition matrix is learnt, by Baum-Welch on a scaled forward-backward
pass.  The initial-state distribution is held fixed (uniform by default).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numba
import numpy as np

from .channel import ChannelModel, TransitionMatrix, episode_rng, next_state, stationary_distribution
from .closedform import MPolicyParams, evaluate_m_policy, optimal_m
from .errors import ConstructionError, DegenerateObservationError, PreconditionError

EPS = 1e-6
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 500
DEFAULT_STARTS = 4


@dataclass(frozen=True, eq=False)
class ObservationSequence:
    """ACK/NACK symbols (1 = ACK) with the secondary regime of every slot (True = transmitting)."""

    symbols: np.ndarray
    transmitting: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.symbols, dtype=np.int8).ravel()
        r = np.asarray(self.transmitting, dtype=bool).ravel()
        if s.size == 0:
            raise ConstructionError("observation sequence must be nonempty")
        if r.shape != s.shape:
            raise ConstructionError("every symbol needs a regime annotation")
        if np.any((s != 0) & (s != 1)):
            raise ConstructionError("symbols must be 0 (NACK) or 1 (ACK)")
        s.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "symbols", s)
        object.__setattr__(self, "transmitting", r)

    @classmethod
    def silent(cls, symbols) -> "ObservationSequence":
        s = np.asarray(symbols)
        return cls(s, np.zeros(s.shape, dtype=bool))

    @classmethod
    def transmit(cls, symbols) -> "ObservationSequence":
        s = np.asarray(symbols)
        return cls(s, np.ones(s.shape, dtype=bool))

    def __len__(self):
        return int(self.symbols.size)

    def __add__(self, other: "ObservationSequence") -> "ObservationSequence":
        return ObservationSequence(
            np.concatenate([self.symbols, other.symbols]), np.concatenate([self.transmitting, other.transmitting])
        )

    @property
    def regime(self) -> str | None:
        """``"silent"`` or ``"transmit"`` if constant, else None."""
        if not self.transmitting.any():
            return "silent"
        if self.transmitting.all():
            return "transmit"
        return None


@dataclass(frozen=True, eq=False)
class HmmSpec:
    silent_ack: np.ndarray
    transmit_ack: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.silent_ack, dtype=float)
        b = np.asarray(self.transmit_ack, dtype=float)
        if a.ndim != 1 or a.shape != b.shape or a.size < 2:
            raise ConstructionError("emission vectors must have equal length >= 2")
        if np.any((a < 0) | (a > 1) | (b < 0) | (b > 1)):
            raise ConstructionError("emission probabilities must lie in [0, 1]")
        object.__setattr__(self, "silent_ack", a)
        object.__setattr__(self, "transmit_ack", b)

    @classmethod
    def from_model(cls, model: ChannelModel) -> "HmmSpec":
        return cls(model.success.silent_ack.copy(), model.success.transmit_ack.copy())

    @property
    def n_states(self) -> int:
        return int(self.silent_ack.size)

    def emission_matrix(self, obs: ObservationSequence) -> np.ndarray:
        """(L, S) likelihoods P(symbol_t | state)."""
        ack = np.where(obs.transmitting[:, None], self.transmit_ack[None, :], self.silent_ack[None, :])
        return np.where(obs.symbols[:, None] == 1, ack, 1.0 - ack)


@dataclass
class HmmFit:
    transitions_hat: TransitionMatrix
    log_likelihood: float
    iterations: int
    converged: bool
    ll_history: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    raw_transitions: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "transitions_hat": self.transitions_hat.rows.tolist(),
            "log_likelihood": self.log_likelihood,
            "iterations": self.iterations,
            "converged": self.converged,
            "ll_history": np.asarray(self.ll_history).tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class FBResult:
    log_likelihood: float
    posteriors: np.ndarray  # (L, S)
    pairwise: np.ndarray  # (L-1, S, S)


# --- forward-backward ------------------------------------------------------------


@numba.njit(cache=True)
def _forward_backward(A, E, pi):
    L, S = E.shape
    alpha = np.empty((L, S))
    beta = np.empty((L, S))
    c = np.empty(L)
    for i in range(S):
        alpha[0, i] = pi[i] * E[0, i]
    for t in range(L):
        if t > 0:
            for j in range(S):
                acc = 0.0
                for i in range(S):
                    acc += alpha[t - 1, i] * A[i, j]
                alpha[t, j] = acc * E[t, j]
        z = 0.0
        for j in range(S):
            z += alpha[t, j]
        if not z > 0.0:
            return t, 0.0, alpha, beta, c
        c[t] = z
        for j in range(S):
            alpha[t, j] /= z
    for i in range(S):
        beta[L - 1, i] = 1.0
    for t in range(L - 2, -1, -1):
        for i in range(S):
            acc = 0.0
            for j in range(S):
                acc += A[i, j] * E[t + 1, j] * beta[t + 1, j]
            beta[t, i] = acc / c[t + 1]
    ll = 0.0
    for t in range(L):
        ll += math.log(c[t])
    return -1, ll, alpha, beta, c


@numba.njit(cache=True)
def _expected_counts(A, E, alpha, beta, c):
    L, S = E.shape
    xi = np.zeros((S, S))
    for t in range(L - 1):
        for i in range(S):
            ai = alpha[t, i]
            if ai == 0.0:
                continue
            for j in range(S):
                xi[i, j] += ai * A[i, j] * E[t + 1, j] * beta[t + 1, j] / c[t + 1]
    return xi


def _initial(spec: HmmSpec, A: np.ndarray, initial) -> np.ndarray:
    if initial is None or (isinstance(initial, str) and initial == "uniform"):
        return np.full(spec.n_states, 1.0 / spec.n_states)
    if isinstance(initial, str) and initial == "stationary":
        return stationary_distribution(A)
    pi = np.asarray(initial, dtype=float)
    if pi.shape != (spec.n_states,) or abs(pi.sum() - 1.0) > 1e-12 or np.any(pi < 0):
        raise PreconditionError("initial distribution must be a probability vector over the states")
    return pi


def _check_transitions(A, S: int) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.shape != (S, S) or np.any(A < 0) or np.any(np.abs(A.sum(axis=1) - 1.0) > 1e-9):
        raise PreconditionError("transitions must be a row-stochastic S x S matrix")
    return np.ascontiguousarray(A)


def _run_fb(obs, spec, A, pi, E=None):
    if E is None:
        E = np.ascontiguousarray(spec.emission_matrix(obs))
    bad, ll, alpha, beta, c = _forward_backward(A, E, pi)
    if bad >= 0:
        raise DegenerateObservationError(f"observation at index {bad} is impossible under the model")
    return E, ll, alpha, beta, c


def forward_backward(obs: ObservationSequence, spec: HmmSpec, transitions, initial=None) -> FBResult:
    """Scaled forward-backward pass.

    ``initial`` is the distribution of the first slot's state: ``None`` or
    ``"uniform"``, ``"stationary"`` (of ``transitions``) or a vector.
    """
    A = _check_transitions(transitions, spec.n_states)
    pi = _initial(spec, A, initial)
    E, ll, alpha, beta, c = _run_fb(obs, spec, A, pi)
    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)
    xi = alpha[:-1, :, None] * A[None, :, :] * (E[1:] * beta[1:])[:, None, :] / c[1:, None, None]
    return FBResult(float(ll), gamma, xi)


def log_likelihood(obs: ObservationSequence, spec: HmmSpec, transitions, initial=None) -> float:
    A = _check_transitions(transitions, spec.n_states)
    return float(_run_fb(obs, spec, A, _initial(spec, A, initial))[1])


# --- Baum-Welch ----------------------------------------------------------------


def clamp_transitions(A: np.ndarray, eps: float = EPS) -> np.ndarray:
    A = np.clip(np.asarray(A, dtype=float), eps, 1.0 - eps)
    return A / A.sum(axis=1, keepdims=True)


def baum_welch(
    obs: ObservationSequence,
    spec: HmmSpec,
    init_transitions,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    initial=None,
) -> HmmFit:
    """EM re-estimation of the transition matrix with emissions held fixed.

    Stops when the log-likelihood gain drops below ``tol``.  Rows of states
    with no expected visits keep their previous values.  The returned matrix
    is clamped to ``[EPS, 1 - EPS]`` and renormalised.
    """
    S = spec.n_states
    A = _check_transitions(init_transitions, S)
    if np.any(A <= 0) or np.any(A >= 1):
        raise PreconditionError("initial transitions must lie strictly inside (0, 1)")
    E = np.ascontiguousarray(spec.emission_matrix(obs))
    history = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        pi = _initial(spec, A, initial)
        _, ll, alpha, beta, c = _run_fb(obs, spec, A, pi, E)
        history.append(ll)
        if it > 1 and ll - history[-2] < tol:
            converged = True
            break
        if it == max_iter:
            break
        xi = _expected_counts(A, E, alpha, beta, c)
        rows = xi.sum(axis=1)
        visited = rows > 0
        A = A.copy()
        A[visited] = xi[visited] / rows[visited, None]
    out = clamp_transitions(A)
    final_ll = log_likelihood(obs, spec, out, initial)
    return HmmFit(TransitionMatrix(out), final_ll, it, converged, np.asarray(history), A)


def sticky_init(n_states: int, rng: np.random.Generator, diag: float = 0.8, jitter: float = 0.05) -> np.ndarray:
    A = np.full((n_states, n_states), (1.0 - diag) / (n_states - 1))
    np.fill_diagonal(A, diag)
    A = A + rng.uniform(-jitter, jitter, size=A.shape)
    A = np.clip(A, 1e-3, None)
    return A / A.sum(axis=1, keepdims=True)


def fit(
    obs: ObservationSequence,
    spec: HmmSpec,
    n_starts: int = DEFAULT_STARTS,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    initial=None,
) -> HmmFit:
    """Multi-start Baum-Welch from jittered sticky matrices; keeps the best likelihood."""
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_starts):
        f = baum_welch(obs, spec, sticky_init(spec.n_states, rng), tol, max_iter, initial)
        if best is None or f.log_likelihood > best.log_likelihood:
            best = f
    return best


def train_three_state_two_phase(
    obs_silent: ObservationSequence,
    obs_transmit: ObservationSequence,
    spec: HmmSpec,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    phase2: str = "transmit_only",
    n_starts: int = DEFAULT_STARTS,
    seed: int = 0,
) -> tuple[HmmFit, HmmFit]:
    """Silent-phase fit, then a refit on the transmit phase started from it.

    ``phase2="transmit_only"`` refits on ``obs_transmit`` alone;
    ``"joint"`` refits on the silent phase followed by the transmit phase as
    one trace.
    Returns ``(phase1, phase2)`` fits.
    """
    if len(obs_silent) == 0 or len(obs_transmit) == 0:
        raise PreconditionError("both phases need observations")
    if obs_silent.regime != "silent" or obs_transmit.regime != "transmit":
        raise PreconditionError("phase sequences must be silent and transmitting respectively")
    if phase2 not in ("joint", "transmit_only"):
        raise PreconditionError("phase2 must be 'joint' or 'transmit_only'")
    first = fit(obs_silent, spec, n_starts, seed, tol, max_iter)
    data = obs_silent + obs_transmit if phase2 == "joint" else obs_transmit
    second = baum_welch(data, spec, first.transitions_hat.rows, tol, max_iter)
    return first, second


def emission_symmetries(spec: HmmSpec) -> list[tuple[int, ...]]:
    """State permutations that leave both emission vectors unchanged."""
    S = spec.n_states
    out = []
    for perm in itertools.permutations(range(S)):
        p = list(perm)
        if np.array_equal(spec.silent_ack[p], spec.silent_ack) and np.array_equal(spec.transmit_ack[p], spec.transmit_ack):
            out.append(tuple(perm))
    return out


def align_states(estimate, truth, spec: HmmSpec) -> tuple[np.ndarray, tuple[int, ...]]:
    """Relabel ``estimate`` by the emission-preserving permutation closest to ``truth`` in L1."""
    E = np.asarray(estimate, dtype=float)
    T = np.asarray(truth, dtype=float)
    best, best_perm, best_err = E, tuple(range(len(E))), math.inf
    for perm in emission_symmetries(spec):
        p = list(perm)
        cand = E[np.ix_(p, p)]
        err = np.abs(cand - T).sum()
        if err < best_err:
            best, best_perm, best_err = cand, perm, err
    return best, best_perm


def row_l1_error(estimate, truth) -> float:
    """Mean over rows of the L1 distance between transition rows."""
    return float(np.abs(np.asarray(estimate) - np.asarray(truth)).sum(axis=1).mean())


# --- data generation and I/O -------------------------------------------------


def generate_observations(
    model: ChannelModel, length: int, rng: np.random.Generator, transmitting: bool = False, start_state: int | None = None
) -> tuple[ObservationSequence, np.ndarray, int]:
    """Sample ``length`` slots of feedback; returns (sequence, states, final state)."""
    if length < 1:
        raise PreconditionError("length must be positive")
    s = next_state(model.stationary(), rng.random()) if start_state is None else int(start_state)
    u = rng.random((length, 2))
    ack_p = model.success.ack_prob(transmitting)
    states = np.empty(length, dtype=np.int64)
    sym = np.empty(length, dtype=np.int8)
    P = model.P
    for t in range(length):
        s = next_state(P[s], u[t, 0])
        states[t] = s
        sym[t] = 1 if u[t, 1] < ack_p[s] else 0
    seq = ObservationSequence(sym, np.full(length, transmitting))
    return seq, states, s


def write_trace(obs: ObservationSequence, fh: TextIO) -> None:
    """Header line ``regime=<silent|transmit>`` then one line over {A, N}."""
    regime = obs.regime
    if regime is None:
        raise PreconditionError("trace files hold a single regime")
    fh.write(f"regime={regime}\n")
    fh.write("".join("A" if x else "N" for x in obs.symbols) + "\n")


def read_trace(fh: TextIO) -> ObservationSequence:
    header = fh.readline().strip()
    if not header.startswith("regime="):
        raise ConstructionError("trace must start with a 'regime=' header")
    regime = header.split("=", 1)[1].strip()
    if regime not in ("silent", "transmit"):
        raise ConstructionError(f"unknown regime {regime!r}")
    body = "".join(line.strip() for line in fh)
    if not body or set(body) - {"A", "N"}:
        raise ConstructionError("trace body must be a nonempty string over {A, N}")
    sym = np.frombuffer(body.encode(), dtype=np.uint8) == ord("A")
    return ObservationSequence(sym.astype(np.int8), np.full(sym.size, regime == "transmit"))


# --- degradation ------------------------------------------------------------------


def _burst_length(p_ee: float, p_ne: float, w: float, r_p: float, r_s: float) -> float:
    if p_ee > p_ne:
        return optimal_m(MPolicyParams(p_ee, p_ne, w, r_p, r_s))
    # no positive correlation: feedback carries no usable memory, act on the stationary law
    p_e = p_ne / (p_ne + 1.0 - p_ee)
    return math.inf if (1.0 - w) * r_s > w * r_p * (1.0 - p_e) else 0


def degradation_experiment(
    true_model: ChannelModel,
    training_length: int,
    w_grid: Iterable[float],
    seed: int = 0,
    r_s: float = 1.0,
    n_starts: int = DEFAULT_STARTS,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> list[dict]:
    """Throughput lost by planning with transition estimates learnt from a silent trace.

    Erasure channels only.  For each weight the burst length chosen from the
    estimates and the one chosen from the truth are both evaluated exactly
    under the true channel.
    """
    if training_length < 2:
        raise PreconditionError("training_length must be >= 2")
    if true_model.kind != "erasure":
        raise PreconditionError("degradation experiment is defined for the erasure channel")
    rng = episode_rng(seed, 0)
    obs, _, _ = generate_observations(true_model, training_length, rng)
    f = fit(obs, HmmSpec.from_model(true_model), n_starts, seed, tol, max_iter)
    A = f.transitions_hat.rows
    p_ee, p_ne = float(true_model.P[0, 0]), float(true_model.P[1, 0])
    e_ee, e_ne = float(A[0, 0]), float(A[1, 0])
    r_p = true_model.primary_reward
    rows = []
    for w in w_grid:
        prm = MPolicyParams(p_ee, p_ne, float(w), r_p, r_s)
        m_true = optimal_m(prm)
        m_est = _burst_length(e_ee, e_ne, float(w), r_p, r_s)
        R_true = evaluate_m_policy(m_true, prm).R
        R_est = evaluate_m_policy(m_est, prm).R
        rows.append({
            "w": float(w), "training_length": training_length, "seed": seed,
            "P_EE_hat": e_ee, "P_NE_hat": e_ne, "M_true": m_true, "M_est": m_est,
            "R_true": R_true, "R_est": R_est, "degradation": R_true - R_est,
        })
    return rows
