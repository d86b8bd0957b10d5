"""Finite-state Markov models of the primary link.

A :class:`ChannelModel` is a row-stochastic transition matrix plus a
:class:`SuccessProfile` giving the probability that the primary packet is
acknowledged in each state, with the secondary user silent or transmitting.
The presets cover the erasure/non-erasure, Gilbert-Elliot and three-state
(Bad/Good/Very-good) channels.

State order used throughout the package:

* erasure: ``(E, N)``
* Gilbert-Elliot: ``(B, G)``
* three-state: ``(B, G, Vg)``
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import ConstructionError, PreconditionError

ROW_SUM_TOL = 1e-12


class Feedback(IntEnum):
    NACK = 0
    ACK = 1


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _period(adjacency: np.ndarray) -> int:
    """Period of a strongly connected digraph (BFS level method)."""
    n = adjacency.shape[0]
    level = np.full(n, -1)
    level[0] = 0
    frontier = [0]
    while frontier:
        nxt = []
        for u in frontier:
            for v in np.flatnonzero(adjacency[u]):
                if level[v] < 0:
                    level[v] = level[u] + 1
                    nxt.append(int(v))
        frontier = nxt
    g = 0
    for u, v in zip(*np.nonzero(adjacency)):
        g = math.gcd(g, int(level[u] + 1 - level[v]))
    return abs(g)


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Row-stochastic, irreducible and aperiodic S x S matrix.

    Row ``i`` holds the transition probabilities out of state ``i``.
    """

    rows: np.ndarray

    def __post_init__(self):
        P = np.array(self.rows, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 2:
            raise ConstructionError(f"transition matrix must be S x S with S >= 2, got shape {P.shape}")
        if not np.all(np.isfinite(P)) or np.any(P < 0) or np.any(P > 1):
            raise ConstructionError("transition probabilities must lie in [0, 1]")
        sums = P.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
            raise ConstructionError(f"rows must sum to 1 (got {sums})")
        adjacency = P > 0
        n_comp, _ = connected_components(adjacency, directed=True, connection="strong")
        if n_comp != 1:
            raise ConstructionError("transition matrix is reducible")
        if _period(adjacency) != 1:
            raise ConstructionError("transition matrix is periodic")
        object.__setattr__(self, "rows", _readonly(P))

    @property
    def s(self) -> int:
        return self.rows.shape[0]

    def __getitem__(self, idx):
        return self.rows[idx]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.rows, dtype=dtype)

    def __repr__(self):
        return f"TransitionMatrix({self.rows.tolist()})"

    @classmethod
    def two_state(cls, p_ee: float, p_ne: float) -> "TransitionMatrix":
        """Build ``[[P_EE, 1-P_EE], [P_NE, 1-P_NE]]``."""
        return cls(np.array([[p_ee, 1.0 - p_ee], [p_ne, 1.0 - p_ne]]))


@dataclass(frozen=True, eq=False)
class SuccessProfile:
    """Per-state P(ACK) with the secondary silent and transmitting."""

    silent_ack: np.ndarray
    transmit_ack: np.ndarray

    def __post_init__(self):
        a = np.array(self.silent_ack, dtype=float)
        b = np.array(self.transmit_ack, dtype=float)
        if a.ndim != 1 or a.shape != b.shape:
            raise ConstructionError("silent_ack and transmit_ack must be vectors of equal length")
        if np.any(~np.isfinite(a)) or np.any(~np.isfinite(b)):
            raise ConstructionError("success probabilities must be finite")
        if np.any((a < 0) | (a > 1)) or np.any((b < 0) | (b > 1)):
            raise ConstructionError("success probabilities must lie in [0, 1]")
        object.__setattr__(self, "silent_ack", _readonly(a))
        object.__setattr__(self, "transmit_ack", _readonly(b))

    def ack_prob(self, transmit: bool) -> np.ndarray:
        return self.transmit_ack if transmit else self.silent_ack

    def __repr__(self):
        return f"SuccessProfile(silent_ack={self.silent_ack.tolist()}, transmit_ack={self.transmit_ack.tolist()})"


@dataclass(frozen=True, eq=False)
class ChannelModel:
    transitions: TransitionMatrix
    success: SuccessProfile
    primary_reward: float = 1.0
    labels: tuple[str, ...] | None = None
    kind: str = "general"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.transitions, TransitionMatrix):
            object.__setattr__(self, "transitions", TransitionMatrix(self.transitions))
        if len(self.success.silent_ack) != self.transitions.s:
            raise ConstructionError(
                f"success profile has {len(self.success.silent_ack)} states, transitions have {self.transitions.s}"
            )
        if not (self.primary_reward >= 0 and math.isfinite(self.primary_reward)):
            raise ConstructionError("primary_reward must be a finite non-negative number")
        if self.labels is not None and len(self.labels) != self.transitions.s:
            raise ConstructionError("labels must name every state")

    @property
    def s(self) -> int:
        return self.transitions.s

    @property
    def P(self) -> np.ndarray:
        return self.transitions.rows

    def stationary(self) -> np.ndarray:
        return stationary_distribution(self.transitions)

    def to_dict(self) -> dict:
        """JSON-ready description; presets round-trip through their parameters."""
        if self.kind in PRESETS:
            return {"preset": self.kind, **self.params}
        return {
            "preset": "general",
            "transitions": self.P.tolist(),
            "silent_ack": self.success.silent_ack.tolist(),
            "transmit_ack": self.success.transmit_ack.tolist(),
            "r_p": self.primary_reward,
            "labels": list(self.labels) if self.labels else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelModel":
        d = dict(d)
        name = d.pop("preset", None)
        if name == "general":
            labels = d.pop("labels", None)
            return cls(
                TransitionMatrix(d.pop("transitions")),
                SuccessProfile(d.pop("silent_ack"), d.pop("transmit_ack")),
                primary_reward=float(d.pop("r_p", 1.0)),
                labels=tuple(labels) if labels else None,
            )
        if name not in PRESETS:
            raise ConstructionError(f"unknown channel preset {name!r}; expected one of {sorted(PRESETS) + ['general']}")
        try:
            return PRESETS[name](**d)
        except TypeError as exc:
            raise ConstructionError(f"bad parameters for preset {name!r}: {exc}") from None


def erasure(p_ee: float = 0.99, p_ne: float = 0.01, r_p: float = 1.0) -> ChannelModel:
    """Erasure/non-erasure channel, states ``(E, N)``."""
    return ChannelModel(
        TransitionMatrix.two_state(p_ee, p_ne),
        SuccessProfile([0.0, 1.0], [0.0, 0.0]),
        primary_reward=r_p,
        labels=("E", "N"),
        kind="erasure",
        params={"p_ee": p_ee, "p_ne": p_ne, "r_p": r_p},
    )


def gilbert_elliot(
    p_ee: float = 0.8,
    p_ne: float = 0.1,
    gammas: Sequence[float] = (0.2, 0.01, 0.95, 0.3),
    r_p: float = 1.0,
) -> ChannelModel:
    """Gilbert-Elliot channel, states ``(B, G)``.

    ``p_ee``/``p_ne`` are the probabilities of being Bad next slot given Bad /
    Good now. ``gammas`` = (B silent, B transmit, G silent, G transmit) ACK
    probabilities.
    """
    g1, g2, g3, g4 = (float(g) for g in gammas)
    return ChannelModel(
        TransitionMatrix.two_state(p_ee, p_ne),
        SuccessProfile([g1, g3], [g2, g4]),
        primary_reward=r_p,
        labels=("B", "G"),
        kind="gilbert_elliot",
        params={"p_ee": p_ee, "p_ne": p_ne, "gammas": [g1, g2, g3, g4], "r_p": r_p},
    )


THREE_STATE_DEFAULT = ((0.9, 0.005, 0.095), (0.005, 0.9, 0.095), (0.095, 0.005, 0.9))


def three_state(transitions: Sequence[Sequence[float]] = THREE_STATE_DEFAULT, r_p: float = 1.0) -> ChannelModel:
    """Bad/Good/Very-good channel with deterministic ACK pattern.

    Silent: ACK in G and Vg. Transmitting: ACK only in Vg.
    """
    P = np.asarray(transitions, dtype=float)
    return ChannelModel(
        TransitionMatrix(P),
        SuccessProfile([0.0, 1.0, 1.0], [0.0, 0.0, 1.0]),
        primary_reward=r_p,
        labels=("B", "G", "Vg"),
        kind="three_state",
        params={"transitions": P.tolist(), "r_p": r_p},
    )


PRESETS = {"erasure": erasure, "gilbert_elliot": gilbert_elliot, "three_state": three_state}


def stationary_distribution(P: TransitionMatrix | np.ndarray) -> np.ndarray:
    """Stationary distribution ``pi`` with ``pi P = pi`` and ``sum(pi) = 1``.

    Solved as a linear system; ergodicity is guaranteed by
    :class:`TransitionMatrix` construction.
    """
    P = np.asarray(P, dtype=float)
    s = P.shape[0]
    A = np.vstack([P.T - np.eye(s), np.ones(s)])
    rhs = np.zeros(s + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    # one refinement step removes most of the lstsq rounding
    pi = pi @ P
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def m_step_erasure_prob(m: int | float, p_ee: float, p_ne: float) -> float:
    """Probability of erasure after an M-slot transmission burst that followed an erasure.

    Computes ``[P_NE + (P_EE-P_NE)^(M+1) (1-P_EE)] / (1 + P_NE - P_EE)``, i.e.
    the (M+1)-step E->E probability. ``m = inf`` gives the stationary P(E).
    """
    if not p_ee > p_ne:
        raise PreconditionError(f"positively correlated channel required (P_EE={p_ee} <= P_NE={p_ne})")
    if m < 0:
        raise PreconditionError("M must be non-negative")
    decay = 0.0 if math.isinf(m) else (p_ee - p_ne) ** (m + 1)
    return (p_ne + decay * (1.0 - p_ee)) / (1.0 + p_ne - p_ee)


def sample_transition(state: int, P: TransitionMatrix | np.ndarray, rng: np.random.Generator) -> int:
    """Draw the next state from row ``state`` of ``P`` (inverse CDF on one uniform)."""
    return next_state(np.asarray(P)[state], rng.random())


def next_state(row: np.ndarray, u: float) -> int:
    c = 0.0
    last = len(row) - 1
    for j in range(last):
        c += row[j]
        if u < c:
            return j
    return last


def sample_ack(state: int, secondary_transmits: bool, profile: SuccessProfile, rng: np.random.Generator) -> Feedback:
    u = rng.random()
    return Feedback.ACK if u < profile.ack_prob(secondary_transmits)[state] else Feedback.NACK


def episode_rng(seed: int, episode: int = 0) -> np.random.Generator:
    """Independent counter-based stream for one (master seed, episode) pair."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(episode)])))
