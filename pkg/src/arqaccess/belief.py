"""Bayesian belief filtering of the primary channel state from overheard ARQ.

Every update is "Bayes posterior on the current slot's state given the
action and feedback, then one Markov step".  The general routine works for
any :class:`~arqaccess.channel.ChannelModel`; the specialised routines are
the closed-form versions for the erasure, Gilbert-Elliot, three-state and
two-channel erasure models and agree with the general one.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

import numpy as np

from .channel import ChannelModel, Feedback, TransitionMatrix
from .errors import ConstructionError, DegenerateObservationError

SIMPLEX_TOL = 1e-12


class Action(IntEnum):
    LISTEN = 0
    TRANSMIT = 1


class TwoChannelAction(IntEnum):
    LISTEN_BOTH = 0
    TX_CH1 = 1
    TX_CH2 = 2


@dataclass(frozen=True)
class Observation:
    """Action taken in a slot and the feedback overheard at its end.

    For two channels ``feedback`` is a ``(ch1, ch2)`` pair; the entry for
    the channel the secondary occupied is ignored.
    """

    action: Action | TwoChannelAction
    feedback: Feedback | tuple[Feedback, Feedback]


@dataclass(frozen=True, eq=False)
class Belief:
    """Probability vector over primary states for the coming slot."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != 1 or p.size < 2:
            raise ConstructionError("belief must be a vector of length >= 2")
        if np.any(p < -SIMPLEX_TOL) or np.any(p > 1 + SIMPLEX_TOL) or abs(p.sum() - 1.0) > SIMPLEX_TOL:
            raise ConstructionError(f"belief {p} is not on the probability simplex")
        p = np.clip(p, 0.0, 1.0)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_scalar(cls, p: float) -> "Belief":
        """Two-state belief with ``p`` = P(state 0), i.e. P(E) or P(B)."""
        return cls(np.array([p, 1.0 - p]))

    @classmethod
    def from_pair(cls, p: float, q: float) -> "Belief":
        """Three-state belief with ``p`` = P(G), ``q`` = P(Vg)."""
        rest = 1.0 - p - q
        if rest < -SIMPLEX_TOL:
            raise ConstructionError(f"p + q = {p + q} exceeds 1")
        return cls(np.array([max(rest, 0.0), p, q]))

    @property
    def scalar(self) -> float:
        return float(self.probs[0])

    @property
    def pair(self) -> tuple[float, float]:
        return float(self.probs[1]), float(self.probs[2])

    def __eq__(self, other):
        return isinstance(other, Belief) and np.array_equal(self.probs, other.probs)

    def __repr__(self):
        return f"Belief({self.probs.tolist()})"


def _as_probs(b) -> np.ndarray:
    return b.probs if isinstance(b, Belief) else np.asarray(b, dtype=float)


def _transmits(action) -> bool:
    return Action(action) is Action.TRANSMIT


def observation_probability(b, action, model: ChannelModel) -> float:
    """P(ACK | belief, action) = sum_i b_i * ack_prob(i, action)."""
    return float(_as_probs(b) @ model.success.ack_prob(_transmits(action)))


def case_probabilities(b, model: ChannelModel) -> dict[tuple[Action, Feedback], float]:
    """Probability of each (action, feedback) outcome, per action.

    For the three-state model these are Q_1..Q_4: (listen, NACK) = 1-p-q,
    (listen, ACK) = p+q, (transmit, ACK) = q, (transmit, NACK) = 1-q.
    """
    out = {}
    for a in Action:
        ack = observation_probability(b, a, model)
        out[(a, Feedback.ACK)] = ack
        out[(a, Feedback.NACK)] = 1.0 - ack
    return out


def posterior(b, obs: Observation, model: ChannelModel) -> np.ndarray:
    """Posterior over the current slot's state given the observation."""
    probs = _as_probs(b)
    ack = model.success.ack_prob(_transmits(obs.action))
    lik = ack if Feedback(obs.feedback) is Feedback.ACK else 1.0 - ack
    joint = probs * lik
    z = joint.sum()
    if not z > 0:
        raise DegenerateObservationError(f"observation {obs} has zero likelihood under belief {probs}")
    return joint / z


def update_general(b, obs: Observation, model: ChannelModel) -> Belief:
    """Bayes update on the observed feedback, then one Markov step."""
    nxt = posterior(b, obs, model) @ model.P
    return Belief(nxt / nxt.sum())


def propagate(p: float, p_ee: float, p_ne: float) -> float:
    """One Markov step of the two-state belief ``p`` = P(state 0)."""
    return p * p_ee + (1.0 - p) * p_ne


def update_two_state_erasure(p: float, obs: Observation, p_ee: float, p_ne: float) -> float:
    """Erasure-channel update of ``p`` = P(E).

    Silent + ACK -> P_NE; silent + NACK -> P_EE; any transmission is
    uninformative and just propagates the belief.
    """
    if _transmits(obs.action):
        return propagate(p, p_ee, p_ne)
    if Feedback(obs.feedback) is Feedback.ACK:
        if p >= 1.0:
            raise DegenerateObservationError("ACK while silent is impossible when P(E) = 1")
        return p_ne
    if p <= 0.0:
        raise DegenerateObservationError("NACK while silent is impossible when P(E) = 0")
    return p_ee


def _bayes_bad(p: float, lik_bad: float, lik_good: float) -> float:
    z = lik_bad * p + lik_good * (1.0 - p)
    if not z > 0:
        raise DegenerateObservationError("observation has zero likelihood")
    return lik_bad * p / z


def update_gilbert_elliot(p: float, obs: Observation, p_ee: float, p_ne: float, gammas: Sequence[float]) -> float:
    """Gilbert-Elliot update of ``p`` = P(B).

    ``gammas`` = (B silent, B transmit, G silent, G transmit) ACK
    probabilities.
    """
    g1, g2, g3, g4 = gammas
    ack = Feedback(obs.feedback) is Feedback.ACK
    if _transmits(obs.action):
        post = _bayes_bad(p, g2, g4) if ack else _bayes_bad(p, 1.0 - g2, 1.0 - g4)
    else:
        post = _bayes_bad(p, g1, g3) if ack else _bayes_bad(p, 1.0 - g1, 1.0 - g3)
    return propagate(post, p_ee, p_ne)


def update_three_state(pq: tuple[float, float], obs: Observation, P: TransitionMatrix | np.ndarray) -> tuple[float, float]:
    """Three-state update of ``(p, q)`` = (P(G), P(Vg)); state order (B, G, Vg)."""
    P = np.asarray(P)
    p, q = pq
    b = max(1.0 - p - q, 0.0)
    ack = Feedback(obs.feedback) is Feedback.ACK
    if not _transmits(obs.action):
        if not ack:
            if not b > 0:
                raise DegenerateObservationError("NACK while silent requires P(B) > 0")
            return float(P[0, 1]), float(P[0, 2])
        if not p + q > 0:
            raise DegenerateObservationError("ACK while silent requires P(G) + P(Vg) > 0")
        wg, wv = p / (p + q), q / (p + q)
        return wg * P[1, 1] + wv * P[2, 1], wg * P[1, 2] + wv * P[2, 2]
    if ack:
        if not q > 0:
            raise DegenerateObservationError("ACK while transmitting requires P(Vg) > 0")
        return float(P[2, 1]), float(P[2, 2])
    if not q < 1:
        raise DegenerateObservationError("NACK while transmitting requires P(Vg) < 1")
    wg, wb = p / (1.0 - q), b / (1.0 - q)
    return wg * P[1, 1] + wb * P[0, 1], wg * P[1, 2] + wb * P[0, 2]


def _ee_ne(P) -> tuple[float, float]:
    P = np.asarray(P)
    return float(P[0, 0]), float(P[1, 0])


def update_two_channel(pq: tuple[float, float], obs: Observation, P1, P2) -> tuple[float, float]:
    """Independent erasure updates of ``(p, q)`` = (P(E) on ch1, P(E) on ch2).

    The channel the secondary transmits on is propagated blindly; listened
    channels use their own feedback.
    """
    action = TwoChannelAction(obs.action)
    fb1, fb2 = obs.feedback
    p, q = pq
    a1 = Action.TRANSMIT if action is TwoChannelAction.TX_CH1 else Action.LISTEN
    a2 = Action.TRANSMIT if action is TwoChannelAction.TX_CH2 else Action.LISTEN
    p_new = update_two_state_erasure(p, Observation(a1, fb1), *_ee_ne(P1))
    q_new = update_two_state_erasure(q, Observation(a2, fb2), *_ee_ne(P2))
    return p_new, q_new
