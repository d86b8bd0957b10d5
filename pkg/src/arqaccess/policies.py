"""Secondary-user policies behind one functional interface.

A :class:`PolicyHandle` is an immutable value.  :func:`decide` reads the
action for the coming slot and :func:`observe` returns a new handle that has
absorbed the slot's observation.  Supported kinds:

``dp``               stored argmax of a solved :class:`~arqaccess.dp.ValueGrid`
``greedy``           myopic comparison of immediate expected rewards
``mpolicy``          listen until a silent NACK, then transmit ``M`` slots
``genie``            told the true state of every past slot; myopic rule
``always_listen``    constant
``always_transmit``  constant (on two channels: always channel 1)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Any

import numpy as np

from . import belief as bl
from .channel import ChannelModel, Feedback
from .dp import ValueGrid
from .errors import ConstructionError, StateError

KINDS = ("dp", "greedy", "mpolicy", "genie", "always_listen", "always_transmit")


@dataclass(frozen=True, eq=False)
class PolicyHandle:
    kind: str
    models: tuple[ChannelModel, ...]
    w: float
    r_s: float = 1.0
    value_grid: ValueGrid | None = None
    M: float | None = None
    # belief vector (one channel), (p, q) pair (two channels), counter (mpolicy)
    # or last true state (genie); None until initialised
    state: Any = None

    @property
    def two_channel(self) -> bool:
        return len(self.models) == 2

    @property
    def initialized(self) -> bool:
        return self.state is not None


def init_policy(
    kind: str,
    model: ChannelModel,
    w: float,
    r_s: float = 1.0,
    *,
    model2: ChannelModel | None = None,
    value_grid: ValueGrid | None = None,
    M: float | None = None,
    true_state: int | tuple[int, int] | None = None,
) -> PolicyHandle:
    """Build a handle in its initial state.

    Belief-based kinds start from the stationary distribution.  The genie
    starts from ``true_state`` (the state before the first slot); without it
    the handle is left uninitialised.
    """
    if kind not in KINDS:
        raise ConstructionError(f"unknown policy kind {kind!r}; expected one of {KINDS}")
    models = (model,) if model2 is None else (model, model2)
    if kind == "dp" and value_grid is None:
        raise ConstructionError("dp policy needs a value grid")
    if kind == "mpolicy":
        if model2 is not None:
            raise ConstructionError("mpolicy is defined for a single channel")
        if M is None or M < 0 or (not math.isinf(M) and M != int(M)):
            raise ConstructionError("mpolicy needs a non-negative integer M (or inf)")
    if kind == "dp":
        expected = "square" if model2 is not None else ("simplex" if model.s == 3 else "interval")
        if value_grid.domain != expected:
            raise ConstructionError(f"value grid domain {value_grid.domain!r} does not fit this model ({expected!r})")
    if kind == "genie":
        state = None if true_state is None else (tuple(int(s) for s in true_state) if model2 is not None else int(true_state))
    elif kind == "mpolicy":
        # M = inf means transmit always, so the burst starts armed
        state = math.inf if math.isinf(M) else 0
    elif model2 is not None:
        state = (float(model.stationary()[0]), float(model2.stationary()[0]))
    else:
        state = bl.Belief(model.stationary())
    return PolicyHandle(kind, models, float(w), float(r_s), value_grid, M, state)


def _require(handle: PolicyHandle):
    if not handle.initialized:
        raise StateError(f"{handle.kind} policy handle is not initialised")


def _grid_point(handle: PolicyHandle):
    if handle.two_channel:
        return handle.state
    b = handle.state.probs
    if handle.value_grid.domain == "simplex":
        return (b[1], b[2])
    return b[0]


def _immediate_single(probs: np.ndarray, model: ChannelModel, w: float, r_s: float) -> tuple[float, float]:
    r_p = model.primary_reward
    listen = w * r_p * float(probs @ model.success.silent_ack)
    transmit = (1.0 - w) * r_s + w * r_p * float(probs @ model.success.transmit_ack)
    return listen, transmit


def _immediate_two(erasure_probs: tuple[float, float], models, w: float, r_s: float) -> list[float]:
    """Immediate rewards of (listen both, tx ch1, tx ch2) given P(E) on each channel."""
    ok = [
        m.primary_reward * float(np.array([pe, 1.0 - pe]) @ m.success.silent_ack)
        for m, pe in zip(models, erasure_probs)
    ]
    return [w * (ok[0] + ok[1]), (1.0 - w) * r_s + w * ok[1], (1.0 - w) * r_s + w * ok[0]]


def _first_max(values: list[float]) -> int:
    best = max(values)
    return next(i for i, v in enumerate(values) if v >= best)


def decide(handle: PolicyHandle) -> int:
    """Action for the coming slot (:class:`~arqaccess.belief.Action` or ``TwoChannelAction``)."""
    _require(handle)
    kind = handle.kind
    two = handle.two_channel
    if kind == "always_listen":
        return bl.TwoChannelAction.LISTEN_BOTH if two else bl.Action.LISTEN
    if kind == "always_transmit":
        return bl.TwoChannelAction.TX_CH1 if two else bl.Action.TRANSMIT
    if kind == "mpolicy":
        return bl.Action.TRANSMIT if handle.state > 0 else bl.Action.LISTEN
    if kind == "dp":
        a = int(handle.value_grid.action_at([_grid_point(handle)])[0])
        return bl.TwoChannelAction(a) if two else bl.Action(a)
    if kind == "greedy":
        if two:
            return bl.TwoChannelAction(_first_max(_immediate_two(handle.state, handle.models, handle.w, handle.r_s)))
        listen, transmit = _immediate_single(handle.state.probs, handle.models[0], handle.w, handle.r_s)
        return bl.Action.TRANSMIT if transmit > listen else bl.Action.LISTEN
    # genie: one-step lookahead from the known previous state
    if two:
        pe = tuple(float(m.P[s, 0]) for m, s in zip(handle.models, handle.state))
        return bl.TwoChannelAction(_first_max(_immediate_two(pe, handle.models, handle.w, handle.r_s)))
    model = handle.models[0]
    listen, transmit = _immediate_single(model.P[handle.state], model, handle.w, handle.r_s)
    return bl.Action.TRANSMIT if transmit >= listen else bl.Action.LISTEN


def observe(handle: PolicyHandle, obs: bl.Observation, true_state=None) -> PolicyHandle:
    """Absorb the slot's observation; the genie also needs the slot's ``true_state``."""
    _require(handle)
    expected = decide(handle)
    if int(obs.action) != int(expected):
        raise StateError(f"observation action {obs.action!r} differs from the policy's decision {expected!r}")
    kind = handle.kind
    if kind == "genie":
        if true_state is None:
            raise StateError("genie policy must be told the true state of every slot")
        state = tuple(int(s) for s in true_state) if handle.two_channel else int(true_state)
        return replace(handle, state=state)
    if kind == "mpolicy":
        if obs.action == bl.Action.TRANSMIT:
            return replace(handle, state=handle.state - 1)
        if Feedback(obs.feedback) is Feedback.NACK:
            return replace(handle, state=handle.M)
        return handle
    if handle.two_channel:
        m1, m2 = handle.models
        return replace(handle, state=bl.update_two_channel(handle.state, obs, m1.P, m2.P))
    return replace(handle, state=bl.update_general(handle.state, obs, handle.models[0]))
