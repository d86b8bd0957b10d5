import math
from dataclasses import replace

import numpy as np
import pytest

from arqaccess import dp
from arqaccess import policies as pol
from arqaccess.belief import Action, Belief, Observation, TwoChannelAction
from arqaccess.channel import Feedback, erasure, gilbert_elliot
from arqaccess.errors import ConstructionError, StateError

ACK, NACK = Feedback.ACK, Feedback.NACK
L, T = Action.LISTEN, Action.TRANSMIT


def step(h, fb, true_state=None):
    return pol.observe(h, Observation(pol.decide(h), fb), true_state)


def test_unknown_kind_and_missing_grid():
    with pytest.raises(ConstructionError):
        pol.init_policy("oracle", erasure(), 0.6)
    with pytest.raises(ConstructionError):
        pol.init_policy("dp", erasure(), 0.6)
    with pytest.raises(ConstructionError):
        pol.init_policy("mpolicy", erasure(), 0.6, M=-1)


def test_dp_grid_domain_checked():
    vg = dp.ValueGrid("square", 3, np.zeros(9), np.zeros(9, dtype=int), dp.TWO_CHANNEL_ACTIONS)
    with pytest.raises(ConstructionError):
        pol.init_policy("dp", erasure(), 0.6, value_grid=vg)


def test_constant_policies():
    for fb in (ACK, NACK):
        h = pol.init_policy("always_listen", erasure(), 0.6)
        assert pol.decide(step(h, fb)) == L
    h = pol.init_policy("always_transmit", erasure(), 0.6, model2=erasure())
    assert pol.decide(h) == TwoChannelAction.TX_CH1


def test_initial_belief_is_stationary():
    h = pol.init_policy("greedy", gilbert_elliot(), 0.6)
    assert np.allclose(h.state.probs, gilbert_elliot().stationary())


@pytest.mark.parametrize("w", [0.55, 0.7, 0.9])
def test_greedy_rule(w):
    for p in np.linspace(0, 1, 41):
        h = replace(pol.init_policy("greedy", erasure(), w), state=Belief.from_scalar(p))
        want = T if (1 - w) > w * (1 - p) else L
        assert pol.decide(h) == want


def test_greedy_transmits_forever_below_two_thirds():
    for w, forever in ((0.6, True), (0.7, False)):
        h = pol.init_policy("greedy", erasure(), w)
        # force a silent NACK first if greedy starts by listening
        if pol.decide(h) == L:
            h = step(h, NACK)
        actions = []
        for _ in range(3000):
            a = pol.decide(h)
            actions.append(a)
            h = pol.observe(h, Observation(a, NACK if a == T else ACK))
        assert (L not in actions) == forever


def test_mpolicy_counter():
    h = pol.init_policy("mpolicy", erasure(), 0.6, M=3)
    assert pol.decide(h) == L
    h = step(h, ACK)
    assert h.state == 0 and pol.decide(h) == L
    h = step(h, NACK)
    assert h.state == 3
    seq = []
    for _ in range(4):
        seq.append(pol.decide(h))
        h = step(h, NACK)
    assert seq == [T, T, T, L]


def test_mpolicy_infinite():
    assert pol.decide(pol.init_policy("mpolicy", erasure(), 0.6, M=math.inf)) == T
    h = step(pol.init_policy("mpolicy", erasure(), 0.6, M=math.inf), NACK)
    for _ in range(100):
        assert pol.decide(h) == T
        h = step(h, NACK)


def test_dp_belief_after_listen_ack():
    vg = dp.solve(erasure(), dp.SolverParams(0.6, grid_resolution=129))
    h = pol.init_policy("dp", erasure(), 0.6, value_grid=vg)
    assert pol.decide(h) == L
    h = step(h, ACK)
    assert h.state.scalar == pytest.approx(0.01)


def test_genie_rule_and_state():
    m = erasure()
    with pytest.raises(StateError):
        pol.decide(pol.init_policy("genie", m, 0.6))
    h = pol.init_policy("genie", m, 0.6, true_state=0)
    # previous state E: next E w.p. 0.99, listen gain 0.6 * 0.01 < transmit 0.4
    assert pol.decide(h) == T
    h = pol.observe(h, Observation(T, NACK), true_state=1)
    assert h.state == 1 and pol.decide(h) == L
    with pytest.raises(StateError):
        pol.observe(h, Observation(L, ACK))


def test_observe_rejects_mismatched_action():
    h = pol.init_policy("always_listen", erasure(), 0.6)
    with pytest.raises(StateError):
        pol.observe(h, Observation(T, NACK))


def test_determinism():
    vg = dp.solve(erasure(), dp.SolverParams(0.7, grid_resolution=129))
    rng = np.random.default_rng(1)
    fbs = [Feedback(int(x)) for x in rng.integers(0, 2, 500)]

    def run():
        h = pol.init_policy("dp", erasure(), 0.7, value_grid=vg)
        out = []
        for fb in fbs:
            a = pol.decide(h)
            out.append(int(a))
            h = pol.observe(h, Observation(a, NACK if a == T else fb))
        return out

    assert run() == run()


def test_greedy_equals_dp_at_alpha_zero():
    for m in (erasure(), gilbert_elliot()):
        for w in (0.55, 0.65, 0.8):
            vg = dp.solve(m, dp.SolverParams(w, alpha=0.0, grid_resolution=257))
            g = pol.init_policy("greedy", m, w)
            for p in vg.points[:, 0]:
                hd = replace(pol.init_policy("dp", m, w, value_grid=vg), state=Belief.from_scalar(p))
                hg = replace(g, state=Belief.from_scalar(p))
                lis, tx = pol._immediate_single(hg.state.probs, m, w, 1.0)
                if abs(lis - tx) < 1e-9:
                    continue
                assert pol.decide(hd) == pol.decide(hg)


def test_two_channel_greedy_and_updates():
    h = pol.init_policy("greedy", erasure(), 0.6, model2=erasure())
    assert h.state == pytest.approx((0.5, 0.5), abs=1e-12)
    assert pol.decide(h) == TwoChannelAction.TX_CH1
    h = pol.observe(h, Observation(TwoChannelAction.TX_CH1, (NACK, NACK)))
    assert h.state == pytest.approx((0.5, 0.99))
    # channel 2 is almost surely erased, so occupying it costs the primary least
    assert pol.decide(h) == TwoChannelAction.TX_CH2
