import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arqaccess import channel as ch
from arqaccess.errors import ConstructionError, PreconditionError

import oracles

THREE = np.array(ch.THREE_STATE_DEFAULT)


def test_transition_matrix_rejects_bad_rows():
    with pytest.raises(ConstructionError):
        ch.TransitionMatrix([[0.5, 0.6], [0.5, 0.5]])
    with pytest.raises(ConstructionError):
        ch.TransitionMatrix([[1.2, -0.2], [0.5, 0.5]])
    with pytest.raises(ConstructionError):
        ch.TransitionMatrix([[1.0]])


def test_transition_matrix_rejects_reducible_and_periodic():
    with pytest.raises(ConstructionError, match="reducible"):
        ch.TransitionMatrix([[1.0, 0.0], [0.5, 0.5]])
    with pytest.raises(ConstructionError, match="periodic"):
        ch.TransitionMatrix([[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(ConstructionError, match="periodic"):
        ch.TransitionMatrix([[0, 1, 0], [0, 0, 1], [1, 0, 0]])


def test_transition_matrix_is_read_only():
    P = ch.TransitionMatrix.two_state(0.9, 0.2)
    with pytest.raises(ValueError):
        P.rows[0, 0] = 0.5


def test_success_profile_validation():
    with pytest.raises(ConstructionError):
        ch.SuccessProfile([0, 1], [0, 0, 1])
    with pytest.raises(ConstructionError):
        ch.SuccessProfile([0, 1.5], [0, 0])


def test_channel_model_arity_mismatch():
    with pytest.raises(ConstructionError):
        ch.ChannelModel(ch.TransitionMatrix.two_state(0.9, 0.1), ch.SuccessProfile([0, 1, 1], [0, 0, 1]))


def test_erasure_profile_is_exact():
    m = ch.erasure()
    assert m.labels == ("E", "N")
    assert m.success.silent_ack.tolist() == [0.0, 1.0]
    assert m.success.transmit_ack.tolist() == [0.0, 0.0]


def test_three_state_profile():
    m = ch.three_state()
    assert m.success.silent_ack.tolist() == [0, 1, 1]
    assert m.success.transmit_ack.tolist() == [0, 0, 1]


@pytest.mark.parametrize("name", sorted(ch.PRESETS))
def test_model_dict_round_trip(name):
    m = ch.PRESETS[name]()
    again = ch.ChannelModel.from_dict(m.to_dict())
    assert np.array_equal(again.P, m.P)
    assert np.array_equal(again.success.silent_ack, m.success.silent_ack)
    assert again.primary_reward == m.primary_reward


def test_stationary_symmetric():
    assert np.allclose(ch.stationary_distribution([[0.5, 0.5], [0.5, 0.5]]), [0.5, 0.5], atol=1e-15)


def test_stationary_section6_erasure():
    pi = ch.stationary_distribution(ch.erasure().P)
    assert abs(pi[0] - 0.5) < 1e-12
    assert np.allclose(pi, oracles.stationary_eig(ch.erasure().P), atol=1e-12)


def test_stationary_three_state_residual():
    pi = ch.stationary_distribution(THREE)
    assert np.max(np.abs(pi @ THREE - pi)) < 1e-10
    assert abs(pi.sum() - 1) < 1e-12
    assert np.all(pi > 0)
    assert np.allclose(pi, oracles.stationary_eig(THREE), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_stationary_random_matrices(s, seed):
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(s), size=s) * 0.98 + 0.02 / s
    P /= P.sum(axis=1, keepdims=True)
    pi = ch.stationary_distribution(ch.TransitionMatrix(P))
    assert np.max(np.abs(pi @ P - pi)) < 1e-10
    assert abs(pi.sum() - 1) < 1e-12


def test_m_step_examples():
    assert ch.m_step_erasure_prob(0, 0.99, 0.01) == pytest.approx(0.99, abs=1e-15)
    assert ch.m_step_erasure_prob(1, 0.99, 0.01) == pytest.approx(0.9802, abs=1e-12)
    assert ch.m_step_erasure_prob(math.inf, 0.99, 0.01) == pytest.approx(0.5, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.02, 0.999), st.floats(0.0, 1.0), st.integers(0, 200))
def test_m_step_matches_matrix_power(p_ee, frac, M):
    p_ne = frac * (p_ee - 0.01)
    P = np.array([[p_ee, 1 - p_ee], [p_ne, 1 - p_ne]])
    oracle = np.linalg.matrix_power(P, M + 1)[0, 0]
    got = ch.m_step_erasure_prob(M, p_ee, p_ne)
    assert abs(got - oracle) < 1e-12
    assert 0 <= got <= 1
    assert ch.m_step_erasure_prob(M + 1, p_ee, p_ne) <= got + 1e-15


def test_m_step_precondition():
    with pytest.raises(PreconditionError):
        ch.m_step_erasure_prob(3, 0.3, 0.3)
    with pytest.raises(PreconditionError):
        ch.m_step_erasure_prob(-1, 0.9, 0.1)


def test_sample_transition_point_mass():
    rng = ch.episode_rng(1)
    P = np.array([[0.0, 1.0], [0.5, 0.5]])
    assert all(ch.sample_transition(0, P, rng) == 1 for _ in range(1000))


def test_sample_transition_frequency():
    rng = ch.episode_rng(3)
    n = 10**6
    u = rng.random(n)
    # vectorised form of the same inverse-CDF rule
    hits = int(np.count_nonzero(u < 0.99))
    sigma = math.sqrt(n * 0.99 * 0.01)
    assert abs(hits - 0.99 * n) < 3 * sigma
    rng = ch.episode_rng(3)
    assert all(ch.sample_transition(0, [[0.99, 0.01], [0.5, 0.5]], rng) == int(not (x < 0.99)) for x in u[:2000])


def test_episode_rng_determinism_and_independence():
    a = ch.episode_rng(5, 0).random(10)
    b = ch.episode_rng(5, 0).random(10)
    c = ch.episode_rng(5, 1).random(10)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_sample_ack_erasure():
    m = ch.erasure()
    rng = ch.episode_rng(0)
    assert all(ch.sample_ack(1, False, m.success, rng) is ch.Feedback.ACK for _ in range(1000))
    assert all(ch.sample_ack(1, True, m.success, rng) is ch.Feedback.NACK for _ in range(1000))


def test_sample_ack_gilbert_elliot_rate():
    m = ch.gilbert_elliot()
    rng = ch.episode_rng(9)
    n = 10**6
    # sample_ack draws one uniform and compares to the profile entry
    u = rng.random(n)
    rate = np.mean(u < m.success.silent_ack[0])
    assert abs(rate - 0.2) < 3 * math.sqrt(0.2 * 0.8 / n)
    rng = ch.episode_rng(9)
    draws = [ch.sample_ack(0, False, m.success, rng) for _ in range(2000)]
    assert [int(d) for d in draws] == [int(x < 0.2) for x in u[:2000]]
