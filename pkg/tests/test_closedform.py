import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from arqaccess import closedform as cf
from arqaccess.errors import PreconditionError

import oracles

SEC6 = dict(p_ee=0.99, p_ne=0.01, r_p=1.0, r_s=1.0)


def prm(w=0.6, **kw):
    return cf.MPolicyParams(**{**SEC6, **kw, "w": w})


def test_params_validation():
    with pytest.raises(PreconditionError):
        cf.MPolicyParams(0.3, 0.3)
    with pytest.raises(PreconditionError):
        cf.MPolicyParams(0.9, 0.1, w=1.2)
    with pytest.raises(PreconditionError):
        cf.evaluate_m_policy(2.5, prm())


@settings(max_examples=200, deadline=None)
@given(st.floats(0.05, 0.999), st.floats(0.0, 0.99), st.integers(0, 300))
def test_stationary_identities(p_ee, frac, M):
    p = cf.MPolicyParams(p_ee, frac * p_ee * 0.99, 0.5)
    ev = cf.evaluate_m_policy(M, p)
    assert abs(ev.pss_n + ev.pss_e + ev.pss_s - 1) < 1e-12
    assert ev.pss_e == ev.pss_s
    assert ev.R == pytest.approx(0.5 * ev.R_p + 0.5 * ev.R_s, abs=1e-15)


def test_matches_slot_chain_oracle_at_m10():
    ev = cf.evaluate_m_policy(10, prm())
    rp, rs = oracles.m_policy_slot_chain(10, 0.99, 0.01)
    assert abs(ev.R_p - rp) < 1e-10 and abs(ev.R_s - rs) < 1e-10
    assert abs(ev.R - (0.6 * rp + 0.4 * rs)) < 1e-10


@settings(max_examples=60, deadline=None)
@given(st.floats(0.3, 0.99), st.floats(0.0, 0.95), st.integers(0, 40), st.floats(0.1, 3), st.floats(0.1, 3))
def test_fuzz_slot_chain_oracle(p_ee, frac, M, r_p, r_s):
    p_ne = frac * p_ee
    p = cf.MPolicyParams(p_ee, p_ne, 0.5, r_p, r_s)
    assume(p_ne > 1e-3)
    ev = cf.evaluate_m_policy(M, p)
    rp, rs = oracles.m_policy_slot_chain(M, p_ee, p_ne, r_p, r_s)
    assert abs(ev.R_p - rp) < 1e-10 and abs(ev.R_s - rs) < 1e-10
    assert np.allclose(cf.evaluate_m_policy_chain(M, p), (rp, rs), atol=1e-10)


def test_infinite_m_limit():
    ev = cf.evaluate_m_policy(math.inf, prm())
    assert ev.R_p == 0 and ev.R_s == 1 and ev.R == pytest.approx(0.4)
    big = cf.evaluate_m_policy(10**7, prm())
    assert big.R_s == pytest.approx(1, abs=1e-5) and big.R_p < 1e-5


def test_w1_strictly_decreasing():
    R = cf.throughput(np.arange(0, 1001), prm(1.0))
    assert np.all(np.diff(R) < 0)
    assert cf.optimal_m(prm(1.0)) == 0


def test_throughput_vector_matches_scalar():
    Ms = np.arange(0, 60)
    vec = cf.throughput(Ms, prm())
    assert np.allclose(vec, [cf.evaluate_m_policy(int(m), prm()).R for m in Ms], atol=1e-14)


@pytest.mark.parametrize("w", [0.55, 0.6, 0.7, 0.8, 0.9, 0.95])
def test_optimal_m_equals_exhaustive_scan(w):
    R = cf.throughput(np.arange(0, 10**5 + 1), prm(w))
    assert cf.optimal_m(prm(w)) == int(np.argmax(R))


def test_optimal_m_regimes():
    assert math.isinf(cf.optimal_m(prm(0.3)))
    assert cf.optimal_m(cf.MPolicyParams(0.5, 0.4, 0.95, 1, 1)) == 0


def test_optimal_m_monotone_in_w():
    ws = np.linspace(0.51, 0.99, 49)
    ms = [cf.optimal_m(prm(w)) for w in ws]
    assert all(a >= b for a, b in zip(ms, ms[1:]))


def test_greedy_m():
    assert math.isinf(cf.greedy_m(prm(0.6)))
    g = cf.greedy_m(prm(0.9))
    # the greedy burst stops once p = T^k falls to the switch belief 1 - (1-w)/w
    thr = 1 - 0.1 / 0.9
    k = 0
    p = 0.99
    while p > thr:
        k += 1
        p = p * 0.99 + (1 - p) * 0.01
    assert g == k


def test_rate_region_shape():
    rr = cf.rate_region(0.99, 0.01, [0, 1, 2, 5, 10, 50, 100, 1000])
    assert rr.R_s[0] == 0
    assert rr.R_p[0] == pytest.approx(cf.evaluate_m_policy(0, prm(1.0)).R_p)
    assert all(a > b for a, b in zip(rr.R_p, rr.R_p[1:]))
    assert all(a < b for a, b in zip(rr.R_s, rr.R_s[1:]))
    assert rr.segments[0] == (0, 1)
    far = cf.rate_region(0.99, 0.01, [10**8])
    assert far.R_s[0] == pytest.approx(1, abs=1e-6)


def test_w_sweep_rows():
    rows = cf.w_sweep(0.99, 0.01, [0.3, 0.6])
    assert math.isinf(rows[0]["M_star"]) and rows[1]["M_star"] == cf.optimal_m(prm(0.6))
    assert rows[1]["R"] == pytest.approx(cf.evaluate_m_policy(rows[1]["M_star"], prm(0.6)).R)


def test_root_section6():
    r = cf.root_equation_m1(prm(0.6))
    mstar = cf.optimal_m(prm(0.6))
    assert mstar in (math.floor(r.M_cont), math.ceil(r.M_cont))
    assert r.C * math.log(r.M1) == pytest.approx(r.K - r.M1 * math.log(r.B), rel=1e-9)


def test_root_preconditions():
    with pytest.raises(PreconditionError, match="always transmit"):
        cf.root_equation_m1(prm(0.4))
    with pytest.raises(PreconditionError, match="log argument"):
        cf.root_equation_m1(prm(0.502))


def test_root_small_b():
    p = cf.MPolicyParams(0.3, 0.29, 0.7, 1, 1)
    mstar = cf.optimal_m(p)
    assert mstar <= 2
    try:
        r = cf.root_equation_m1(p)
    except PreconditionError:
        return
    assert r.M_cont <= mstar + 1


@settings(max_examples=300, deadline=None)
@given(st.floats(0.05, 0.999), st.floats(0.001, 0.99), st.floats(0.5, 0.999), st.floats(0.1, 3), st.floats(0.1, 3))
def test_slope_inequality(p_ee, frac, w, r_p, r_s):
    p_ne = frac * p_ee
    assume(w * r_p > (1 - w) * r_s)
    p = cf.MPolicyParams(p_ee, p_ne, w, r_p, r_s)
    k = cf.root_constants(p)
    assume(k["a"] - k["b"] > 0 and k["C"] > 0 and k["D"] > 0)
    assert cf.slope_gap(p) > 0


@settings(max_examples=100, deadline=None)
@given(st.floats(0.3, 0.999), st.floats(0.001, 0.99), st.floats(0.0, 1.0), st.floats(0.1, 3), st.floats(0.1, 3))
def test_single_sign_change(p_ee, frac, w, r_p, r_s):
    p = cf.MPolicyParams(p_ee, frac * p_ee, w, r_p, r_s)
    d = np.diff(cf.throughput(np.arange(0, 10**4 + 1), p))
    s = np.sign(d[d != 0])
    assert np.count_nonzero(np.diff(s)) <= 1


def test_throughput_vector_handles_inf():
    prm = cf.MPolicyParams(0.99, 0.01, 0.6)
    got = cf.throughput([0, 7, np.inf], prm)
    want = [cf.evaluate_m_policy(m, prm).R for m in (0, 7, math.inf)]
    assert np.allclose(got, want, rtol=0, atol=1e-15)
    assert np.all(np.isfinite(cf.throughput(np.array([[np.inf, 1.0]]), prm)))
