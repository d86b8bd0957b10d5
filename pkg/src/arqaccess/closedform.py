"""Average-reward analysis of the "transmit M slots after a NACK" policy.

For the erasure/non-erasure channel with ``alpha -> 1`` the optimal policy
listens while ACKs arrive and, after a NACK, transmits a burst of ``M``
packets.  The system seen by the secondary user is then a three-state
chain N / E / Send-M whose stationary law gives closed-form primary and
secondary throughputs.  ``M = math.inf`` stands for "transmit forever".
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import optimize

from .channel import m_step_erasure_prob, stationary_distribution
from .errors import PreconditionError

INFINITE = math.inf
M_SCAN_CAP = 100_000


@dataclass(frozen=True)
class MPolicyParams:
    p_ee: float
    p_ne: float
    w: float = 0.6
    r_p: float = 1.0
    r_s: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.p_ne < self.p_ee <= 1.0):
            raise PreconditionError(f"need 0 <= P_NE < P_EE <= 1, got P_EE={self.p_ee}, P_NE={self.p_ne}")
        if not 0.0 <= self.w <= 1.0:
            raise PreconditionError("w must lie in [0, 1]")
        if self.r_p < 0 or self.r_s < 0:
            raise PreconditionError("rewards must be non-negative")

    @property
    def stationary_erasure(self) -> float:
        return self.p_ne / (self.p_ne + 1.0 - self.p_ee)


@dataclass(frozen=True)
class MPolicyEval:
    M: float
    pss_n: float
    pss_e: float
    pss_s: float
    R_p: float
    R_s: float
    R: float


def evaluate_m_policy(M: float, params: MPolicyParams) -> MPolicyEval:
    """Stationary probabilities and throughputs of the M-burst policy."""
    if M < 0 or (not math.isinf(M) and M != int(M)):
        raise PreconditionError("M must be a non-negative integer or inf")
    p_ne = params.p_ne
    t = m_step_erasure_prob(M, params.p_ee, p_ne)
    denom = 1.0 + 2.0 * p_ne - t
    pss_n = (1.0 - t) / denom
    pss_e = pss_s = p_ne / denom
    if math.isinf(M):
        R_p, R_s = 0.0, params.r_s
    else:
        norm = pss_n + pss_e + M * pss_s
        R_p = params.r_p * pss_n / norm
        R_s = params.r_s * M * pss_s / norm
    return MPolicyEval(M, pss_n, pss_e, pss_s, R_p, R_s, params.w * R_p + (1.0 - params.w) * R_s)


def throughput(M: np.ndarray | Sequence[float], params: MPolicyParams) -> np.ndarray:
    """Vectorised R(M); entries equal to inf give the always-transmit limit."""
    M = np.asarray(M, dtype=float)
    inf = np.isinf(M)
    if inf.any():
        out = np.full(M.shape, (1.0 - params.w) * params.r_s)
        out[~inf] = throughput(M[~inf], params)
        return out
    p_ee, p_ne = params.p_ee, params.p_ne
    t = (p_ne + (p_ee - p_ne) ** (M + 1) * (1.0 - p_ee)) / (1.0 + p_ne - p_ee)
    denom = 1.0 + 2.0 * p_ne - t
    pss_n = (1.0 - t) / denom
    pss_s = p_ne / denom
    norm = pss_n + pss_s + M * pss_s
    return (params.w * params.r_p * pss_n + (1.0 - params.w) * params.r_s * M * pss_s) / norm


def m_policy_chain(M: int, p_ee: float, p_ne: float) -> np.ndarray:
    """Transition matrix of the explicit N / E / S_1..S_M chain.

    One step of this chain is one slot.  From the last transmit sub-state the
    return to E uses the (M+1)-step channel probability taken from a matrix
    power of the channel, not from the closed form.
    """
    P = np.array([[p_ee, 1.0 - p_ee], [p_ne, 1.0 - p_ne]])
    n = M + 2
    T = np.zeros((n, n))
    N, E = 0, 1
    T[N, N], T[N, E] = 1.0 - p_ne, p_ne
    if M == 0:
        T[E, E], T[E, N] = p_ee, 1.0 - p_ee
        return T
    T[E, 2] = 1.0
    for k in range(2, n - 1):
        T[k, k + 1] = 1.0
    back = np.linalg.matrix_power(P, M + 1)[0, 0]
    T[n - 1, E], T[n - 1, N] = back, 1.0 - back
    return T


def evaluate_m_policy_chain(M: int, params: MPolicyParams) -> tuple[float, float]:
    """(R_p, R_s) from the stationary law of :func:`m_policy_chain`."""
    pi = stationary_distribution(m_policy_chain(M, params.p_ee, params.p_ne))
    return params.r_p * pi[0], params.r_s * pi[2:].sum()


def optimal_m(params: MPolicyParams, cap: int = M_SCAN_CAP) -> float:
    """Best burst length M* (``inf`` = always transmit).

    Uses the two always-X regimes and otherwise scans R(M) upward until it
    stops increasing; R has a single peak, so the first non-increase is the
    argmax (ties go to the smaller M).
    """
    w, r_p, r_s = params.w, params.r_p, params.r_s
    if w * r_p < (1.0 - w) * r_s:
        return INFINITE
    if w * r_p * (1.0 - params.p_ee) > (1.0 - w) * r_s:
        return 0
    chunk = 4096
    start = 0
    prev = None
    while start <= cap:
        Ms = np.arange(start, min(start + chunk, cap + 1) + 1)
        R = throughput(Ms, params)
        if prev is not None and R[0] <= prev:
            return start - 1
        stop = np.flatnonzero(np.diff(R) <= 0)
        if stop.size:
            return int(Ms[stop[0]])
        prev = R[-1]
        start = int(Ms[-1]) + 1
    return INFINITE


def greedy_m(params: MPolicyParams, max_slots: int = M_SCAN_CAP) -> float:
    """Burst length of the myopic policy after a silent NACK (``inf`` if it never stops)."""
    w, r_p, r_s = params.w, params.r_p, params.r_s

    def transmits(p):
        return (1.0 - w) * r_s > w * r_p * (1.0 - p)

    if transmits(params.p_ne) or transmits(params.stationary_erasure):
        return INFINITE
    p, count = params.p_ee, 0
    while transmits(p):
        count += 1
        if count >= max_slots:
            return INFINITE
        p = p * params.p_ee + (1.0 - p) * params.p_ne
    return count


@dataclass(frozen=True)
class RateRegion:
    """Throughput pairs of M-burst policies; consecutive points are joined by time sharing."""

    M: tuple[float, ...]
    R_p: tuple[float, ...]
    R_s: tuple[float, ...]

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.R_p, self.R_s))

    @property
    def segments(self) -> list[tuple[float, float]]:
        """Pairs of M values whose time-division mix traces the boundary between them."""
        return list(zip(self.M[:-1], self.M[1:]))


def rate_region(
    p_ee: float, p_ne: float, M_list: Iterable[float], r_p: float = 1.0, r_s: float = 1.0
) -> RateRegion:
    Ms = sorted(set(M_list))
    evals = [evaluate_m_policy(m, MPolicyParams(p_ee, p_ne, 1.0, r_p, r_s)) for m in Ms]
    return RateRegion(tuple(Ms), tuple(e.R_p for e in evals), tuple(e.R_s for e in evals))


def w_sweep(p_ee: float, p_ne: float, w_grid: Iterable[float], r_p: float = 1.0, r_s: float = 1.0) -> list[dict]:
    """Rows ``{w, M_star, R_p, R_s, R}`` for each weight."""
    rows = []
    for w in w_grid:
        prm = MPolicyParams(p_ee, p_ne, float(w), r_p, r_s)
        m = optimal_m(prm)
        ev = evaluate_m_policy(m, prm)
        rows.append({"w": float(w), "M_star": m, "R_p": ev.R_p, "R_s": ev.R_s, "R": ev.R})
    return rows


@dataclass(frozen=True)
class RootResult:
    """Solution of C log M1 = K - M1 log B and the derived constants."""

    M1: float
    M_cont: float
    A: float
    B: float
    C: float
    D: float
    K: float
    log_arg: float


def root_constants(params: MPolicyParams) -> dict[str, float]:
    A = 1.0 - params.p_ee
    B = params.p_ee - params.p_ne
    P = params.p_ne
    a = params.w * params.r_p * A * P * (1.0 - B)
    b = (1.0 - params.w) * params.r_s * A * P * (1.0 - B)
    C = (a - b) * (1.0 - B)
    D = (a - b) + a * (1.0 - B)
    log_arg = (a - b) - (1.0 - params.w) * params.r_s * P**2 * (1.0 - B) ** 2
    return {"A": A, "B": B, "P": P, "a": a, "b": b, "C": C, "D": D, "log_arg": log_arg}


def root_equation_m1(params: MPolicyParams) -> RootResult:
    """Continuous stationary point of R(M+1) - R(M) via bisection in M1 = C M + D.

    On M1 >= D the function C log M1 + M1 log B - K is strictly decreasing,
    so the root there is unique.  If it lies below D the continuous root is
    negative (R already falls from M = 0); if the function never reaches zero
    R keeps increasing and ``M_cont`` is ``inf``.
    """
    if not params.w * params.r_p > (1.0 - params.w) * params.r_s:
        raise PreconditionError("root equation needs w r_p > (1 - w) r_s; otherwise always transmit")
    k = root_constants(params)
    B, C, D = k["B"], k["C"], k["D"]
    for name, val in (("B = P_EE - P_NE", B), ("a - b", k["a"] - k["b"]), ("C", C), ("D", D), ("log argument (a - b) - (1 - w) r_s P^2 (1 - B)^2", k["log_arg"])):
        if not val > 0:
            raise PreconditionError(f"{name} = {val!r} must be positive")
    logB = math.log(B)
    K = C * math.log(k["log_arg"]) + (D - C) * logB

    def g(m1):
        return C * math.log(m1) + m1 * logB - K

    peak = -C / logB  # g increases up to here and decreases after
    lo = peak
    if g(lo) < 0:
        return RootResult(math.nan, INFINITE, k["A"], B, C, D, K, k["log_arg"])
    hi = max(2.0 * lo, D, 1.0)
    while g(hi) > 0:
        hi *= 2.0
    m1 = optimize.bisect(g, lo, hi, xtol=1e-14 * hi, rtol=4 * np.finfo(float).eps, maxiter=2000)
    return RootResult(m1, (m1 - D) / C, k["A"], B, C, D, K, k["log_arg"])


def slope_gap(params: MPolicyParams) -> float:
    """``-log(B)/C - 1/D``; positive whenever the root is unique."""
    k = root_constants(params)
    return -math.log(k["B"]) / k["C"] - 1.0 / k["D"]
