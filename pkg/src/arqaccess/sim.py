"""Slot-level Monte Carlo simulation of a secondary user on one or two channels.

Slot order: (1) the channel moves, (2) the policy decides, (3) the primary
ACK is sampled, (4) rewards accrue (r_p per ACK, r_s per secondary
transmission), (5) the policy observes the feedback.

Each episode draws from its own Philox stream keyed by ``(seed, episode)``.
Uniforms are generated in fixed-size blocks: per slot one for the channel
move and one for the ACK (two each with two channels).  The numba kernels
and the pure-Python engine built on :mod:`arqaccess.policies` consume the
same numbers and produce the same traces.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numba
import numpy as np

from . import belief as bl
from . import policies as pol
from .channel import ChannelModel, Feedback, episode_rng, next_state
from .closedform import MPolicyParams, optimal_m
from .dp import SolverParams, ValueGrid, solve
from .errors import ConstructionError

BLOCK = 1 << 18
N_BATCHES = 16
RANDOM_INIT_BURN_IN = 1000

KIND_CODES = {k: i for i, k in enumerate(pol.KINDS)}
DP, GREEDY, MPOLICY, GENIE, ALWAYS_LISTEN, ALWAYS_TRANSMIT = range(6)
DOMAIN_CODES = {"interval": 0, "simplex": 1, "square": 2}

SWEEP_COLUMNS = ("w", "policy", "R_p", "R_s", "R", "stderr_R", "horizon", "replications", "seed")


@dataclass(frozen=True)
class PolicySpec:
    """Policy to simulate.

    ``M=None`` with ``kind="mpolicy"`` means the optimal burst length for the
    configured weight.  ``value_grid=None`` with ``kind="dp"`` solves the
    model on the fly with ``alpha`` and ``grid_resolution``.
    """

    kind: str
    M: float | None = None
    value_grid: ValueGrid | None = None
    alpha: float = 0.999
    grid_resolution: int | None = None

    def __post_init__(self):
        if self.kind not in pol.KINDS:
            raise ConstructionError(f"unknown policy kind {self.kind!r}; expected one of {pol.KINDS}")


@dataclass(frozen=True)
class SimConfig:
    model: ChannelModel
    policy: PolicySpec
    w: float
    r_s: float = 1.0
    horizon: int = 1_000_000
    seed: int = 0
    burn_in: int | None = None
    replications: int = 16
    model2: ChannelModel | None = None
    init: str = "stationary"
    record_trace: bool = False

    def __post_init__(self):
        if self.init not in ("stationary", "random"):
            raise ConstructionError("init must be 'stationary' or 'random'")
        if not 0.0 <= self.w <= 1.0:
            raise ConstructionError("w must lie in [0, 1]")
        if self.replications < 1:
            raise ConstructionError("replications must be >= 1")
        if not self.horizon > self.effective_burn_in >= 0:
            raise ConstructionError("need horizon > burn_in >= 0")
        if self.model2 is not None and self.policy.kind == "mpolicy":
            raise ConstructionError("mpolicy is defined for a single channel")

    @property
    def effective_burn_in(self) -> int:
        if self.burn_in is not None:
            return int(self.burn_in)
        return RANDOM_INIT_BURN_IN if self.init == "random" else 0

    @property
    def n_channels(self) -> int:
        return 1 if self.model2 is None else 2


@dataclass
class RunStats:
    R_p_hat: float
    R_s_hat: float
    R_hat: float
    stderr: float
    stderr_p: float
    stderr_s: float
    ack_count: int
    nack_count: int
    transmit_count: int
    slots: int
    replications: int = 1
    trace: dict | None = field(default=None, repr=False)
    # per-replication R_hat, for paired comparisons under common random numbers
    R_reps: np.ndarray | None = field(default=None, repr=False)


# --- policy resolution -------------------------------------------------------


@dataclass
class _Resolved:
    kind: int
    M: float
    domain: int
    n: int
    actions: np.ndarray
    lookup: np.ndarray
    value_grid: ValueGrid | None


def resolve_policy(config: SimConfig) -> _Resolved:
    """Fix the concrete policy parameters (solving or optimising if needed)."""
    spec = config.policy
    M, vg = 0.0, None
    empty_i = np.zeros(0, dtype=np.int64)
    lookup = np.zeros((1, 1), dtype=np.int64)
    if spec.kind == "mpolicy":
        if spec.M is None:
            p_ee, p_ne = float(config.model.P[0, 0]), float(config.model.P[1, 0])
            M = float(optimal_m(MPolicyParams(p_ee, p_ne, config.w, config.model.primary_reward, config.r_s)))
        else:
            M = float(spec.M)
    if spec.kind == "dp":
        vg = spec.value_grid
        if vg is None:
            params = SolverParams(config.w, alpha=spec.alpha, r_s=config.r_s, grid_resolution=spec.grid_resolution)
            vg = solve(config.model, params, config.model2)
        if vg.domain == "simplex":
            lookup = vg.grid.lookup
        return _Resolved(DP, M, DOMAIN_CODES[vg.domain], vg.resolution, vg.actions, lookup, vg)
    return _Resolved(KIND_CODES[spec.kind], M, 0, 2, empty_i, lookup, None)


# --- numba kernels -----------------------------------------------------------


@numba.njit(cache=True)
def _next_state(P, s, u):
    c = 0.0
    last = P.shape[1] - 1
    for j in range(last):
        c += P[s, j]
        if u < c:
            return j
    return last


@numba.njit(cache=True)
def _nearest_interval(x, n):
    x = min(max(x, 0.0), 1.0)
    return int(np.rint(x * (n - 1)))


@numba.njit(cache=True)
def _nearest_simplex(p, q, n, lookup):
    p = min(max(p, 0.0), 1.0)
    q = min(max(q, 0.0), 1.0)
    s = p + q
    if s > 1.0:
        p /= s
        q /= s
    m = n - 1
    u, v = p * m, q * m
    i, j = int(np.rint(u)), int(np.rint(v))
    if i + j > m:
        if (i - u) >= (j - v):
            i -= 1
        else:
            j -= 1
    return lookup[i, j]


@numba.njit(cache=True)
def _run_single(kind, P, silent, tx, r_p, r_s, w, M, domain, n, actions, lookup,
                u, t0, burn_in, batch_size, b, carry, acc, batches, trace, record):
    S = P.shape[0]
    joint = np.empty(S)
    s = int(carry[0])
    counter = carry[1]
    nb = batches.shape[0]
    for k in range(u.shape[0]):
        prev = s
        s = _next_state(P, s, u[k, 0])
        # decide
        if kind == 4:
            a = 0
        elif kind == 5:
            a = 1
        elif kind == 2:
            a = 1 if counter > 0 else 0
        elif kind == 1:
            lv = 0.0
            tv = 0.0
            for i in range(S):
                lv += b[i] * silent[i]
                tv += b[i] * tx[i]
            a = 1 if (1.0 - w) * r_s + w * r_p * tv > w * r_p * lv else 0
        elif kind == 3:
            lv = 0.0
            tv = 0.0
            for i in range(S):
                lv += P[prev, i] * silent[i]
                tv += P[prev, i] * tx[i]
            a = 1 if w * r_p * tv + (1.0 - w) * r_s >= w * r_p * lv else 0
        else:
            if domain == 0:
                a = actions[_nearest_interval(b[0], n)]
            else:
                a = actions[_nearest_simplex(b[1], b[2], n, lookup)]
        pa = tx[s] if a == 1 else silent[s]
        ack = u[k, 1] < pa
        t = t0 + k
        if t >= burn_in:
            rp = r_p if ack else 0.0
            rs = r_s if a == 1 else 0.0
            acc[0] += rp
            acc[1] += rs
            if ack:
                acc[2] += 1.0
            else:
                acc[3] += 1.0
            acc[4] += a
            j = min((t - burn_in) // batch_size, nb - 1)
            batches[j, 0] += rp
            batches[j, 1] += rs
            batches[j, 2] += 1.0
        if record:
            trace[t, 0] = s
            trace[t, 1] = a
            trace[t, 2] = 1 if ack else 0
        # observe
        if kind == 2:
            if a == 1:
                counter -= 1.0
            elif not ack:
                counter = M
        elif kind != 3:
            z = 0.0
            for i in range(S):
                pi = tx[i] if a == 1 else silent[i]
                joint[i] = b[i] * (pi if ack else 1.0 - pi)
                z += joint[i]
            if z > 0:
                for j2 in range(S):
                    acc_j = 0.0
                    for i in range(S):
                        acc_j += joint[i] / z * P[i, j2]
                    b[j2] = acc_j
                tot = 0.0
                for i in range(S):
                    tot += b[i]
                for i in range(S):
                    b[i] = min(max(b[i] / tot, 0.0), 1.0)
    carry[0] = s
    carry[1] = counter


@numba.njit(cache=True)
def _run_two(kind, P1, P2, r1, r2, r_s, w, n, actions,
             u, t0, burn_in, batch_size, pq, carry, acc, batches, trace, record):
    # erasure channels: silent ACK iff state N (index 1); a transmission forces a NACK
    s1 = int(carry[0])
    s2 = int(carry[1])
    p, q = pq[0], pq[1]
    nb = batches.shape[0]
    for k in range(u.shape[0]):
        prev1, prev2 = s1, s2
        s1 = _next_state(P1, s1, u[k, 0])
        s2 = _next_state(P2, s2, u[k, 1])
        if kind == 4:
            a = 0
        elif kind == 5:
            a = 1
        elif kind == 0:
            i = int(np.rint(min(max(p, 0.0), 1.0) * (n - 1)))
            j = int(np.rint(min(max(q, 0.0), 1.0) * (n - 1)))
            a = actions[i * n + j]
        else:
            if kind == 1:
                e1, e2 = p, q
            else:
                e1, e2 = P1[prev1, 0], P2[prev2, 0]
            v0 = w * (r1 * (1.0 - e1) + r2 * (1.0 - e2))
            v1 = (1.0 - w) * r_s + w * r2 * (1.0 - e2)
            v2 = (1.0 - w) * r_s + w * r1 * (1.0 - e1)
            best = max(v0, max(v1, v2))
            a = 0 if v0 >= best else (1 if v1 >= best else 2)
        ack1 = a != 1 and s1 == 1 and u[k, 2] < 1.0
        ack2 = a != 2 and s2 == 1 and u[k, 3] < 1.0
        t = t0 + k
        if t >= burn_in:
            rp = (r1 if ack1 else 0.0) + (r2 if ack2 else 0.0)
            rs = r_s if a != 0 else 0.0
            acc[0] += rp
            acc[1] += rs
            nacks = 2.0 - ack1 - ack2
            acc[2] += 2.0 - nacks
            acc[3] += nacks
            acc[4] += 1.0 if a != 0 else 0.0
            j = min((t - burn_in) // batch_size, nb - 1)
            batches[j, 0] += rp
            batches[j, 1] += rs
            batches[j, 2] += 1.0
        if record:
            trace[t, 0] = s1 * 2 + s2
            trace[t, 1] = a
            trace[t, 2] = ack1 * 2 + ack2
        if a == 1:
            p = p * P1[0, 0] + (1.0 - p) * P1[1, 0]
        else:
            p = P1[1, 0] if ack1 else P1[0, 0]
        if a == 2:
            q = q * P2[0, 0] + (1.0 - q) * P2[1, 0]
        else:
            q = P2[1, 0] if ack2 else P2[0, 0]
    pq[0] = p
    pq[1] = q
    carry[0] = s1
    carry[1] = s2


# --- episode drivers ---------------------------------------------------------


def _initial(config: SimConfig, rng: np.random.Generator):
    """Pre-slot true state(s) and initial belief, drawn in a fixed order."""
    models = [config.model] if config.model2 is None else [config.model, config.model2]
    u0 = rng.random(len(models))
    states = [next_state(m.stationary(), x) for m, x in zip(models, u0)]
    if config.model2 is None:
        b = rng.dirichlet(np.ones(config.model.s)) if config.init == "random" else config.model.stationary()
    else:
        b = rng.random(2) if config.init == "random" else np.array([m.stationary()[0] for m in models])
    return states, np.array(b, dtype=float)


def _batch_size(config: SimConfig) -> int:
    return max(1, (config.horizon - config.effective_burn_in) // N_BATCHES)


def _blocks(config: SimConfig, rng: np.random.Generator):
    width = 2 * config.n_channels
    t = 0
    while t < config.horizon:
        m = min(BLOCK, config.horizon - t)
        yield t, rng.random((m, width))
        t += m


def _finish(config: SimConfig, acc: np.ndarray, batches: np.ndarray, trace) -> RunStats:
    slots = config.horizon - config.effective_burn_in
    w = config.w
    R_p, R_s = acc[0] / slots, acc[1] / slots
    live = batches[:, 2] > 0
    bp = batches[live, 0] / batches[live, 2]
    bs = batches[live, 1] / batches[live, 2]
    k = int(live.sum())

    def se(x):
        return float(np.std(x, ddof=1) / math.sqrt(k)) if k > 1 else math.nan

    return RunStats(
        R_p_hat=float(R_p),
        R_s_hat=float(R_s),
        R_hat=float(w * R_p + (1.0 - w) * R_s),
        stderr=se(w * bp + (1.0 - w) * bs),
        stderr_p=se(bp),
        stderr_s=se(bs),
        ack_count=int(acc[2]),
        nack_count=int(acc[3]),
        transmit_count=int(acc[4]),
        slots=slots,
        trace=trace,
    )


def _trace_dict(trace: np.ndarray, n_channels: int) -> dict:
    return {"state": trace[:, 0].copy(), "action": trace[:, 1].copy(), "ack": trace[:, 2].copy(), "channels": n_channels}


def run_episode(config: SimConfig, episode_index: int = 0, resolved: _Resolved | None = None) -> RunStats:
    """Simulate one episode with the compiled kernels."""
    res = resolved if resolved is not None else resolve_policy(config)
    rng = episode_rng(config.seed, episode_index)
    states, b = _initial(config, rng)
    acc = np.zeros(5)
    batches = np.zeros((N_BATCHES, 3))
    trace = np.zeros((config.horizon if config.record_trace else 1, 3), dtype=np.int8)
    bsize = _batch_size(config)
    burn = config.effective_burn_in
    if config.model2 is None:
        m = config.model
        P = np.ascontiguousarray(m.P)
        # an infinite burst is armed from the first slot (transmit always)
        carry = np.array([float(states[0]), math.inf if math.isinf(res.M) else 0.0])
        for t0, u in _blocks(config, rng):
            _run_single(res.kind, P, m.success.silent_ack, m.success.transmit_ack, m.primary_reward, config.r_s,
                        config.w, res.M, res.domain, res.n, res.actions, res.lookup,
                        u, t0, burn, bsize, b, carry, acc, batches, trace, config.record_trace)
    else:
        m1, m2 = config.model, config.model2
        for m in (m1, m2):
            if not (np.array_equal(m.success.silent_ack, [0, 1]) and np.array_equal(m.success.transmit_ack, [0, 0])):
                raise ConstructionError("two-channel simulation needs erasure channels")
        carry = np.array(states, dtype=float)
        for t0, u in _blocks(config, rng):
            _run_two(res.kind, np.ascontiguousarray(m1.P), np.ascontiguousarray(m2.P), m1.primary_reward,
                     m2.primary_reward, config.r_s, config.w, res.n, res.actions,
                     u, t0, burn, bsize, b, carry, acc, batches, trace, config.record_trace)
    return _finish(config, acc, batches, _trace_dict(trace, config.n_channels) if config.record_trace else None)


def run_episode_reference(config: SimConfig, episode_index: int = 0, resolved: _Resolved | None = None) -> RunStats:
    """Slow engine driving :mod:`arqaccess.policies` handles; same random numbers as :func:`run_episode`."""
    res = resolved if resolved is not None else resolve_policy(config)
    rng = episode_rng(config.seed, episode_index)
    states, b = _initial(config, rng)
    two = config.model2 is not None
    models = [config.model] if not two else [config.model, config.model2]
    kind = config.policy.kind
    handle = pol.init_policy(
        kind, config.model, config.w, config.r_s, model2=config.model2, value_grid=res.value_grid,
        M=res.M if kind == "mpolicy" else None, true_state=tuple(states) if two else states[0],
    )
    if kind not in ("mpolicy", "genie"):
        handle = replace(handle, state=(float(b[0]), float(b[1])) if two else bl.Belief(b))
    acc = np.zeros(5)
    batches = np.zeros((N_BATCHES, 3))
    trace = np.zeros((config.horizon, 3), dtype=np.int8)
    bsize = _batch_size(config)
    burn = config.effective_burn_in
    s = list(states)
    for t0, u in _blocks(config, rng):
        for k in range(u.shape[0]):
            t = t0 + k
            s = [next_state(m.P[x], u[k, c]) for c, (m, x) in enumerate(zip(models, s))]
            a = int(pol.decide(handle))
            if two:
                acks = []
                for c, m in enumerate(models):
                    on_it = a == c + 1
                    acks.append(bool(u[k, 2 + c] < m.success.ack_prob(on_it)[s[c]]))
                rp = sum(m.primary_reward for m, ok in zip(models, acks) if ok)
                n_ack = sum(acks)
                fb = tuple(Feedback(int(x)) for x in acks)
                code_s, code_f = s[0] * 2 + s[1], acks[0] * 2 + acks[1]
            else:
                ok = bool(u[k, 1] < models[0].success.ack_prob(a == 1)[s[0]])
                rp = models[0].primary_reward if ok else 0.0
                n_ack = int(ok)
                fb = Feedback(int(ok))
                code_s, code_f = s[0], int(ok)
            rs = config.r_s if a != 0 else 0.0
            if t >= burn:
                acc += (rp, rs, n_ack, config.n_channels - n_ack, int(a != 0))
                j = min((t - burn) // bsize, N_BATCHES - 1)
                batches[j] += (rp, rs, 1.0)
            trace[t] = (code_s, a, code_f)
            obs = bl.Observation(bl.TwoChannelAction(a) if two else bl.Action(a), fb)
            handle = pol.observe(handle, obs, true_state=tuple(s) if two else s[0])
    return _finish(config, acc, batches, _trace_dict(trace, config.n_channels))


def simulate(config: SimConfig) -> RunStats:
    """Run ``config.replications`` independent episodes and pool them.

    With one replication the standard errors come from batch means.
    """
    res = resolve_policy(config)
    runs = [run_episode(config if e == 0 else replace(config, record_trace=False), e, res) for e in range(config.replications)]
    if len(runs) == 1:
        runs[0].R_reps = np.array([runs[0].R_hat])
        return runs[0]
    n = len(runs)
    rp = np.array([r.R_p_hat for r in runs])
    rs = np.array([r.R_s_hat for r in runs])
    rr = config.w * rp + (1.0 - config.w) * rs

    def se(x):
        return float(np.std(x, ddof=1) / math.sqrt(n))

    R_p, R_s = float(np.mean(rp)), float(np.mean(rs))
    return RunStats(
        R_p_hat=R_p,
        R_s_hat=R_s,
        R_hat=config.w * R_p + (1.0 - config.w) * R_s,
        stderr=se(rr),
        stderr_p=se(rp),
        stderr_s=se(rs),
        ack_count=sum(r.ack_count for r in runs),
        nack_count=sum(r.nack_count for r in runs),
        transmit_count=sum(r.transmit_count for r in runs),
        slots=sum(r.slots for r in runs),
        replications=n,
        trace=runs[0].trace,
        R_reps=rr,
    )


# --- sweeps --------------------------------------------------------------------


def _spec(kind_or_spec) -> PolicySpec:
    return kind_or_spec if isinstance(kind_or_spec, PolicySpec) else PolicySpec(kind_or_spec)


def _fresh(spec: PolicySpec) -> PolicySpec:
    # weight-dependent parts are recomputed per w
    if spec.kind == "dp":
        return replace(spec, value_grid=None)
    return spec


def sweep_weights(base: SimConfig, w_grid: Iterable[float], policy_kinds: Sequence) -> list[dict]:
    """One row per (w, policy) with the columns of :data:`SWEEP_COLUMNS`."""
    rows = []
    for w in w_grid:
        for kind in policy_kinds:
            spec = _fresh(_spec(kind))
            st = simulate(replace(base, w=float(w), policy=spec))
            rows.append({
                "w": float(w), "policy": spec.kind, "R_p": st.R_p_hat, "R_s": st.R_s_hat, "R": st.R_hat,
                "stderr_R": st.stderr, "horizon": base.horizon, "replications": base.replications, "seed": base.seed,
            })
    return rows


def _default_optimal(base: SimConfig) -> PolicySpec:
    m = base.model
    erasure = base.model2 is None and m.s == 2 and np.array_equal(m.success.silent_ack, [0, 1]) and np.array_equal(m.success.transmit_ack, [0, 0])
    return PolicySpec("mpolicy") if erasure else replace(base.policy, kind="dp", value_grid=None)


def _burst(m: float):
    return m if math.isinf(m) else int(m)


def empirical_rate_region(base: SimConfig, w_grid: Iterable[float], policy: PolicySpec | None = None) -> list[dict]:
    """Simulated (R_p, R_s) of the optimal policy for each weight.

    The default policy is the optimal M-burst policy on an erasure channel
    and the grid DP policy otherwise.
    """
    spec = policy if policy is not None else _default_optimal(base)
    out = []
    for w in w_grid:
        cfg = replace(base, w=float(w), policy=_fresh(spec))
        res = resolve_policy(cfg)
        st = simulate(cfg)
        out.append({
            "w": float(w), "M": _burst(res.M) if spec.kind == "mpolicy" else None,
            "R_p": st.R_p_hat, "R_s": st.R_s_hat, "stderr_p": st.stderr_p, "stderr_s": st.stderr_s,
        })
    return out


def pareto_filter(points: Sequence[tuple[float, float]], slack: Sequence[tuple[float, float]] | None = None) -> list[int]:
    """Indices of points not dominated by another point by more than its slack in both coordinates."""
    pts = np.asarray(points, dtype=float)
    sl = np.zeros_like(pts) if slack is None else np.asarray(slack, dtype=float)
    keep = []
    for i, (x, y) in enumerate(pts):
        dominated = np.any(
            (pts[:, 0] - sl[:, 0] > x + sl[i, 0]) & (pts[:, 1] - sl[:, 1] > y + sl[i, 1])
        )
        if not dominated:
            keep.append(i)
    return keep


# --- output --------------------------------------------------------------------


def write_sweep_csv(rows: Sequence[dict], fh, comment: str | None = None) -> None:
    if comment:
        fh.write(f"# {comment}\n")
    writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def write_trace_ndjson(stats: RunStats, fh) -> None:
    """One JSON object per slot: ``{"t", "state", "action", "ack"}``."""
    if stats.trace is None:
        raise ValueError("run was not recorded; set record_trace=True")
    tr = stats.trace
    for t, (s, a, k) in enumerate(zip(tr["state"], tr["action"], tr["ack"])):
        fh.write(json.dumps({"t": t, "state": int(s), "action": int(a), "ack": int(k)}) + "\n")
