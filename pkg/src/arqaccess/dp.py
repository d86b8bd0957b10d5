"""Grid-based discounted value iteration over belief space.

Each solver tabulates, for every grid node and action, the immediate
weighted reward and the (probability, successor belief) branches of the
model's Bellman equation.  Successors are spread onto grid nodes with
linear interpolation weights, giving one sparse row-substochastic matrix
per action; value iteration is then ``V <- max_a (r_a + alpha T_a V)``.

Iteration stops when the sup-norm change drops below ``tolerance``.  When
the change has become (nearly) constant across nodes, the remaining
geometric tail is added in one step using the standard span bounds
``V* in V + alpha/(1-alpha) [min dV, max dV]``; the returned values still
satisfy the sup-norm Bellman residual check.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import sparse

from . import belief as bl
from .channel import ChannelModel, Feedback
from .errors import InvariantViolation, PreconditionError, SolverError
from .grids import Grid, IntervalGrid, SimplexGrid, SquareGrid, make_grid

TIE_TOL = 1e-9
FORMAT_VERSION = 1

SINGLE_ACTIONS = ("listen", "transmit")
TWO_CHANNEL_ACTIONS = ("listen_both", "tx_ch1", "tx_ch2")


@dataclass(frozen=True)
class SolverParams:
    w: float
    alpha: float = 0.999
    r_s: float = 1.0
    grid_resolution: int | None = None
    tolerance: float = 1e-10
    max_iterations: int = 1_000_000

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise PreconditionError("alpha must lie in [0, 1)")
        if not 0.0 <= self.w <= 1.0:
            raise PreconditionError("w must lie in [0, 1]")
        if self.r_s < 0:
            raise PreconditionError("r_s must be non-negative")
        if self.grid_resolution is not None and self.grid_resolution < 2:
            raise PreconditionError("grid_resolution must be >= 2")
        if not self.tolerance > 0:
            raise PreconditionError("tolerance must be positive")

    def resolution(self, dim: int) -> int:
        if self.grid_resolution is not None:
            return self.grid_resolution
        return 1025 if dim == 1 else 257


@dataclass(eq=False)
class ValueGrid:
    """Solved value function and greedy action on a belief grid."""

    domain: str
    resolution: int
    values: np.ndarray
    actions: np.ndarray
    action_names: tuple[str, ...] = SINGLE_ACTIONS
    iterations: int = 0
    converged: bool = True
    residual: float = 0.0
    delta_history: np.ndarray = field(default_factory=lambda: np.zeros(0))
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.values.setflags(write=False)
        self.actions.setflags(write=False)

    @property
    def grid(self) -> Grid:
        g = self.__dict__.get("_grid")
        if g is None:
            g = make_grid(self.domain, self.resolution)
            self.__dict__["_grid"] = g
        return g

    @property
    def points(self) -> np.ndarray:
        return self.grid.points

    def value_at(self, points) -> np.ndarray:
        return self.grid.interpolate(self.values, points)

    def action_at(self, points) -> np.ndarray:
        """Action stored at the nearest grid node."""
        return self.actions[self.grid.nearest(points)]

    def interpolation_error_bound(self) -> float:
        """Estimated max linear-interpolation error, from second differences of V."""
        if self.domain == "interval":
            d2 = np.abs(np.diff(self.values, 2))
        else:
            m = self.grid.as_matrix(self.values)
            d2 = np.concatenate([np.abs(np.diff(m, 2, axis=0)).ravel(), np.abs(np.diff(m, 2, axis=1)).ravel()])
            d2 = d2[np.isfinite(d2)]
        return float(d2.max() / 8.0) if d2.size else 0.0

    def to_dict(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "domain": self.domain,
            "resolution": self.resolution,
            "values": self.values.tolist(),
            "actions": self.actions.tolist(),
            "action_names": list(self.action_names),
            "iterations": self.iterations,
            "converged": self.converged,
            "residual": self.residual,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ValueGrid":
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported value-grid format version {d.get('version')!r}")
        return cls(
            domain=d["domain"],
            resolution=int(d["resolution"]),
            values=np.asarray(d["values"], dtype=float),
            actions=np.asarray(d["actions"], dtype=np.int64),
            action_names=tuple(d.get("action_names", SINGLE_ACTIONS)),
            iterations=int(d.get("iterations", 0)),
            converged=bool(d.get("converged", True)),
            residual=float(d.get("residual", 0.0)),
            meta=d.get("meta", {}),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ValueGrid":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ThresholdReport:
    p_th: float
    lower_bound: float | None = None
    upper_bound: float | None = None
    stationary_lower: float | None = None
    stationary_upper: float | None = None
    cell: tuple[float, float] = (0.0, 0.0)

    def within_bounds(self) -> bool:
        ok = True
        if self.lower_bound is not None:
            ok &= self.lower_bound < self.p_th < self.upper_bound
        return bool(ok)

    def within_stationary_bracket(self) -> bool:
        if self.stationary_lower is None:
            return True
        return bool(self.stationary_lower < self.p_th < self.stationary_upper)


@dataclass(frozen=True)
class AllSameActionReport:
    action: str


# --- Bellman tables ---------------------------------------------------------


@dataclass
class _ActionTable:
    reward: np.ndarray
    branches: list[tuple[np.ndarray, np.ndarray]]  # (prob (N,), successor points (N, d))


def _transition_matrix(grid: Grid, branches) -> sparse.csr_matrix:
    n = grid.size
    rows, cols, vals = [], [], []
    for prob, succ in branches:
        live = prob > 0
        if not np.any(live):
            continue
        idx, w = grid.weights(succ[live])
        k = idx.shape[1]
        rows.append(np.repeat(np.flatnonzero(live), k))
        cols.append(idx.ravel())
        vals.append((prob[live, None] * w).ravel())
    if not rows:
        return sparse.csr_matrix((n, n))
    return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def _greedy_argmax(Q: np.ndarray) -> np.ndarray:
    """Index of the best action; earlier actions win ties within TIE_TOL."""
    best = Q.max(axis=0)
    return np.argmax(Q >= best - TIE_TOL, axis=0)


def value_iteration(
    rewards: list[np.ndarray],
    transitions: list[sparse.csr_matrix],
    params: SolverParams,
    v0: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, int, float, np.ndarray]:
    """Iterate ``V <- max_a (r_a + alpha T_a V)`` from ``v0``.

    Returns (values, actions, iterations, residual, sup-norm delta history).
    """
    alpha, tol = params.alpha, params.tolerance
    R = np.vstack(rewards)
    v0 = np.asarray(v0, dtype=float)
    # V = h + c with a scalar offset c keeps h O(1), so span noise stays ~1e-16
    c = float(v0[0])
    h = v0 - c
    history = []
    stretch = alpha / (1.0 - alpha)

    def bellman(v):
        return R + alpha * np.vstack([T @ v for T in transitions])

    for it in range(1, params.max_iterations + 1):
        th = bellman(h).max(axis=0)
        ref = float(th[0])
        h_new = th - ref
        c_new = alpha * c + ref
        d = h_new - h
        dc = c_new - c
        lo, hi = float(d.min()) + dc, float(d.max()) + dc
        sup = max(abs(lo), abs(hi))
        history.append(sup)
        if sup < tol:
            h, c = h_new, c_new
            break
        if alpha > 0 and stretch * (hi - lo) < tol:
            h, c = h_new, c_new + stretch * 0.5 * (hi + lo)
            break
        h, c = h_new, c_new
    else:
        raise SolverError(f"value iteration did not converge in {params.max_iterations} iterations")
    V = h + c
    Q = bellman(V)
    residual = float(np.abs(Q.max(axis=0) - V).max())
    return V, _greedy_argmax(Q), it, residual, np.asarray(history)


def _solve(grid: Grid, tables: list[_ActionTable], params: SolverParams, names, meta) -> ValueGrid:
    rewards = [t.reward for t in tables]
    transitions = [_transition_matrix(grid, t.branches) for t in tables]
    v0 = np.max(np.vstack(rewards), axis=0)  # myopic one-step value
    V, actions, iters, residual, hist = value_iteration(rewards, transitions, params, v0)
    return ValueGrid(
        domain=grid.domain,
        resolution=grid.n,
        values=V,
        actions=actions,
        action_names=names,
        iterations=iters,
        converged=True,
        residual=residual,
        delta_history=hist,
        meta=meta,
    )


def _meta(params: SolverParams, *models: ChannelModel) -> dict:
    return {
        "w": params.w,
        "alpha": params.alpha,
        "r_s": params.r_s,
        "tolerance": params.tolerance,
        "models": [m.to_dict() for m in models],
    }


def _scalar_branches(grid, update: Callable[[float, bl.Observation], float], prob_fn):
    """Branches for a 1-D belief; ``prob_fn(p, action, feedback)`` gives outcome probabilities."""
    p = grid.points[:, 0]
    out = {}
    for a in bl.Action:
        branches = []
        for fb in Feedback:
            prob = np.array([prob_fn(x, a, fb) for x in p])
            prob[prob < 0] = 0.0
            succ = np.array([update(x, bl.Observation(a, fb)) if pr > 0 else x for x, pr in zip(p, prob)])
            branches.append((prob, succ[:, None]))
        out[a] = branches
    return out


# --- model solvers -------------------------------------------------------------


def _is_erasure(model: ChannelModel) -> bool:
    return (
        model.s == 2
        and np.array_equal(model.success.silent_ack, [0.0, 1.0])
        and np.array_equal(model.success.transmit_ack, [0.0, 0.0])
    )


def _two_state_params(model: ChannelModel) -> tuple[float, float]:
    return float(model.P[0, 0]), float(model.P[1, 0])


def solve_two_state(model: ChannelModel, params: SolverParams) -> ValueGrid:
    """Erasure/non-erasure channel; belief is p = P(E).

    Listen: reward w r_p (1-p); ACK (prob 1-p) -> P_NE, NACK (prob p) -> P_EE.
    Transmit: reward (1-w) r_s; belief propagates to p P_EE + (1-p) P_NE.
    """
    if not _is_erasure(model):
        raise PreconditionError("solve_two_state needs an erasure/non-erasure model")
    p_ee, p_ne = _two_state_params(model)
    if not p_ee > p_ne:
        raise PreconditionError("solve_two_state needs P_EE > P_NE")
    grid = IntervalGrid(params.resolution(1))
    p = grid.points[:, 0]
    w, r_p, r_s = params.w, model.primary_reward, params.r_s

    def prob(x, a, fb):
        if a is bl.Action.TRANSMIT:
            return 1.0 if fb is Feedback.NACK else 0.0
        return 1.0 - x if fb is Feedback.ACK else x

    br = _scalar_branches(grid, lambda x, o: bl.update_two_state_erasure(x, o, p_ee, p_ne), prob)
    tables = [
        _ActionTable(w * r_p * (1.0 - p), br[bl.Action.LISTEN]),
        _ActionTable(np.full_like(p, (1.0 - w) * r_s), br[bl.Action.TRANSMIT]),
    ]
    return _solve(grid, tables, params, SINGLE_ACTIONS, {"model_kind": "erasure", **_meta(params, model)})


def solve_gilbert_elliot(model: ChannelModel, params: SolverParams, *, check_assumptions: bool = True) -> ValueGrid:
    """Two-state channel with general ACK probabilities; belief is p = P(B)."""
    if model.s != 2:
        raise PreconditionError("solve_gilbert_elliot needs a two-state model")
    p_ee, p_ne = _two_state_params(model)
    g1, g3 = model.success.silent_ack
    g2, g4 = model.success.transmit_ack
    gammas = (g1, g2, g3, g4)
    if check_assumptions and not (p_ee > p_ne and g3 > g1 and g4 >= g2):
        raise PreconditionError("needs P_EE > P_NE, gamma3 > gamma1 and gamma4 >= gamma2")
    grid = IntervalGrid(params.resolution(1))
    p = grid.points[:, 0]
    w, r_p, r_s = params.w, model.primary_reward, params.r_s

    def prob(x, a, fb):
        ack = g2 * x + g4 * (1 - x) if a is bl.Action.TRANSMIT else g1 * x + g3 * (1 - x)
        return ack if fb is Feedback.ACK else 1.0 - ack

    br = _scalar_branches(grid, lambda x, o: bl.update_gilbert_elliot(x, o, p_ee, p_ne, gammas), prob)
    tables = [
        _ActionTable(w * r_p * (g1 * p + g3 * (1 - p)), br[bl.Action.LISTEN]),
        _ActionTable((1.0 - w) * r_s + w * r_p * (g2 * p + g4 * (1 - p)), br[bl.Action.TRANSMIT]),
    ]
    return _solve(grid, tables, params, SINGLE_ACTIONS, {"model_kind": "gilbert_elliot", **_meta(params, model)})


def _is_three_state(model: ChannelModel) -> bool:
    return (
        model.s == 3
        and np.array_equal(model.success.silent_ack, [0.0, 1.0, 1.0])
        and np.array_equal(model.success.transmit_ack, [0.0, 0.0, 1.0])
    )


def solve_three_state(model: ChannelModel, params: SolverParams) -> ValueGrid:
    """Bad/Good/Very-good channel on the (p, q) = (P(G), P(Vg)) simplex.

    Listen: reward w r_p (p+q); NACK w.p. 1-p-q, ACK w.p. p+q.
    Transmit: reward (1-w) r_s + w r_p q; ACK w.p. q, NACK w.p. 1-q.
    """
    if not _is_three_state(model):
        raise PreconditionError("solve_three_state needs the B/G/Vg model")
    grid = SimplexGrid(params.resolution(2))
    pts = grid.points
    p, q = pts[:, 0], pts[:, 1]
    w, r_p, r_s = params.w, model.primary_reward, params.r_s
    P = model.P
    outcome = {
        (bl.Action.LISTEN, Feedback.NACK): np.clip(1.0 - p - q, 0.0, None),
        (bl.Action.LISTEN, Feedback.ACK): p + q,
        (bl.Action.TRANSMIT, Feedback.ACK): q,
        (bl.Action.TRANSMIT, Feedback.NACK): 1.0 - q,
    }
    tables = []
    rewards = {bl.Action.LISTEN: w * r_p * (p + q), bl.Action.TRANSMIT: (1.0 - w) * r_s + w * r_p * q}
    for a in bl.Action:
        branches = []
        for fb in (Feedback.NACK, Feedback.ACK):
            prob = outcome[(a, fb)].copy()
            prob[prob <= 1e-15] = 0.0
            obs = bl.Observation(a, fb)
            succ = np.array(
                [bl.update_three_state((x, y), obs, P) if pr > 0 else (x, y) for x, y, pr in zip(p, q, prob)]
            )
            branches.append((prob, succ))
        tables.append(_ActionTable(rewards[a], branches))
    return _solve(grid, tables, params, SINGLE_ACTIONS, {"model_kind": "three_state", **_meta(params, model)})


def solve_two_channel(model1: ChannelModel, model2: ChannelModel, params: SolverParams) -> ValueGrid:
    """Two independent erasure channels on the (p, q) unit square.

    Actions: listen to both, transmit on channel 1, transmit on channel 2.
    """
    if not (_is_erasure(model1) and _is_erasure(model2)):
        raise PreconditionError("solve_two_channel needs two erasure models")
    grid = SquareGrid(params.resolution(2))
    n = grid.n
    axis = np.linspace(0.0, 1.0, n)
    pts = grid.points
    p, q = pts[:, 0], pts[:, 1]
    w, r_s = params.w, params.r_s
    r1, r2 = model1.primary_reward, model2.primary_reward
    ch = [_two_state_params(model1), _two_state_params(model2)]

    # Per-axis successor coordinates and outcome probabilities; the joint
    # branches are products because the channels are independent.
    def axis_outcomes(k: int, transmit: bool):
        p_ee, p_ne = ch[k]
        if transmit:
            succ = np.array([bl.update_two_state_erasure(x, bl.Observation(bl.Action.TRANSMIT, Feedback.NACK), p_ee, p_ne) for x in axis])
            return [(np.ones(n), succ)]
        out = []
        for fb in (Feedback.ACK, Feedback.NACK):
            prob = 1.0 - axis if fb is Feedback.ACK else axis.copy()
            succ = np.array([
                bl.update_two_state_erasure(x, bl.Observation(bl.Action.LISTEN, fb), p_ee, p_ne) if pr > 0 else x
                for x, pr in zip(axis, prob)
            ])
            out.append((prob, succ))
        return out

    ii = np.repeat(np.arange(n), n)
    jj = np.tile(np.arange(n), n)

    def joint(tx1: bool, tx2: bool):
        branches = []
        for pr1, s1 in axis_outcomes(0, tx1):
            for pr2, s2 in axis_outcomes(1, tx2):
                branches.append((pr1[ii] * pr2[jj], np.column_stack([s1[ii], s2[jj]])))
        return branches

    tables = [
        _ActionTable(w * (r1 * (1 - p) + r2 * (1 - q)), joint(False, False)),
        _ActionTable((1 - w) * r_s + w * r2 * (1 - q), joint(True, False)),
        _ActionTable((1 - w) * r_s + w * r1 * (1 - p), joint(False, True)),
    ]
    return _solve(grid, tables, params, TWO_CHANNEL_ACTIONS, {"model_kind": "two_channel", **_meta(params, model1, model2)})


def solve(model: ChannelModel, params: SolverParams, model2: ChannelModel | None = None) -> ValueGrid:
    """Dispatch to the solver matching the model structure."""
    if model2 is not None:
        return solve_two_channel(model, model2, params)
    if _is_erasure(model):
        return solve_two_state(model, params)
    if _is_three_state(model):
        return solve_three_state(model, params)
    if model.s == 2:
        return solve_gilbert_elliot(model, params, check_assumptions=False)
    raise PreconditionError(f"no grid solver for a {model.s}-state general model")


# --- threshold structure ----------------------------------------------------


def crossings(actions: np.ndarray) -> np.ndarray:
    """Indices i where actions[i] != actions[i + 1]."""
    return np.flatnonzero(np.diff(np.asarray(actions)) != 0)


def appendix_bounds(w: float, r_p: float, r_s: float, p_ne: float) -> tuple[float, float]:
    """Analytic bracket on the switching belief: (1 - c, 1 - c P_NE), c = (1-w) r_s / (w r_p)."""
    c = (1.0 - w) * r_s / (w * r_p)
    return 1.0 - c, 1.0 - c * p_ne


def extract_threshold(grid: ValueGrid, params: SolverParams, model: ChannelModel):
    """Locate the single listen -> transmit switch on a 1-D action grid.

    Returns :class:`AllSameActionReport` when no switch occurs and raises
    :class:`InvariantViolation` on more than one switch or a
    transmit -> listen switch.
    """
    if grid.domain != "interval":
        raise PreconditionError("threshold extraction needs a 1-D value grid")
    acts = grid.actions
    cx = crossings(acts)
    if cx.size == 0:
        return AllSameActionReport(grid.action_names[int(acts[0])])
    if cx.size > 1:
        raise InvariantViolation(f"action grid switches {cx.size} times")
    i = int(cx[0])
    if not (acts[i] == bl.Action.LISTEN and acts[i + 1] == bl.Action.TRANSMIT):
        raise InvariantViolation("action switches from transmit to listen as p grows")
    x = grid.points[:, 0]
    p_th = 0.5 * (x[i] + x[i + 1])
    lower = upper = st_lo = st_hi = None
    if _is_erasure(model) and params.w > 0 and model.primary_reward > 0:
        p_ee, p_ne = _two_state_params(model)
        lower, upper = appendix_bounds(params.w, model.primary_reward, params.r_s, p_ne)
        st_lo, st_hi = p_ne / (p_ne + 1.0 - p_ee), p_ee
    return ThresholdReport(p_th, lower, upper, st_lo, st_hi, (float(x[i]), float(x[i + 1])))


def effective_m(grid: ValueGrid, model: ChannelModel, max_slots: int = 100_000) -> float:
    """Number of consecutive transmissions the 1-D policy makes after a silent NACK.

    Starts at p = P_EE and propagates while the stored action is transmit;
    returns ``inf`` if the belief settles inside the transmit region.
    """
    p_ee, p_ne = _two_state_params(model)
    p_stat = p_ne / (p_ne + 1.0 - p_ee)
    p = p_ee
    count = 0
    while grid.action_at([p])[0] == bl.Action.TRANSMIT:
        count += 1
        p = bl.propagate(p, p_ee, p_ne)
        if count >= max_slots or abs(p - p_stat) < 1e-12:
            return math.inf
    return float(count)
