import math

import numpy as np
import pytest
from scipy import ndimage

from arqaccess import closedform as cf
from arqaccess import dp
from arqaccess.belief import Action
from arqaccess.channel import erasure, gilbert_elliot, three_state
from arqaccess.errors import InvariantViolation, PreconditionError

GAMMAS = (0.2, 0.01, 0.95, 0.3)


@pytest.fixture(scope="module")
def two_state_06():
    params = dp.SolverParams(0.6)
    return params, dp.solve(erasure(), params)


def test_solver_params_validation():
    with pytest.raises(PreconditionError):
        dp.SolverParams(0.5, alpha=1.0)
    with pytest.raises(PreconditionError):
        dp.SolverParams(1.5)
    with pytest.raises(PreconditionError):
        dp.SolverParams(0.5, grid_resolution=1)
    assert dp.SolverParams(0.5).resolution(1) == 1025
    assert dp.SolverParams(0.5).resolution(2) == 257


def test_always_transmit_regime_geometric_value():
    params = dp.SolverParams(0.3, alpha=0.99, grid_resolution=129)
    vg = dp.solve_two_state(erasure(), params)
    assert np.all(vg.actions == Action.TRANSMIT)
    assert np.allclose(vg.values, 0.7 / 0.01, rtol=1e-9)


def test_endpoint_actions(two_state_06):
    _, vg = two_state_06
    assert vg.actions[0] == Action.LISTEN
    assert vg.actions[-1] == Action.TRANSMIT


def test_bellman_residual_and_contraction(two_state_06):
    params, vg = two_state_06
    assert vg.residual < params.tolerance
    h = vg.delta_history
    slack = 2 * vg.interpolation_error_bound()
    assert np.all(h[1:] <= params.alpha * h[:-1] + slack + 1e-12)


def test_two_state_monotone_convex(two_state_06):
    _, vg = two_state_06
    v = vg.values
    assert np.all(np.diff(v) <= 1e-9)
    assert np.all(v[1:-1] <= 0.5 * (v[:-2] + v[2:]) + 1e-9)
    assert len(dp.crossings(vg.actions)) == 1


def test_extract_threshold_bounds(two_state_06):
    params, vg = two_state_06
    rep = dp.extract_threshold(vg, params, erasure())
    assert rep.lower_bound == pytest.approx(1 / 3)
    assert rep.upper_bound == pytest.approx(1 - (2 / 3) * 0.01)
    assert rep.within_bounds() and rep.within_stationary_bracket()
    assert rep.cell[0] < rep.p_th < rep.cell[1]


def test_extract_threshold_all_transmit():
    params = dp.SolverParams(0.4, grid_resolution=65)
    rep = dp.extract_threshold(dp.solve(erasure(), params), params, erasure())
    assert rep == dp.AllSameActionReport("transmit")


def test_extract_threshold_rejects_multiple_crossings():
    vg = dp.ValueGrid("interval", 5, np.zeros(5), [0, 1, 0, 1, 1])
    with pytest.raises(InvariantViolation):
        dp.extract_threshold(vg, dp.SolverParams(0.6), erasure())
    vg = dp.ValueGrid("interval", 5, np.zeros(5), [1, 1, 0, 0, 0])
    with pytest.raises(InvariantViolation):
        dp.extract_threshold(vg, dp.SolverParams(0.6), erasure())


def test_effective_m_matches_optimal_m(two_state_06):
    _, vg = two_state_06
    mstar = cf.optimal_m(cf.MPolicyParams(0.99, 0.01, 0.6))
    assert abs(dp.effective_m(vg, erasure()) - mstar) <= 1


def test_alpha_zero_is_myopic():
    params = dp.SolverParams(0.7, alpha=0.0, grid_resolution=101)
    vg = dp.solve_two_state(erasure(), params)
    p = vg.points[:, 0]
    listen, tx = 0.7 * (1 - p), np.full_like(p, 0.3)
    assert np.allclose(vg.values, np.maximum(listen, tx), atol=1e-15)
    assert np.array_equal(vg.actions, (tx > listen + dp.TIE_TOL).astype(int))


def test_gilbert_elliot_one_step_value():
    params = dp.SolverParams(0.7, alpha=0.0, grid_resolution=101)
    vg = dp.solve_gilbert_elliot(gilbert_elliot(), params)
    p = vg.points[:, 0]
    g1, g2, g3, g4 = GAMMAS
    want = np.maximum(0.7 * (g1 * p + g3 * (1 - p)), 0.3 + 0.7 * (g2 * p + g4 * (1 - p)))
    assert np.allclose(vg.values, want, atol=1e-15)


@pytest.mark.parametrize("w, n_cross", [(0.6, None), (0.7, 1)])
def test_gilbert_elliot_crossings(w, n_cross):
    vg = dp.solve_gilbert_elliot(gilbert_elliot(), dp.SolverParams(w))
    c = len(dp.crossings(vg.actions))
    assert c <= 1
    if n_cross is not None:
        assert c == n_cross
    v = vg.values
    assert np.all(np.diff(v) <= 1e-9)
    assert np.all(v[1:-1] <= 0.5 * (v[:-2] + v[2:]) + 1e-9)


def test_gilbert_elliot_assumption_check():
    with pytest.raises(PreconditionError):
        dp.solve_gilbert_elliot(gilbert_elliot(gammas=(0.9, 0.01, 0.2, 0.3)), dp.SolverParams(0.6))


def test_grid_refinement_first_order():
    m = erasure(0.9, 0.1)
    v = {n: dp.solve_two_state(m, dp.SolverParams(0.7, alpha=0.95, grid_resolution=n)).values for n in (65, 129, 257)}
    d1 = np.max(np.abs(v[129][::2] - v[65]))
    d2 = np.max(np.abs(v[257][::4] - v[129][::2]))
    assert d2 < 4 * d1


def test_three_state_one_step_value():
    params = dp.SolverParams(0.6, alpha=0.0, grid_resolution=33)
    vg = dp.solve_three_state(three_state(), params)
    p, q = vg.points.T
    assert np.allclose(vg.values, np.maximum(0.6 * (p + q), 0.4 + 0.6 * q), atol=1e-15)


def test_three_state_structure():
    vg = dp.solve_three_state(three_state(), dp.SolverParams(0.6, grid_resolution=65))
    p, q = vg.points.T
    assert np.all(vg.actions[np.isclose(q, 1.0)] == Action.TRANSMIT)
    assert vg.residual < 1e-10
    vg1 = dp.solve_three_state(three_state(), dp.SolverParams(1.0, grid_resolution=65))
    assert np.all(vg1.actions[p > 0] == Action.LISTEN)


def test_two_channel_symmetry_and_regions():
    params = dp.SolverParams(0.6, grid_resolution=129)
    vg = dp.solve(erasure(), params, erasure())
    g = vg.grid
    V, A = g.as_matrix(vg.values), g.as_matrix(vg.actions)
    assert np.max(np.abs(V - V.T)) < 1e-8 * np.max(np.abs(V))
    mirror = np.array([0, 2, 1])[A.T]
    off = ~np.eye(g.n, dtype=bool)
    assert np.array_equal(mirror[off], A[off])
    # on p = q the two transmit actions tie and channel 1 wins
    assert set(np.unique(np.diag(A))) <= {0, 1}
    n_regions = sum(ndimage.label(A == a)[1] for a in range(3))
    assert n_regions == 3


def test_two_channel_w0_never_listens():
    vg = dp.solve(erasure(), dp.SolverParams(0.0, grid_resolution=33), erasure())
    assert np.all(vg.actions != 0)


def test_value_grid_json_round_trip(two_state_06):
    _, vg = two_state_06
    again = dp.ValueGrid.from_json(vg.to_json())
    assert np.array_equal(again.values, vg.values)
    assert np.array_equal(again.actions, vg.actions)
    assert again.domain == "interval" and again.resolution == 1025
    bad = vg.to_dict() | {"version": 99}
    with pytest.raises(ValueError):
        dp.ValueGrid.from_dict(bad)


def test_solver_preconditions():
    with pytest.raises(PreconditionError):
        dp.solve_two_state(gilbert_elliot(), dp.SolverParams(0.6))
    with pytest.raises(PreconditionError):
        dp.solve_three_state(erasure(), dp.SolverParams(0.6))
    with pytest.raises(PreconditionError):
        dp.solve_two_channel(erasure(), three_state(), dp.SolverParams(0.6))


def test_appendix_bounds_formula():
    assert dp.appendix_bounds(0.6, 1, 1, 0.01) == pytest.approx((1 / 3, 1 - 0.01 * 2 / 3))
