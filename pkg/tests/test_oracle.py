import numpy as np
import pytest

from conedp.control import ControlProblem, EnumerationCapError, objective_cloud
from conedp.cones import OrderingCone
from conedp.dp import GridConfig
from conedp.oracle import enumerate_front, scalar_dp

from conftest import desk_dict, make_desk


def linear_problem(cost, controls, p, horizon=1.0):
    return ControlProblem.from_dict({
        "state_dim": 1, "cost_dim": p, "controls": controls, "horizon": horizon,
        "dynamics": {"kind": "linear", "B": [[1.0]]}, "running_cost": cost,
        "constants": {"K_f": 1.0, "M_f": 1.0, "K_L": 1.0, "M_L": 1.0},
    })


def test_single_control_single_step():
    prob = ControlProblem.from_dict({**desk_dict(2, horizon=0.2), "controls": [[1.0]]})
    res = enumerate_front(prob, OrderingCone.orthant(2), 0.0, [0.3], 0.2)
    assert res.count == 1
    # (u^2 h, integral of (0.3 + s)^2 over [0, 0.2])
    np.testing.assert_allclose(res.front.points, [[0.2, (0.5 ** 3 - 0.3 ** 3) / 3]], atol=1e-15)


def test_hand_enumerated_four_sequences():
    prob = linear_problem({"kind": "linear", "B": [[0.5], [-0.5]], "c": [0.5, 0.5]}, [[-1.0], [1.0]], 2)
    res = enumerate_front(prob, OrderingCone.orthant(2), 0.0, [0.0], 0.5)
    assert res.count == 4
    np.testing.assert_allclose(res.front.points, [[0, 1], [0.5, 0.5], [1, 0]], atol=1e-15)
    assert res.wall_time >= 0.0


def test_scalar_front_is_the_minimum():
    prob, _, cone = make_desk(1)
    res = enumerate_front(prob, cone, 0.0, [0.5], 0.2)
    assert len(res.front) == 1
    assert res.front.points[0, 0] == pytest.approx(res.costs.min(), abs=0)
    assert res.front.points[0, 0] == pytest.approx(0.1, abs=1e-15)


def test_cloud_matches_objective_cloud():
    prob, _, cone = make_desk(2, horizon=0.6)
    res = enumerate_front(prob, cone, 0.0, [0.25], 0.2)
    np.testing.assert_array_equal(res.cloud.points, objective_cloud(prob, 0.0, [0.25], 0.2).cloud.points)


def test_cap_is_enforced():
    prob, _, cone = make_desk(2, horizon=1.0)
    with pytest.raises(EnumerationCapError):
        enumerate_front(prob, cone, 0.0, [0.0], 0.1, cap=1000)


def test_scalar_dp_zero_and_constant_costs():
    cfg = GridConfig(step=0.1, box=((-1.0, 1.0),), spacing=(0.1,))
    zero = linear_problem({"kind": "linear"}, [[0.0]], 1)
    np.testing.assert_array_equal(scalar_dp(zero, cfg), 0.0)
    const = linear_problem({"kind": "linear", "c": [0.7]}, [[0.0]], 1)
    table = scalar_dp(const, cfg)
    expected = 0.7 * (1.0 - 0.1 * np.arange(11))
    np.testing.assert_allclose(table, np.repeat(expected[:, None], 21, axis=1), atol=1e-12)


def test_scalar_dp_rejects_vector_costs():
    prob, cfg, _ = make_desk(2)
    with pytest.raises(ValueError):
        scalar_dp(prob, cfg)


def test_scalar_desk_table_closed_form():
    """Backward recursion with exact step integrals x^2 h + x u h^2 + u^2 h^3/3 + u^2 h."""
    prob, cfg, _ = make_desk(1)
    table = scalar_dp(prob, cfg)
    h, nodes = 0.2, cfg.state_grid().nodes()[:, 0]
    expected = np.full((3, len(nodes)), np.nan)
    expected[2] = 0.0
    for i in (1, 0):
        for j, x in enumerate(nodes):
            best = np.inf
            for u in (-1.0, 0.0, 1.0):
                k = int(round((x + u * h + 1.0) / 0.1))
                if not 0 <= k < len(nodes) or np.isnan(expected[i + 1, k]):
                    best = np.nan
                    break
                best = min(best, x * x * h + x * u * h * h + u * u * h ** 3 / 3 + u * u * h + expected[i + 1, k])
            expected[i, j] = best
    np.testing.assert_allclose(table, expected, atol=1e-15, equal_nan=True)
    # pinned values at t = 0
    j = {round(x, 6): j for j, x in enumerate(nodes)}
    assert table[0, j[0.5]] == pytest.approx(0.1, abs=1e-15)
    assert table[0, j[0.0]] == 0.0
    assert table[0, j[0.6]] == pytest.approx(0.144, abs=1e-15)
    # two unit-speed steps of 0.2 must stay in [-1, 1]: |x| <= 0.6 at t = 0
    assert np.isnan(table[0, j[0.7]])
    assert np.isfinite(table[0]).sum() == 13
