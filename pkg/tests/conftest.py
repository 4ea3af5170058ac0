import numpy as np
import pytest

from conedp.cones import OrderingCone
from conedp.control import ControlProblem
from conedp.dp import GridConfig, backward_solve
from conedp.io import load_problem


def desk_dict(p=2, horizon=0.4):
    """xdot = u, u in {-1, 0, 1}; costs (u^2, x^2), or x^2 + u^2 when p = 1."""
    if p == 2:
        terms = [[{"coef": 1.0, "u": [2]}], [{"coef": 1.0, "x": [2]}]]
        m_l = 2 ** 0.5
    else:
        terms = [[{"coef": 1.0, "u": [2]}, {"coef": 1.0, "x": [2]}]]
        m_l = 2.0
    return {
        "state_dim": 1,
        "cost_dim": p,
        "controls": [[-1.0], [0.0], [1.0]],
        "horizon": horizon,
        "dynamics": {"kind": "linear", "B": [[1.0]]},
        "running_cost": {"kind": "polynomial", "terms": terms},
        "constants": {"K_f": 1.0, "M_f": 1.0, "K_L": 2.0, "M_L": m_l},
        "name": "desk",
    }


def make_desk(p=2, horizon=0.4, step=0.2, spacing=0.1, box=(-1.0, 1.0)):
    prob = ControlProblem.from_dict(desk_dict(p, horizon))
    cfg = GridConfig(step=step, box=(tuple(box),), spacing=(spacing,))
    cone = OrderingCone.orthant(p)
    return prob, cfg, cone


@pytest.fixture(scope="session")
def desk2():
    prob, cfg, cone = make_desk(2)
    return prob, cfg, cone, backward_solve(prob, cone, cfg)


@pytest.fixture(scope="session")
def desk1_scalar():
    prob, cfg, cone = make_desk(1, horizon=1.0, step=0.1, spacing=0.05)
    return prob, cfg, cone, backward_solve(prob, cone, cfg)


@pytest.fixture(scope="session")
def desk2_long():
    prob, cfg, cone = make_desk(2, horizon=1.0, step=0.1, spacing=0.05, box=(-2.0, 2.0))
    return prob, cfg, cone, backward_solve(prob, cone, cfg)


@pytest.fixture(scope="session")
def solved_bundled():
    """Solve bundled problems lazily and keep the fields for the session."""
    cache = {}

    def get(name):
        if name not in cache:
            pf = load_problem(name)
            cache[name] = (pf, backward_solve(pf.problem, pf.cone, pf.grid))
        return cache[name]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
