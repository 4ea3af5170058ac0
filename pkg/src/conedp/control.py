"""Finite-horizon control problems with vector-valued running costs.

Dynamics and costs are vectorised callables ``g(X, U)`` taking states of
shape (..., n) and controls of shape (..., m).  Problems loaded from JSON use
the coefficient-table kinds built by :func:`build_map`; no user code is ever
evaluated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._validation import as_points, as_vector
from .pareto import PointCloud, directed_distance
from .tolerances import ENUMERATION_CAP

__all__ = [
    "ControlProblem",
    "ControlSequence",
    "Trajectory",
    "NumericalError",
    "ConfigurationError",
    "EnumerationCapError",
    "build_map",
    "rk4_step",
    "integrate",
    "time_steps",
    "check_constants",
    "check_trajectory_estimate",
    "check_cost_estimate",
    "check_objective_estimate",
    "EstimateReport",
    "ObjectiveCloud",
    "objective_cloud",
    "rollout_all",
]


class NumericalError(RuntimeError):
    """Non-finite values produced by dynamics or cost."""


class ConfigurationError(ValueError):
    """Declared problem constants contradicted by probes."""


class EnumerationCapError(RuntimeError):
    pass


MapFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


# -- coefficient-table maps ---------------------------------------------------

def _linear(spec, n, m, out):
    a = np.asarray(spec.get("A", np.zeros((out, n))), dtype=float).reshape(out, n)
    b = np.asarray(spec.get("B", np.zeros((out, m))), dtype=float).reshape(out, m)
    c = np.asarray(spec.get("c", np.zeros(out)), dtype=float).reshape(out)
    mats = spec.get("N")
    n_mats = None
    if mats is not None:
        n_mats = np.asarray(mats, dtype=float).reshape(m, out, n)

    def fn(x, u):
        y = x @ a.T + u @ b.T + c
        if n_mats is not None:
            y = y + np.einsum("...k,kij,...j->...i", u, n_mats, x)
        return y

    return fn


def _term_monomial(term, n, m):
    xp = np.asarray(term.get("x", [0] * n), dtype=float).reshape(n)
    up = np.asarray(term.get("u", [0] * m), dtype=float).reshape(m)
    return xp, up


def _polynomial(spec, n, m, out):
    rows = spec["terms"]
    if len(rows) != out:
        raise ValueError(f"polynomial needs {out} term lists, got {len(rows)}")
    tables = [[(float(t["coef"]),) + _term_monomial(t, n, m) for t in row] for row in rows]

    def fn(x, u):
        y = np.zeros(np.broadcast_shapes(x.shape[:-1], u.shape[:-1]) + (out,))
        for i, row in enumerate(tables):
            for coef, xp, up in row:
                y[..., i] += coef * np.prod(x ** xp, axis=-1) * np.prod(u ** up, axis=-1)
        return y

    return fn


def _trig(spec, n, m, out):
    rows = spec["terms"]
    if len(rows) != out:
        raise ValueError(f"trig needs {out} term lists, got {len(rows)}")
    funcs = {"sin": np.sin, "cos": np.cos}
    tables = []
    for row in rows:
        entries = []
        for t in row:
            if t.get("fn", "sin") not in funcs:
                raise ValueError(f"unknown trig function {t.get('fn')!r}")
            xf, uf = _term_monomial(t, n, m)
            entries.append((float(t["coef"]), funcs[t.get("fn", "sin")], xf, uf, float(t.get("phase", 0.0))))
        tables.append(entries)

    def fn(x, u):
        y = np.zeros(np.broadcast_shapes(x.shape[:-1], u.shape[:-1]) + (out,))
        for i, row in enumerate(tables):
            for coef, f, xf, uf, ph in row:
                y[..., i] += coef * f(x @ xf + u @ uf + ph)
        return y

    return fn


def build_map(spec: dict, n: int, m: int, out: int) -> MapFn:
    """Build a vectorised map from a JSON coefficient table.

    Kinds: ``linear`` (A x + B u + c), ``bilinear`` (linear plus sum_k u_k N_k x),
    ``polynomial`` (monomials in x and u), ``trig`` (coef * sin/cos of an
    affine phase) and ``sum`` (componentwise sum of ``parts``).
    """
    kind = spec.get("kind")
    if kind in ("linear", "bilinear"):
        return _linear(spec, n, m, out)
    if kind == "polynomial":
        return _polynomial(spec, n, m, out)
    if kind == "trig":
        return _trig(spec, n, m, out)
    if kind == "sum":
        parts = [build_map(p, n, m, out) for p in spec["parts"]]
        return lambda x, u: sum(p(x, u) for p in parts)
    raise ValueError(f"unknown map kind {kind!r}")


# -- problem -----------------------------------------------------------------

@dataclass
class ControlProblem:
    """Dynamics, running cost, sampled control set and declared constants."""

    dynamics: MapFn
    running_cost: MapFn
    controls: np.ndarray
    horizon: float
    state_dim: int
    cost_dim: int
    K_f: float = 1.0
    M_f: float = 1.0
    K_L: float = 1.0
    M_L: float = 1.0
    name: str = ""
    description: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        self.controls = as_points(self.controls, name="controls")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not self.K_f > 0:
            raise ValueError("K_f must be positive (it divides the cost estimate)")
        for key in ("M_f", "K_L", "M_L"):
            if getattr(self, key) < 0:
                raise ValueError(f"{key} must be nonnegative")

    @property
    def control_dim(self) -> int:
        return self.controls.shape[1]

    @property
    def cost_budget(self) -> float:
        """Lipschitz factor (K_L / K_f) exp(K_f T) of the cost in the initial state."""
        return self.K_L / self.K_f * math.exp(self.K_f * self.horizon)

    @classmethod
    def from_dict(cls, data: dict) -> "ControlProblem":
        n, p = int(data["state_dim"]), int(data["cost_dim"])
        controls = as_points(data["controls"], name="controls")
        m = controls.shape[1]
        const = data.get("constants", {})
        return cls(
            dynamics=build_map(data["dynamics"], n, m, n),
            running_cost=build_map(data["running_cost"], n, m, p),
            controls=controls,
            horizon=float(data["horizon"]),
            state_dim=n,
            cost_dim=p,
            K_f=float(const.get("K_f", 1.0)),
            M_f=float(const.get("M_f", 1.0)),
            K_L=float(const.get("K_L", 1.0)),
            M_L=float(const.get("M_L", 1.0)),
            name=data.get("name", ""),
            description=data,
        )

    def fl_vertices(self, x) -> tuple[np.ndarray, np.ndarray]:
        """(f(x,u), L(x,u)) for every sampled control."""
        x = as_vector(x, self.state_dim)
        xs = np.broadcast_to(x, (len(self.controls), self.state_dim))
        return self.dynamics(xs, self.controls), self.running_cost(xs, self.controls)


@dataclass(frozen=True)
class ControlSequence:
    """Piecewise-constant control values on a uniform grid of step ``step``."""

    values: np.ndarray
    step: float

    @classmethod
    def from_indices(cls, prob: ControlProblem, indices, step: float) -> "ControlSequence":
        return cls(prob.controls[np.asarray(indices, dtype=int)], float(step))

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    cost: np.ndarray


def time_steps(span: float, step: float) -> int:
    """Number of steps of size ``step`` covering ``span``; must be integral."""
    k = int(round(span / step))
    if abs(k * step - span) > 1e-9 * max(1.0, span):
        raise ValueError(f"span {span} is not a multiple of step {step}")
    return k


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalError("dynamics or running cost produced non-finite values")


def rk4_step(prob: ControlProblem, x: np.ndarray, u: np.ndarray, h: float, substeps: int = 1):
    """One control interval of RK4 on the state augmented with the cost integral.

    Returns the end states and the accumulated costs; both are batched over
    the leading axis of ``x`` and ``u``.
    """
    f, L = prob.dynamics, prob.running_cost
    dt = h / substeps
    cost = np.zeros(np.broadcast_shapes(x.shape[:-1], u.shape[:-1]) + (prob.cost_dim,))
    for _ in range(substeps):
        k1, l1 = f(x, u), L(x, u)
        x2 = x + 0.5 * dt * k1
        k2, l2 = f(x2, u), L(x2, u)
        x3 = x + 0.5 * dt * k2
        k3, l3 = f(x3, u), L(x3, u)
        x4 = x + dt * k3
        k4, l4 = f(x4, u), L(x4, u)
        x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        cost = cost + dt / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4)
    _check_finite(x, cost)
    return x, cost


def integrate(prob: ControlProblem, t0: float, x0, seq: ControlSequence, *, substeps: int = 1) -> Trajectory:
    """Trajectory on the control grid and total cost over [t0, T]."""
    if not 0.0 <= t0 <= prob.horizon + 1e-12:
        raise ValueError("t0 outside [0, T]")
    steps = time_steps(prob.horizon - t0, seq.step)
    if steps != len(seq):
        raise ValueError(f"sequence has {len(seq)} steps, {steps} needed to reach T")
    x = as_vector(x0, prob.state_dim)[None, :]
    states = [x[0]]
    cost = np.zeros(prob.cost_dim)
    for u in seq.values:
        x, c = rk4_step(prob, x, u[None, :], seq.step, substeps)
        states.append(x[0])
        cost = cost + c[0]
    times = t0 + seq.step * np.arange(steps + 1)
    return Trajectory(times, np.array(states), cost)


def check_constants(prob: ControlProblem, box, *, n_probes: int = 200, seed: int = 0, slack: float = 1e-9) -> dict:
    """Spot-check declared bounds and Lipschitz constants on random probes.

    Raises ConfigurationError on the first contradiction; returns the
    observed maxima otherwise.
    """
    box = np.asarray(box, dtype=float).reshape(prob.state_dim, 2)
    rng = np.random.default_rng(seed)
    x1 = rng.uniform(box[:, 0], box[:, 1], size=(n_probes, prob.state_dim))
    x2 = rng.uniform(box[:, 0], box[:, 1], size=(n_probes, prob.state_dim))
    u = prob.controls[rng.integers(len(prob.controls), size=n_probes)]
    f1, f2 = prob.dynamics(x1, u), prob.dynamics(x2, u)
    l1, l2 = prob.running_cost(x1, u), prob.running_cost(x2, u)
    _check_finite(f1, f2, l1, l2)
    dx = np.linalg.norm(x1 - x2, axis=1)
    ok = dx > 1e-12
    observed = {
        "M_f": float(np.max(np.linalg.norm(np.vstack([f1, f2]), axis=1))),
        "M_L": float(np.max(np.linalg.norm(np.vstack([l1, l2]), axis=1))),
        "K_f": float(np.max(np.linalg.norm(f1 - f2, axis=1)[ok] / dx[ok], initial=0.0)),
        "K_L": float(np.max(np.linalg.norm(l1 - l2, axis=1)[ok] / dx[ok], initial=0.0)),
    }
    for key, value in observed.items():
        declared = getattr(prob, key)
        if value > declared * (1.0 + slack) + slack:
            raise ConfigurationError(f"declared {key}={declared} but probes reach {value:.6g}")
    return observed


@dataclass(frozen=True)
class EstimateReport:
    max_violation: float
    lhs: np.ndarray
    rhs: np.ndarray
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.max_violation <= self.tolerance

    def to_dict(self) -> dict:
        return {"max_violation": self.max_violation, "tolerance": self.tolerance, "ok": self.ok}


def check_trajectory_estimate(prob, t, x1, x2, seq, *, substeps: int = 1, tol: float = 1e-6) -> EstimateReport:
    """Compare the state gap with exp(K_f (s - t)) |x1 - x2| on the grid."""
    a = integrate(prob, t, x1, seq, substeps=substeps)
    b = integrate(prob, t, x2, seq, substeps=substeps)
    lhs = np.linalg.norm(a.states - b.states, axis=1)
    rhs = np.exp(prob.K_f * (a.times - t)) * np.linalg.norm(as_vector(x1) - as_vector(x2))
    return EstimateReport(float(np.max(lhs - rhs)), lhs, rhs, tol)


def check_cost_estimate(prob, t1, t2, x1, x2, seq, *, substeps: int = 1, tol: float = 1e-6) -> EstimateReport:
    """Compare cost gaps for one control signal started at two times and states.

    ``seq`` must cover [min(t1, t2), T]; the later start uses its tail.
    """
    t0 = min(t1, t2)
    lead1 = time_steps(t1 - t0, seq.step)
    lead2 = time_steps(t2 - t0, seq.step)
    s1 = ControlSequence(seq.values[lead1:], seq.step)
    s2 = ControlSequence(seq.values[lead2:], seq.step)
    j1 = integrate(prob, t1, x1, s1, substeps=substeps).cost
    j2 = integrate(prob, t2, x2, s2, substeps=substeps).cost
    lhs = np.array([np.linalg.norm(j1 - j2)])
    dx = np.linalg.norm(as_vector(x1) - as_vector(x2))
    rhs = np.array([prob.cost_budget * dx + prob.M_L * abs(t1 - t2)])
    return EstimateReport(float(lhs[0] - rhs[0]), lhs, rhs, tol)


# -- objective clouds --------------------------------------------------------

def rollout_all(prob: ControlProblem, x0, steps: int, step: float, *, substeps: int = 1, snap=None,
                return_states: bool = False):
    """Costs of every control sequence of length ``steps`` from ``x0``.

    Rows are ordered lexicographically by control index, first step most
    significant.  ``snap`` (optional) maps landed states onto grid nodes
    after every step, mirroring nearest-node dynamic programming.
    """
    k = len(prob.controls)
    x = as_vector(x0, prob.state_dim)[None, :]
    if snap is not None:
        x = snap(x)
    cost = np.zeros((1, prob.cost_dim))
    for _ in range(steps):
        xs = np.repeat(x, k, axis=0)
        us = np.tile(prob.controls, (len(x), 1))
        x, c = rk4_step(prob, xs, us, step, substeps)
        if snap is not None:
            x = snap(x)
        cost = np.repeat(cost, k, axis=0) + c
    if return_states:
        return cost, x
    return cost


@dataclass(frozen=True)
class ObjectiveCloud:
    costs: np.ndarray
    exhaustive: bool

    @property
    def cloud(self) -> PointCloud:
        return PointCloud(self.costs)


def objective_cloud(prob: ControlProblem, t: float, x, step: float, *, cap: int = ENUMERATION_CAP,
                    n_mc: int | None = None, seed: int = 0, substeps: int = 1) -> ObjectiveCloud:
    """Costs from (t, x) over all sequences, or a random sample above ``cap``."""
    steps = time_steps(prob.horizon - t, step)
    total = len(prob.controls) ** steps
    if total <= cap:
        return ObjectiveCloud(rollout_all(prob, x, steps, step, substeps=substeps), True)
    if not n_mc:
        raise EnumerationCapError(f"{total} sequences exceed the cap {cap}")
    rng = np.random.default_rng(seed)
    idx = rng.integers(len(prob.controls), size=(n_mc, steps))
    xs = np.broadcast_to(as_vector(x, prob.state_dim), (n_mc, prob.state_dim)).copy()
    cost = np.zeros((n_mc, prob.cost_dim))
    for j in range(steps):
        xs, c = rk4_step(prob, xs, prob.controls[idx[:, j]], step, substeps)
        cost += c
    return ObjectiveCloud(cost, False)


def check_objective_estimate(prob, t1, x1, t2, x2, step, *, substeps: int = 1, tol: float = 1e-6) -> EstimateReport:
    """Directed distances between two objective clouds against the combined bound."""
    y1 = objective_cloud(prob, t1, x1, step, substeps=substeps).costs
    y2 = objective_cloud(prob, t2, x2, step, substeps=substeps).costs
    lhs = np.array([directed_distance(y1, y2), directed_distance(y2, y1)])
    dx = np.linalg.norm(as_vector(x1) - as_vector(x2))
    bound = prob.cost_budget * dx + prob.M_L * abs(t1 - t2)
    rhs = np.array([bound, bound])
    return EstimateReport(float(np.max(lhs - rhs)), lhs, rhs, tol)
