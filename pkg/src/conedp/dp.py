"""Backward dynamic programming for set-valued return functions.

The value at a grid node is the set of minimal one-step-cost-plus-tail
vectors over the sampled controls.  Tails come from the next time slice,
read at the landed state by nearest-node lookup or by the union of the
fronts at the corners of the landing cell.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .cones import OrderingCone
from .control import ControlProblem, rk4_step, rollout_all, time_steps
from .grid import StateGrid, TrajectoryEscapeError
from .pareto import (
    ParetoFront,
    antichain_witness,
    directed_distance,
    epsilon_archive,
    hausdorff,
    minimal_elements,
    upset_distance,
)

__all__ = [
    "GridConfig",
    "ValueField",
    "backward_solve",
    "ParetoDPSolver",
    "DPPReport",
    "dp_consistency_check",
    "ProbeReport",
    "outer_semicontinuity_probe",
    "default_tol_dpp",
]

INTERPOLATIONS = ("nearest", "corners")


@dataclass(frozen=True)
class GridConfig:
    """Time step, state lattice and interpolation settings for one solve."""

    step: float
    box: tuple
    spacing: tuple
    interpolation: str = "nearest"
    eps_front: float = 0.0
    substeps: int = 1
    queries: tuple = ()

    def __post_init__(self):
        if self.interpolation not in INTERPOLATIONS:
            raise ValueError(f"interpolation must be one of {INTERPOLATIONS}")
        if not self.step > 0:
            raise ValueError("step must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be at least 1")

    @classmethod
    def from_dict(cls, data: dict) -> "GridConfig":
        box = tuple(tuple(map(float, b)) for b in data["box"])
        spacing = data["spacing"]
        spacing = tuple(map(float, spacing)) if isinstance(spacing, (list, tuple)) else (float(spacing),) * len(box)
        return cls(
            step=float(data["step"]),
            box=box,
            spacing=spacing,
            interpolation=data.get("interpolation", "nearest"),
            eps_front=float(data.get("eps_front", 0.0)),
            substeps=int(data.get("substeps", 1)),
            queries=tuple(tuple(map(float, q)) for q in data.get("queries", [])),
        )

    def state_grid(self) -> StateGrid:
        return StateGrid.from_box(self.box, self.spacing)


def default_tol_dpp(prob: ControlProblem, config: GridConfig) -> float:
    """10 * spacing * (K_L/K_f) exp(K_f T) + 10 * step * M_L."""
    return 10.0 * max(config.spacing) * prob.cost_budget + 10.0 * config.step * prob.M_L


def _fmt(v: float) -> str:
    return repr(float(v))


class ValueField:
    """Fronts indexed by (time slice, flat node index).

    ``fronts[i][j]`` is an (k, p) array, or None where the node could not be
    solved because some landing left the solvable region.
    """

    def __init__(self, step: float, grid: StateGrid, cone: OrderingCone, fronts,
                 interpolation: str = "nearest", eps_front: float = 0.0):
        self.step = float(step)
        self.grid = grid
        self.cone = cone
        self.fronts = fronts
        self.interpolation = interpolation
        self.eps_front = float(eps_front)
        self.escapes: dict = {}

    @property
    def n_steps(self) -> int:
        return len(self.fronts) - 1

    @property
    def times(self) -> np.ndarray:
        return self.step * np.arange(self.n_steps + 1)

    @property
    def horizon(self) -> float:
        return self.step * self.n_steps

    def time_index(self, t: float) -> int:
        i = time_steps(t, self.step) if t > 0 else 0
        if not 0 <= i <= self.n_steps:
            raise ValueError(f"time {t} outside the grid")
        return i

    def node_index(self, x) -> int:
        j = int(self.grid.nearest(x)[0])
        if j < 0:
            raise TrajectoryEscapeError(f"state {np.ravel(x).tolist()} is off the grid", landing=np.ravel(x))
        return j

    def valid_mask(self, i: int) -> np.ndarray:
        return np.array([f is not None for f in self.fronts[i]])

    def front_at(self, i: int, j: int) -> np.ndarray:
        f = self.fronts[i][j]
        if f is None:
            x = self.grid.coords(self.grid.multi_index(j)).tolist()
            raise TrajectoryEscapeError(f"no value at t={i * self.step:g}, x={x}", node=x, time=i * self.step)
        return f

    def front(self, t: float, x) -> ParetoFront:
        """Front at the grid node nearest to (t, x)."""
        return ParetoFront(self.front_at(self.time_index(t), self.node_index(x)), self.cone)

    def lookup(self, i: int, points) -> list:
        """Interpolated fronts of slice ``i`` at arbitrary states (None when unavailable)."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.grid.dim)
        out = []
        if self.interpolation == "nearest":
            for j in self.grid.nearest(pts):
                out.append(None if j < 0 else self.fronts[i][j])
            return out
        for row in self.grid.corners(pts):
            if np.any(row < 0):
                out.append(None)
                continue
            parts = [self.fronts[i][j] for j in np.unique(row)]
            if any(p is None for p in parts):
                out.append(None)
                continue
            out.append(minimal_elements(np.vstack(parts), self.cone).points)
        return out

    # -- serialisation -------------------------------------------------------
    def manifest(self, problem_hash: str | None = None, extra: dict | None = None) -> dict:
        from . import __version__

        data = {
            "tool": "conedp",
            "version": __version__,
            "problem_hash": problem_hash,
            "cone": self.cone.to_dict(),
            "time_grid": {"step": self.step, "steps": self.n_steps, "horizon": self.horizon},
            "state_grid": self.grid.to_dict(),
            "interpolation": self.interpolation,
            "eps_front": self.eps_front,
            "slices": [{"index": i, "time": float(t), "file": f"slice_{i:04d}.csv"} for i, t in enumerate(self.times)],
        }
        if extra:
            data.update(extra)
        return data

    def export(self, out_dir, problem_hash: str | None = None, extra: dict | None = None) -> list:
        """Write one CSV per slice plus ``manifest.json``; returns written paths."""
        os.makedirs(out_dir, exist_ok=True)
        p = self.cone.dim
        header = "node," + ",".join(f"y{k + 1}" for k in range(p)) + "\n"
        written = []
        for i, slice_fronts in enumerate(self.fronts):
            path = os.path.join(out_dir, f"slice_{i:04d}.csv")
            lines = [header]
            for j, front in enumerate(slice_fronts):
                if front is None:
                    continue
                for y in front:
                    lines.append(f"{j}," + ",".join(_fmt(v) for v in y) + "\n")
            with open(path, "w", newline="") as fh:
                fh.write("".join(lines))
            written.append(path)
        path = os.path.join(out_dir, "manifest.json")
        with open(path, "w") as fh:
            json.dump(self.manifest(problem_hash, extra), fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(path)
        return written

    @classmethod
    def load(cls, in_dir) -> tuple["ValueField", dict]:
        with open(os.path.join(in_dir, "manifest.json")) as fh:
            manifest = json.load(fh)
        grid = StateGrid.from_dict(manifest["state_grid"])
        cone = OrderingCone.from_dict(manifest["cone"])
        fronts = []
        for entry in manifest["slices"]:
            rows: dict[int, list] = {}
            with open(os.path.join(in_dir, entry["file"])) as fh:
                next(fh)
                for line in fh:
                    parts = line.strip().split(",")
                    if not parts[0]:
                        continue
                    rows.setdefault(int(parts[0]), []).append([float(v) for v in parts[1:]])
            fronts.append([np.array(rows[j]) if j in rows else None for j in range(grid.n_nodes)])
        field_ = cls(manifest["time_grid"]["step"], grid, cone, fronts,
                     manifest.get("interpolation", "nearest"), manifest.get("eps_front", 0.0))
        return field_, manifest

    def antichain_violation(self):
        """First (slice, node, i, j) whose front is not an antichain, else None."""
        for i, slice_fronts in enumerate(self.fronts):
            for j, front in enumerate(slice_fronts):
                if front is None or len(front) < 2:
                    continue
                w = antichain_witness(front, self.cone)
                if w is not None:
                    return i, j, front[w[0]], front[w[1]]
        return None


def _backup_nodes(prob, cone, field_, i, nodes, node_ids, config):
    k = len(prob.controls)
    xs = np.repeat(nodes[node_ids], k, axis=0)
    us = np.tile(prob.controls, (len(node_ids), 1))
    landed, costs = rk4_step(prob, xs, us, config.step, config.substeps)
    tails = field_.lookup(i + 1, landed)
    out, escapes = [], {}
    for a, j in enumerate(node_ids):
        parts = []
        for b in range(k):
            r = a * k + b
            if tails[r] is None:
                escapes[j] = (nodes[j].tolist(), landed[r].tolist(), prob.controls[b].tolist())
                parts = None
                break
            parts.append(costs[r] + tails[r])
        if parts is None:
            out.append(None)
            continue
        front = minimal_elements(np.vstack(parts), cone).points
        if config.eps_front > 0:
            front = epsilon_archive(front, cone, config.eps_front)
        front.setflags(write=False)
        out.append(front)
    return out, escapes


def backward_solve(prob: ControlProblem, cone: OrderingCone, config: GridConfig, *, n_jobs: int | None = None) -> ValueField:
    """Fill a :class:`ValueField` from the terminal slice {0} backwards.

    Nodes whose landing leaves the lattice (or hits an unsolved node) are
    left empty; only the shrinking domain of dependence gets values.  A
    TrajectoryEscapeError is raised if a configured query state is unsolved
    at t = 0 or if a whole slice is empty.
    """
    if cone.dim != prob.cost_dim:
        raise ValueError("cone dimension differs from the cost dimension")
    grid = config.state_grid()
    if grid.dim != prob.state_dim:
        raise ValueError("grid dimension differs from the state dimension")
    steps = time_steps(prob.horizon, config.step)
    nodes = grid.nodes()
    zero = np.zeros((1, prob.cost_dim))
    zero.setflags(write=False)
    fronts = [[None] * grid.n_nodes for _ in range(steps)] + [[zero] * grid.n_nodes]
    field_ = ValueField(config.step, grid, cone, fronts, config.interpolation, config.eps_front)
    all_ids = np.arange(grid.n_nodes)
    for i in range(steps - 1, -1, -1):
        if n_jobs and n_jobs > 1:
            chunks = np.array_split(all_ids, n_jobs)
            with ThreadPoolExecutor(max_workers=n_jobs) as pool:
                results = list(pool.map(lambda ids: _backup_nodes(prob, cone, field_, i, nodes, ids, config), chunks))
            values = [v for r in results for v in r[0]]
            escapes = {k: v for r in results for k, v in r[1].items()}
        else:
            values, escapes = _backup_nodes(prob, cone, field_, i, nodes, all_ids, config)
        fronts[i] = values
        field_.escapes[i] = escapes
        if all(v is None for v in values):
            node, landing, u = next(iter(escapes.values()))
            raise TrajectoryEscapeError(
                f"grid box too small: no node solvable at t={i * config.step:g}; "
                f"e.g. node {node} with control {u} lands at {landing}",
                node=node, landing=landing, time=i * config.step,
            )
    for q in config.queries:
        j = int(grid.nearest(q)[0])
        if j < 0 or fronts[0][j] is None:
            landing = None
            for i in range(steps):
                if j >= 0 and j in field_.escapes.get(i, {}):
                    landing = field_.escapes[i][j][1]
                    break
            raise TrajectoryEscapeError(
                f"grid box too small for query state {list(q)}: trajectories from it leave the solvable region"
                + (f" (landing {landing})" if landing is not None else ""),
                node=list(q), landing=landing, time=0.0,
            )
    return field_


class ParetoDPSolver(BaseEstimator):
    """Estimator-style wrapper around :func:`backward_solve`.

    ``fit`` takes a :class:`ControlProblem` in place of a data matrix;
    ``predict`` maps an (n_samples, n) array of states to their fronts.
    """

    def __init__(self, cone=None, step=0.1, spacing=0.1, box=None, interpolation="nearest",
                 eps_front=0.0, substeps=1, n_jobs=None):
        self.cone = cone
        self.step = step
        self.spacing = spacing
        self.box = box
        self.interpolation = interpolation
        self.eps_front = eps_front
        self.substeps = substeps
        self.n_jobs = n_jobs

    def _config(self, prob):
        if self.box is None:
            raise ValueError("box is required")
        box = np.asarray(self.box, dtype=float).reshape(prob.state_dim, 2)
        spacing = np.broadcast_to(np.asarray(self.spacing, dtype=float), (prob.state_dim,))
        return GridConfig(float(self.step), tuple(map(tuple, box.tolist())), tuple(spacing.tolist()),
                          self.interpolation, float(self.eps_front), int(self.substeps))

    def fit(self, problem: ControlProblem, y=None):
        if not isinstance(problem, ControlProblem):
            raise TypeError("fit expects a ControlProblem")
        cone = self.cone if self.cone is not None else OrderingCone.orthant(problem.cost_dim)
        self.config_ = self._config(problem)
        self.field_ = backward_solve(problem, cone, self.config_, n_jobs=self.n_jobs)
        self.n_features_in_ = problem.state_dim
        return self

    def front(self, t, x) -> np.ndarray:
        check_is_fitted(self, "field_")
        return self.field_.front(t, x).points

    def predict(self, X, t=0.0) -> list:
        check_is_fitted(self, "field_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return [self.front(t, x) for x in X]


# -- consistency probes --------------------------------------------------------

@dataclass
class DPPReport:
    gap_candidates_in_objective: float
    gap_objective_in_upset: float
    gap_fronts: float
    gap_field: float
    tolerance: float
    n_candidates: int
    n_objective: int

    @property
    def worst(self) -> float:
        return max(self.gap_candidates_in_objective, self.gap_objective_in_upset, self.gap_fronts, self.gap_field)

    @property
    def ok(self) -> bool:
        return self.worst <= self.tolerance

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ok"] = self.ok
        return d


def dp_consistency_check(field_: ValueField, prob: ControlProblem, cone: OrderingCone, t: float, x, k_steps: int,
                         *, tol: float | None = None, substeps: int = 1) -> DPPReport:
    """Compare k-step composite candidates with the exhaustive objective cloud.

    Candidates are exact k-step costs plus the field's front at the landed
    state; the oracle cloud integrates every full sequence from the node
    without any grid snapping.
    """
    i = field_.time_index(t)
    j = field_.node_index(x)
    xn = field_.grid.coords(field_.grid.multi_index(j))
    remaining = field_.n_steps - i
    if not 1 <= k_steps <= remaining:
        raise ValueError(f"k_steps must be in [1, {remaining}]")
    costs, landed = rollout_all(prob, xn, k_steps, field_.step, substeps=substeps, return_states=True)
    tails = field_.lookup(i + k_steps, landed)
    if any(tl is None for tl in tails):
        raise TrajectoryEscapeError(f"a {k_steps}-step landing from {xn.tolist()} has no value")
    composite = np.vstack([c + tl for c, tl in zip(costs, tails)])
    objective = rollout_all(prob, xn, remaining, field_.step, substeps=substeps)
    front_obj = minimal_elements(objective, cone)
    if tol is None:
        tol = 10.0 * max(field_.grid.spacing) * prob.cost_budget + 10.0 * field_.step * prob.M_L
    return DPPReport(
        gap_candidates_in_objective=directed_distance(composite, objective),
        gap_objective_in_upset=float(np.max(upset_distance(objective, composite, cone))),
        gap_fronts=hausdorff(minimal_elements(composite, cone), front_obj),
        gap_field=hausdorff(field_.front_at(i, j), front_obj),
        tolerance=float(tol),
        n_candidates=len(composite),
        n_objective=len(objective),
    )


@dataclass
class ProbeReport:
    gap: float
    budget: float
    worst_excess: float
    neighbours: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.worst_excess <= 1e-9

    def to_dict(self) -> dict:
        return {"gap": self.gap, "budget": self.budget, "worst_excess": self.worst_excess, "ok": self.ok,
                "neighbours": self.neighbours}


def outer_semicontinuity_probe(field_: ValueField, cone: OrderingCone, t: float, x, prob: ControlProblem | None = None) -> ProbeReport:
    """How far fronts at neighbouring nodes stick out of front(t, x) + P.

    Neighbours are the adjacent time slices at the same state and the axis
    neighbours in the same slice.  With ``prob`` the per-neighbour budget is
    (K_L/K_f) exp(K_f T) |x' - x| + M_L |t' - t|; without it the budget is
    reported as infinite.
    """
    i = field_.time_index(t)
    j = field_.node_index(x)
    base = field_.front_at(i, j)
    xn = field_.grid.coords(field_.grid.multi_index(j))
    candidates = [(i, jj) for jj in field_.grid.neighbours(j)]
    candidates += [(ii, j) for ii in (i - 1, i + 1) if 0 <= ii <= field_.n_steps]
    gap, budget, excess = 0.0, 0.0, -np.inf
    rows = []
    for ii, jj in candidates:
        other = field_.fronts[ii][jj]
        if other is None:
            continue
        g = float(np.max(upset_distance(other, base, cone)))
        dx = float(np.linalg.norm(field_.grid.coords(field_.grid.multi_index(jj)) - xn))
        dt = abs(ii - i) * field_.step
        b = prob.cost_budget * dx + prob.M_L * dt if prob is not None else np.inf
        gap, budget = max(gap, g), max(budget, b)
        excess = max(excess, g - b)
        rows.append({"slice": ii, "node": jj, "gap": g, "budget": b})
    return ProbeReport(gap, budget, float(excess), rows)
