"""Brute-force ground truth: exhaustive enumeration and scalar value iteration.

Both routines reuse the RK4 step of :mod:`conedp.control`, so one-step costs
are bit-identical to those seen by the set-valued solver and any
disagreement points at the recursion itself.  Neither routine prunes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .cones import OrderingCone
from .control import ControlProblem, EnumerationCapError, rk4_step, rollout_all, time_steps
from .dp import GridConfig
from .pareto import ParetoFront, PointCloud, minimal_elements
from .tolerances import ENUMERATION_CAP

__all__ = ["EnumerationResult", "enumerate_front", "scalar_dp"]


@dataclass(frozen=True)
class EnumerationResult:
    count: int
    costs: np.ndarray
    front: ParetoFront
    wall_time: float

    @property
    def cloud(self) -> PointCloud:
        return PointCloud(self.costs)


def enumerate_front(prob: ControlProblem, cone: OrderingCone, t: float, x, step: float, *,
                    grid=None, cap: int = ENUMERATION_CAP, substeps: int = 1) -> EnumerationResult:
    """Front over every control sequence from (t, x).

    With ``grid`` (a StateGrid) the state is snapped to the nearest node
    after each step, which reproduces nearest-node dynamic programming
    exactly; without it trajectories are integrated continuously.
    """
    steps = time_steps(prob.horizon - t, step)
    count = len(prob.controls) ** steps
    if count > cap:
        raise EnumerationCapError(f"{count} sequences exceed the cap {cap}")
    start = time.perf_counter()
    snap = grid.snap if grid is not None else None
    costs = rollout_all(prob, x, steps, step, substeps=substeps, snap=snap)
    front = minimal_elements(costs, cone)
    return EnumerationResult(count, costs, front, time.perf_counter() - start)


def scalar_dp(prob: ControlProblem, config: GridConfig) -> np.ndarray:
    """Classical backward value iteration for a single cost.

    Returns an array of shape (steps + 1, n_nodes); NaN marks nodes whose
    landing leaves the lattice or reaches a NaN node, matching the solvable
    region of the set-valued solver.
    """
    if prob.cost_dim != 1:
        raise ValueError("scalar value iteration needs a single cost")
    grid = config.state_grid()
    steps = time_steps(prob.horizon, config.step)
    nodes = grid.nodes()
    k = len(prob.controls)
    table = np.full((steps + 1, grid.n_nodes), np.nan)
    table[steps] = 0.0
    xs = np.repeat(nodes, k, axis=0)
    us = np.tile(prob.controls, (len(nodes), 1))
    landed, costs = rk4_step(prob, xs, us, config.step, config.substeps)
    idx = grid.nearest(landed).reshape(len(nodes), k)
    costs = costs[:, 0].reshape(len(nodes), k)
    for i in range(steps - 1, -1, -1):
        nxt = np.where(idx >= 0, table[i + 1][np.maximum(idx, 0)], np.nan)
        total = costs + nxt
        # a node is defined only if every control has a defined landing
        bad = np.any(np.isnan(total), axis=1)
        vals = np.min(np.where(np.isnan(total), np.inf, total), axis=1)
        vals[bad] = np.nan
        table[i] = vals
    return table
