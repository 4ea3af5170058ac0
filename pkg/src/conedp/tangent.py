"""Sampled tangent cones, set-valued derivatives and solution residuals.

Contingent objects are limits as a step h goes to zero.  Every estimator
here works on a finite ladder of steps and keeps a direction only if it has
a witness at every rung, within a slack that shrinks with h:

    slack(h) = c1 * h + c2 * density

where ``density`` is the sampling resolution of the probed set (0 for
analytic membership oracles).  The ladder and slack profile are returned
with every estimate so that classifications can be audited.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog, nnls
from scipy.spatial.distance import cdist

from ._validation import as_points, as_vector
from .cones import OrderingCone
from .control import ControlProblem
from .dp import ValueField
from .pareto import ParetoFront, _covered, minimal_elements, upset_distance
from .tolerances import DEFAULT_LADDER, TAU_MEM

__all__ = [
    "direction_grid",
    "ConeEstimate",
    "contingent_cone_estimate",
    "PROPER",
    "MINIMAL_NOT_PROPER",
    "NOT_MINIMAL",
    "properly_minimal",
    "upset_probe",
    "SetMapSampler",
    "DerivativeEstimate",
    "contingent_derivative_estimate",
    "EpiderivativeEstimate",
    "epiderivative_estimate",
    "sample_fl",
    "default_tol_tan",
    "ResidualReport",
    "contingent_solution_residual",
    "dini_residuals",
    "ProximalReport",
    "proximal_residual",
    "RecessionEstimate",
    "recession_probe",
]

PROPER = "proper"
MINIMAL_NOT_PROPER = "minimal-not-proper"
NOT_MINIMAL = "not-minimal"


# -- direction sets -------------------------------------------------------------

def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = math.pi * (1.0 + 5.0 ** 0.5) * i
    return np.column_stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)])


def direction_grid(dim: int, n_dirs: int | None = None, seed: int = 0) -> np.ndarray:
    """Deterministic unit directions: evenly spaced angles in 2D (720 by
    default), a Fibonacci sphere in 3D, seeded Gaussian samples beyond."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        n = n_dirs or 720
        ang = 2.0 * math.pi * np.arange(n) / n
        return np.column_stack([np.cos(ang), np.sin(ang)])
    n = n_dirs or 512
    if dim == 3:
        return _fibonacci_sphere(n)
    g = np.random.default_rng(seed).standard_normal((n, dim))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _ball_offsets(dim: int) -> np.ndarray:
    """Centre plus three rings of a unit ball, used to perturb directions."""
    if dim == 1:
        dirs = np.array([[1.0], [-1.0]])
    elif dim == 2:
        dirs = direction_grid(2, 24)
    elif dim == 3:
        dirs = _fibonacci_sphere(32)
    else:
        dirs = direction_grid(dim, 64, seed=1)
    rings = [r * dirs for r in (1.0 / 3.0, 2.0 / 3.0, 1.0)]
    return np.vstack([np.zeros((1, dim))] + rings)


def _slack(h, c1, c2, density):
    return c1 * h + c2 * density


# -- contingent cones ------------------------------------------------------------

@dataclass
class ConeEstimate:
    directions: np.ndarray
    inside: np.ndarray
    per_step: np.ndarray
    ladder: tuple
    slack: tuple

    @property
    def in_directions(self) -> np.ndarray:
        return self.directions[self.inside]

    @property
    def is_trivial(self) -> bool:
        """Only the zero direction survived."""
        return not np.any(self.inside)

    def to_dict(self) -> dict:
        return {"ladder": list(self.ladder), "slack": list(self.slack), "n_directions": int(len(self.directions)),
                "n_inside": int(self.inside.sum())}


def contingent_cone_estimate(set_probe, z, ladder=DEFAULT_LADDER, n_dirs: int | None = None, *,
                             c1: float = 2.0, c2: float = 1.0, density: float = 0.0,
                             directions=None) -> ConeEstimate:
    """Directions v such that z + h v' lies in S for some |v' - v| <= slack(h), at every h.

    ``set_probe`` maps an (k, d) array to a boolean mask.
    """
    z = as_vector(z)
    if not bool(np.asarray(set_probe(z[None, :]))[0]):
        raise ValueError("z is not in the set")
    dirs = direction_grid(len(z), n_dirs) if directions is None else as_points(directions, len(z))
    offsets = _ball_offsets(len(z))
    ladder = tuple(sorted(ladder, reverse=True))
    slacks = tuple(_slack(h, c1, c2, density) for h in ladder)
    per_step = np.zeros((len(dirs), len(ladder)), dtype=bool)
    for k, (h, s) in enumerate(zip(ladder, slacks)):
        offs = offsets if s > 0 else offsets[:1]
        trial = dirs[:, None, :] + s * offs[None, :, :]
        pts = z + h * trial.reshape(-1, len(z))
        per_step[:, k] = np.asarray(set_probe(pts)).reshape(len(dirs), len(offs)).any(axis=1)
    return ConeEstimate(dirs, per_step.all(axis=1), per_step, ladder, slacks)


def upset_probe(points, cone: OrderingCone, tol: float = TAU_MEM):
    """Membership oracle for a finite cloud plus the cone."""
    anchors = minimal_elements(as_points(points, cone.dim), cone).points

    def probe(z):
        z = np.asarray(z, dtype=float).reshape(-1, cone.dim)
        return _covered(z, anchors, cone, tol)

    return probe


def properly_minimal(set_probe, y, cone: OrderingCone, ladder=DEFAULT_LADDER, *, n_dirs: int | None = None,
                     c1: float = 2.0, c2: float = 1.0, density: float = 0.0, return_estimate: bool = False):
    """Classify y against the tangent cone of S + P at y.

    ``set_probe`` is a membership oracle for S + P.  The direction grid is
    augmented with the extreme rays of -P (and, in 3D, the mid-rays of its
    faces) so that boundary directions are probed exactly.
    """
    y = as_vector(y, cone.dim)
    extra = [-cone.unit_generators]
    if cone.dim == 3:
        g = cone.unit_generators
        mids = [g[a] + g[b] for a in range(len(g)) for b in range(a + 1, len(g))]
        if mids:
            mids = np.array(mids)
            extra.append(-mids / np.linalg.norm(mids, axis=1, keepdims=True))
    dirs = np.vstack([direction_grid(cone.dim, n_dirs)] + extra)
    est = contingent_cone_estimate(set_probe, y, ladder, c1=c1, c2=c2, density=density, directions=dirs)
    inside = est.in_directions
    if len(inside) == 0:
        label = PROPER
    else:
        neg = -inside
        in_neg_cone = cone.contains(neg)
        in_neg_int = cone.interior_contains(neg) if cone.is_solid else np.zeros(len(neg), dtype=bool)
        if not np.any(in_neg_cone):
            label = PROPER
        elif np.any(in_neg_int):
            label = NOT_MINIMAL
        else:
            label = MINIMAL_NOT_PROPER
    return (label, est) if return_estimate else label


# -- set-valued maps -------------------------------------------------------------

class SetMapSampler:
    """Black-box set-valued map x -> finite cloud in R^p.

    ``distance`` (optional) gives exact distances from points to F(x); when
    absent, distances are measured to the sampled cloud and ``density``
    should state its resolution.
    """

    def __init__(self, evaluate, dim_in: int, dim_out: int, *, density: float = 0.0, lipschitz: bool = False,
                 distance=None):
        self.evaluate = evaluate
        self.dim_in = int(dim_in)
        self.dim_out = int(dim_out)
        self.density = float(density)
        self.lipschitz = bool(lipschitz)
        self._distance = distance

    def distance(self, x, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim_out)
        if self._distance is not None:
            return np.asarray(self._distance(np.asarray(x, dtype=float), pts), dtype=float)
        vals = as_points(self.evaluate(np.asarray(x, dtype=float)), self.dim_out, allow_empty=True)
        if len(vals) == 0:
            return np.full(len(pts), np.inf)
        return cdist(pts, vals).min(axis=1)

    def upper(self, cone: OrderingCone) -> "SetMapSampler":
        """The epigraphical map x -> F(x) + P."""

        def dist(x, pts):
            vals = as_points(self.evaluate(x), self.dim_out, allow_empty=True)
            if len(vals) == 0:
                return np.full(len(pts), np.inf)
            # F(x) + P = E(F(x)) + P for finite clouds
            if cone.dim == 1:
                g = cone.generators[0, 0]
                anchors = vals[[np.argmin(vals[:, 0] * g)]]
            else:
                anchors = minimal_elements(vals, cone).points
            return upset_distance(pts, anchors, cone)

        return SetMapSampler(self.evaluate, self.dim_in, self.dim_out, density=self.density,
                             lipschitz=self.lipschitz, distance=dist)


@dataclass
class DerivativeEstimate:
    candidates: np.ndarray
    inside: np.ndarray
    per_step: np.ndarray
    ladder: tuple
    slack: tuple

    @property
    def points(self) -> np.ndarray:
        return self.candidates[self.inside]

    @property
    def is_empty(self) -> bool:
        return not np.any(self.inside)


def _default_w_grid(dim_out: int, w_box: float, w_points: int | None) -> np.ndarray:
    if dim_out == 1:
        return np.linspace(-w_box, w_box, w_points or 801)[:, None]
    n = w_points or 81
    axes = [np.linspace(-w_box, w_box, n)] * dim_out
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim_out)


def _domain_offsets(dim_in: int, n_radii: int | None, lipschitz: bool) -> np.ndarray:
    if lipschitz:
        return _ball_offsets(dim_in)
    # geometric radii resolve maps whose graph is tangent to the vertical
    if dim_in == 1:
        radii = np.geomspace(1e-9, 1.0, n_radii or 2048)
        dirs = np.array([[1.0], [-1.0]])
    else:
        radii = np.geomspace(1e-9, 1.0, n_radii or 64)
        dirs = _ball_offsets(dim_in)[1:]
        dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    return np.vstack([np.zeros((1, dim_in)), (radii[:, None, None] * dirs[None, :, :]).reshape(-1, dim_in)])


def contingent_derivative_estimate(fmap: SetMapSampler, x, y, v, ladder=DEFAULT_LADDER, *, w_grid=None,
                                   w_box: float = 4.0, w_points: int | None = None, c1: float = 2.0,
                                   c2: float = 1.0, n_radii: int | None = None) -> DerivativeEstimate:
    """Sampled DF((x, y); v).

    A candidate w is kept if, at every h of the ladder, some v' with
    |v' - v| <= slack(h) gives dist(y + h w, F(x + h v')) <= h slack(h) (1 + |w|).
    For maps flagged ``lipschitz`` the v' search uses three rings of the
    slack ball; otherwise it also sweeps geometrically spaced radii down to
    1e-9 slack, which non-Lipschitz graphs need.
    Candidates are a regular grid plus the difference quotients
    (F(x + h v) - y) / h, so exact derivatives of smooth maps are probed.
    """
    x = as_vector(x, fmap.dim_in)
    y = as_vector(y, fmap.dim_out)
    v = as_vector(v, fmap.dim_in)
    if fmap.distance(x, y[None, :])[0] > TAU_MEM + fmap.density:
        raise ValueError("(x, y) is not on the graph")
    ladder = tuple(sorted(ladder, reverse=True))
    cands = [_default_w_grid(fmap.dim_out, w_box, w_points) if w_grid is None else as_points(w_grid, fmap.dim_out)]
    if w_grid is None:
        for h in ladder:
            vals = as_points(fmap.evaluate(x + h * v), fmap.dim_out, allow_empty=True)
            if len(vals):
                cands.append((vals - y) / h)
    cands = np.unique(np.vstack(cands), axis=0)
    scale = 1.0 + np.linalg.norm(cands, axis=1)
    offsets = _domain_offsets(fmap.dim_in, n_radii, fmap.lipschitz)
    slacks = tuple(_slack(h, c1, c2, fmap.density) for h in ladder)
    per_step = np.zeros((len(cands), len(ladder)), dtype=bool)
    alive = np.ones(len(cands), dtype=bool)
    for k, (h, s) in enumerate(zip(ladder, slacks)):
        hit = np.zeros(len(cands), dtype=bool)
        todo = alive.copy()
        for off in offsets:
            if not np.any(todo):
                break
            d = fmap.distance(x + h * (v + s * off), y + h * cands[todo])
            ok = d <= h * s * scale[todo]
            idx = np.flatnonzero(todo)[ok]
            hit[idx] = True
            todo[idx] = False
        per_step[:, k] = hit
        alive &= hit
    return DerivativeEstimate(cands, per_step.all(axis=1), per_step, ladder, slacks)


@dataclass
class EpiderivativeEstimate:
    front: ParetoFront | None
    truncated: bool
    derivative: DerivativeEstimate

    @property
    def is_empty(self) -> bool:
        return self.front is None


def epiderivative_estimate(fmap: SetMapSampler, x, y, v, cone: OrderingCone, ladder=DEFAULT_LADDER,
                           **kwargs) -> EpiderivativeEstimate:
    """Minimal elements of the sampled derivative of x -> F(x) + P.

    ``truncated`` flags fronts that touch the lower edge of the candidate
    box, which happens when the derivative set is not bounded below along P.
    """
    est = contingent_derivative_estimate(fmap.upper(cone), x, y, v, ladder, **kwargs)
    if est.is_empty:
        return EpiderivativeEstimate(None, False, est)
    front = minimal_elements(est.points, cone)
    low = est.candidates.min(axis=0)
    truncated = bool(np.any(np.isclose(front.points, low[None, :])))
    return EpiderivativeEstimate(front, truncated, est)


# -- residuals on value fields ---------------------------------------------------------

def sample_fl(prob: ControlProblem, x, n_hull: int = 8, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Vertices (f(x,u), L(x,u)) followed by random convex combinations."""
    f, L = prob.fl_vertices(x)
    if n_hull > 0 and len(f) > 1:
        w = np.random.default_rng(seed).dirichlet(np.ones(len(f)), size=n_hull)
        f = np.vstack([f, w @ f])
        L = np.vstack([L, w @ L])
    return f, L


def default_tol_tan(prob: ControlProblem, field_: ValueField, c_tan: float = 2.0, floor: float = 1e-9) -> float:
    """Per-unit-time tolerance for difference-quotient memberships on a grid.

    Sum of the one-step quadrature defect h (K_L + B K_f) M_f / 2 and the
    landing error B sqrt(n) spacing / (2 h), with B = (K_L/K_f) exp(K_f T),
    plus a roundoff floor (the sum vanishes when K_L = 0 and M_f = 0).
    """
    h = field_.step
    b = prob.cost_budget
    delta = max(field_.grid.spacing)
    budget = h * (prob.K_L + b * prob.K_f) * prob.M_f / 2.0 + b * math.sqrt(prob.state_dim) * delta / (2.0 * h)
    return c_tan * budget + floor


def _locate(field_: ValueField, t, x, y):
    i = field_.time_index(t)
    j = field_.node_index(x)
    front = field_.front_at(i, j)
    y = as_vector(y, field_.cone.dim)
    if np.min(np.linalg.norm(front - y, axis=1)) > 1e-9:
        raise ValueError("y is not on the front at (t, x)")
    return i, j, front, y


def _quotient_residual(field_, cone, i, point, target, h):
    """dist(target, V(slice i, point) + P) / h, or None if unavailable."""
    tail = field_.lookup(i, point)[0]
    if tail is None:
        return None
    return float(upset_distance(target[None, :], tail, cone)[0]) / h


def _reformulated(field_, cone, i_tail, xn, y, f, L, h, sign):
    """Per-sample min over E(Q_s) of dist(-q, P), Q_s = sign L_s + (V(t + sign h, x + sign h f_s) - y) / h."""
    out = []
    for s in range(len(f)):
        tail = field_.lookup(i_tail, xn + sign * h * f[s])[0]
        if tail is None:
            continue
        q = minimal_elements(sign * L[s] + (tail - y) / h, cone).points
        out.append(float(np.min(cone.distance(-q))))
    return out or None


def _finest(trace, condition, h, reduce):
    vals = [r["residual"] for r in trace if r["condition"] == condition and r["h"] == h and r["residual"] is not None]
    return reduce(vals)


def _close(a, b):
    return abs(a - b) <= 1e-9 * max(1.0, abs(b))


@dataclass
class ResidualReport:
    cond1_ok: bool
    cond2_ok: bool
    cond1_residual: float
    cond2_residual: float
    tolerance: float
    witness: dict
    trace: list = field(default_factory=list)
    reformulation_agrees: bool = True
    note: str = ""

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("cond1_ok", "cond2_ok", "cond1_residual", "cond2_residual", "tolerance",
                                             "witness", "trace", "reformulation_agrees", "note")}


def contingent_solution_residual(field_: ValueField, prob: ControlProblem, cone: OrderingCone, t, x, y, *,
                                 ladder_steps=(1, 2), n_hull: int = 8, seed: int = 0,
                                 tol: float | None = None) -> ResidualReport:
    """Sampled memberships of -L in DW((t,x,y); (1, f)) and of L in DW((t,x,y); (-1, -f)).

    The ladder is made of grid multiples k * step.  The first condition
    needs one (f, L) sample that passes at every rung; the second needs all
    samples to pass.  Residuals are distances of the shifted point to the
    neighbouring upper set, divided by h.  The trace lists every
    (condition, h, sample, residual) evaluated.
    """
    i, j, _, y = _locate(field_, t, x, y)
    xn = field_.grid.coords(field_.grid.multi_index(j))
    tol = default_tol_tan(prob, field_) if tol is None else float(tol)
    if i == field_.n_steps:
        ok = bool(np.allclose(field_.front_at(i, j), 0.0))
        return ResidualReport(ok, ok, 0.0, 0.0, tol, {}, [], True, "terminal slice: front must be {0}")
    f, L = sample_fl(prob, xn, n_hull, seed)
    trace = []
    steps_fwd = [k for k in ladder_steps if i + k <= field_.n_steps]
    per_sample = np.full(len(f), np.inf)
    for s in range(len(f)):
        worst = -np.inf
        for k in steps_fwd:
            h = k * field_.step
            r = _quotient_residual(field_, cone, i + k, xn + h * f[s], y - h * L[s], h)
            trace.append({"condition": 1, "h": h, "sample": s, "residual": r})
            if r is not None:
                worst = max(worst, r)
        if worst > -np.inf:
            per_sample[s] = worst
    best = int(np.argmin(per_sample))
    cond1 = float(per_sample[best])

    cond2, worst2 = 0.0, None
    steps_bwd = [k for k in ladder_steps if i - k >= 0]
    if i > 0:
        for s in range(len(f)):
            for k in steps_bwd:
                h = k * field_.step
                r = _quotient_residual(field_, cone, i - k, xn - h * f[s], y + h * L[s], h)
                trace.append({"condition": 2, "h": h, "sample": s, "residual": r})
                if r is not None and r > cond2:
                    cond2, worst2 = r, s

    # the same quantities through the minimal-element reformulations at the finest rung
    agrees = True
    if steps_fwd:
        ext = _reformulated(field_, cone, i + steps_fwd[0], xn, y, f, L, steps_fwd[0] * field_.step, +1)
        if ext is not None:
            agrees &= _close(min(ext), _finest(trace, 1, steps_fwd[0] * field_.step, min))
    if i > 0 and steps_bwd:
        ext = _reformulated(field_, cone, i - steps_bwd[0], xn, y, f, L, steps_bwd[0] * field_.step, -1)
        if ext is not None:
            agrees &= _close(max(ext), _finest(trace, 2, steps_bwd[0] * field_.step, max))
    note = "" if i > 0 else "second condition vacuous at t = 0"
    witness = {"cond1_sample": best, "cond1_f": f[best].tolist(), "cond1_L": L[best].tolist()}
    if worst2 is not None:
        witness.update({"cond2_sample": worst2, "cond2_f": f[worst2].tolist(), "cond2_L": L[worst2].tolist()})
    return ResidualReport(cond1 <= tol, cond2 <= tol, cond1, cond2, tol, witness, trace, agrees, note)


def dini_residuals(value, step: float, grid, prob: ControlProblem, i: int, j: int, *, n_hull: int = 8,
                   seed: int = 0) -> tuple[float, float]:
    """Finite-difference versions of the two lower Dini inequalities for p = 1.

    ``value`` is a table of shape (steps + 1, n_nodes), e.g. from the scalar
    value-iteration oracle.  Returns (inf_(f,L) L + D w(1, f),
    sup_(f,L) -L + D w(-1, -f)); NaN entries are skipped.
    """
    xn = grid.coords(grid.multi_index(j))
    f, L = sample_fl(prob, xn, n_hull, seed)
    w0 = value[i, j]
    first, second = np.inf, -np.inf
    for s in range(len(f)):
        if i + 1 < value.shape[0]:
            jj = grid.nearest(xn + step * f[s])[0]
            if jj >= 0 and np.isfinite(value[i + 1, jj]):
                first = min(first, L[s, 0] + (value[i + 1, jj] - w0) / step)
        if i >= 1:
            jj = grid.nearest(xn - step * f[s])[0]
            if jj >= 0 and np.isfinite(value[i - 1, jj]):
                second = max(second, -L[s, 0] + (value[i - 1, jj] - w0) / step)
    return float(first), float(second)


# -- proximal normals -------------------------------------------------------------

def _local_chords(field_: ValueField, i: int, j: int, y: np.ndarray, n_local: int | None = None) -> np.ndarray:
    """Chords from (t, x, y) to graph samples at the node and its neighbours.

    With ``n_local`` only the front points nearest to y are used at each node.
    """
    grid = field_.grid
    xn = grid.coords(grid.multi_index(j))
    out = []
    nodes = [(ii, j) for ii in (i - 1, i, i + 1) if 0 <= ii <= field_.n_steps]
    nodes += [(i, jj) for jj in grid.neighbours(j)]
    for ii, jj in nodes:
        front = field_.fronts[ii][jj]
        if front is None:
            continue
        dt = (ii - i) * field_.step
        dx = grid.coords(grid.multi_index(jj)) - xn
        if n_local is not None and len(front) > n_local:
            near = np.argsort(np.linalg.norm(front - y, axis=1), kind="stable")[:n_local]
            front = front[np.sort(near)]
        for a in front:
            c = np.concatenate([[dt], dx, a - y])
            if np.linalg.norm(c) > 1e-12:
                out.append(c)
    return np.array(out)


class _LocalConicModel:
    """Union of the rays through the chords, each fattened by {0} x {0} x P.

    At the sampling level the graph of V + P around (t, x, y) is replaced by
    this cone; its tangent cone is itself and its proximal normals are its
    polar, which is what the probes below recover.
    """

    def __init__(self, chords: np.ndarray, cone: OrderingCone, state_dim: int):
        self.dim = 1 + state_dim + cone.dim
        lift = np.zeros((len(cone.generators), self.dim))
        lift[:, 1 + state_dim:] = cone.unit_generators
        self.lift = lift
        self.chords = chords / np.linalg.norm(chords, axis=1, keepdims=True) if len(chords) else chords
        self.generators = np.vstack([self.chords, lift]) if len(chords) else lift

    def contains(self, points, tol: float = 1e-9) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        out = np.zeros(len(pts), dtype=bool)
        pieces = [np.vstack([c[None, :], self.lift]) for c in self.chords] or [self.lift]
        for n, p in enumerate(pts):
            scale = max(1.0, float(np.linalg.norm(p)))
            for g in pieces:
                if nnls(g.T, p)[1] <= tol * scale:
                    out[n] = True
                    break
        return out

    def projects_to_apex(self, eta: np.ndarray, rho: float = 1.0, tol: float = 1e-10) -> bool:
        """True iff apex + rho * eta has the apex as its projection on every piece."""
        pieces = [np.vstack([c[None, :], self.lift]) for c in self.chords] or [self.lift]
        for g in pieces:
            lam, _ = nnls(g.T, rho * eta)
            if np.linalg.norm(g.T @ lam) > tol * rho:
                return False
        return True

    def normal_candidates(self, n_lp: int, seed: int) -> list:
        """Extreme points of the polar cone (clipped to a box) found by LP."""
        g = self.generators
        rng = np.random.default_rng(seed)
        objectives = [-g.sum(axis=0)] + list(rng.standard_normal((n_lp, self.dim)))
        out = []
        for c in objectives:
            res = linprog(-c, A_ub=g, b_ub=np.zeros(len(g)), bounds=[(-1.0, 1.0)] * self.dim, method="highs")
            if res.status == 0 and np.linalg.norm(res.x) > 1e-9:
                out.append(res.x / np.linalg.norm(res.x))
        return out


@dataclass
class ProximalReport:
    normals: np.ndarray
    residuals: np.ndarray
    max_residual: float
    polarity_max: float
    n_tangents: int
    n_rejected: int
    boundary_gap: float | None = None
    note: str = ""
    complete: bool = True

    @property
    def n_normals(self) -> int:
        return len(self.normals)

    def polarity_ok(self, tol: float = 1e-8) -> bool:
        return self.polarity_max <= tol

    def to_dict(self) -> dict:
        return {"n_normals": self.n_normals, "max_residual": self.max_residual, "polarity_max": self.polarity_max,
                "n_tangents": self.n_tangents, "n_rejected": self.n_rejected, "boundary_gap": self.boundary_gap,
                "note": self.note, "complete": self.complete}


def _boundary_gap(field_: ValueField, cone: OrderingCone, i: int, j: int) -> float:
    """Distance of front(t, x) from the upper sets of the adjacent slice near x."""
    ii = 1 if i == 0 else field_.n_steps - 1
    base = field_.front_at(i, j)
    best = np.full(len(base), np.inf)
    for jj in [j] + field_.grid.neighbours(j):
        other = field_.fronts[ii][jj]
        if other is not None:
            best = np.minimum(best, upset_distance(base, other, cone))
    # NaN when the adjacent slice has no solved node near x
    return float(np.max(best)) if np.all(np.isfinite(best)) else float("nan")


def proximal_residual(field_: ValueField, prob: ControlProblem, cone: OrderingCone, t, x, y, n_normals: int = 256,
                      *, n_lp: int = 16, n_local: int | None = 8, seed: int = 0) -> ProximalReport:
    """Proximal-equation residuals at sampled normals to graph(V + P).

    Normals (xi, v, -w) are recovered as directions whose probe point
    projects back onto (t, x, y) in the local conic model; candidates come
    from a sphere sample and from LP vertices of the polar cone.  For each
    accepted normal the residual |xi + min_(f,L) <v, f> + <w, L>| is
    evaluated over the control vertices.  Nodes whose stencil touches
    unsolved nodes are flagged ``complete=False``: there the chord cone is
    one-sided and spurious normals appear.  Tangent directions are estimated
    from the same model and every normal is checked against them.  At t = 0
    and t = T the boundary inclusions are probed instead.
    """
    i, j, _, y = _locate(field_, t, x, y)
    n = field_.grid.dim
    if i in (0, field_.n_steps):
        gap = _boundary_gap(field_, cone, i, j)
        return ProximalReport(np.empty((0, 1 + n + cone.dim)), np.empty(0), 0.0, -np.inf, 0, 0, gap,
                              "boundary slice: inclusion gap reported")
    stencil = [(i - 1, j), (i + 1, j)] + [(i, jj) for jj in field_.grid.neighbours(j)]
    complete = all(field_.fronts[ii][jj] is not None for ii, jj in stencil)
    model = _LocalConicModel(_local_chords(field_, i, j, y, n_local), cone, n)
    sphere = direction_grid(model.dim, n_normals, seed=seed)
    candidates = list(sphere) + model.normal_candidates(n_lp, seed)
    normals, rejected = [], 0
    for eta in candidates:
        if model.projects_to_apex(eta):
            normals.append(eta)
        else:
            rejected += 1
    normals = np.array(normals).reshape(-1, model.dim)

    dirs = np.vstack([direction_grid(model.dim, 256, seed=seed + 1), model.generators])
    est = contingent_cone_estimate(model.contains, np.zeros(model.dim), ladder=(1.0,), c1=0.0, c2=0.0,
                                   directions=dirs)
    tangents = est.in_directions
    polarity = float(np.max(normals @ tangents.T)) if len(normals) and len(tangents) else -np.inf

    xn = field_.grid.coords(field_.grid.multi_index(j))
    f, L = prob.fl_vertices(xn)
    xi, vstar, wstar = normals[:, 0], normals[:, 1:1 + n], -normals[:, 1 + n:]
    residuals = np.abs(xi + np.min(vstar @ f.T + wstar @ L.T, axis=1)) if len(normals) else np.empty(0)
    note = "" if len(normals) else "no normals recoverable at this graph point"
    if not complete:
        note = (note + "; " if note else "") + "stencil touches unsolved nodes: normals are one-sided"
    return ProximalReport(normals, residuals, float(residuals.max()) if len(residuals) else 0.0, polarity,
                          len(tangents), rejected, None, note, complete)


# -- recession ------------------------------------------------------------------

@dataclass
class RecessionEstimate:
    directions: np.ndarray
    inside: np.ndarray
    scales: tuple

    @property
    def in_directions(self) -> np.ndarray:
        return self.directions[self.inside]

    @property
    def is_trivial(self) -> bool:
        return not np.any(self.inside)


def recession_probe(set_probe, dim: int, scales=None, n_dirs: int | None = None, *, c1: float = 2.0,
                    directions=None) -> RecessionEstimate:
    """Asymptotic directions: v is kept if R v' lies in S for some
    |v' - v| <= c1 / R at every scale R of the ray budget."""
    scales = tuple(sorted(scales or tuple(1.0 / h for h in DEFAULT_LADDER)))
    dirs = direction_grid(dim, n_dirs) if directions is None else as_points(directions, dim)
    offsets = _ball_offsets(dim)
    inside = np.ones(len(dirs), dtype=bool)
    for r in scales:
        trial = dirs[:, None, :] + (c1 / r) * offsets[None, :, :]
        hit = np.asarray(set_probe(r * trial.reshape(-1, dim))).reshape(len(dirs), len(offsets)).any(axis=1)
        inside &= hit
    return RecessionEstimate(dirs, inside, scales)
