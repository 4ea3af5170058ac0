"""Polyhedral ordering cones and the geometric constants built on them.

A cone is stored by its generators.  At construction we also derive an
inequality description (unit facet normals inside the linear span of the
generators), which makes membership, interior margins and the deep point
cheap to evaluate in bulk.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from ._validation import as_points, as_vector
from .tolerances import TAU_INT, TAU_MEM

__all__ = [
    "OrderingCone",
    "ConePair",
    "contains",
    "interior_contains",
    "deep_point",
    "mu",
    "alpha",
    "alpha_sampled",
    "alpha_prime",
    "lipschitz_constant",
]

_MAX_FACET_SUBSETS = 200_000


def _facets_in_span(coords: np.ndarray) -> np.ndarray:
    """Unit inward facet normals of cone(coords) in its own span coordinates."""
    m, r = coords.shape
    if r == 1:
        return np.ones((1, 1))
    n_subsets = 1
    for k in range(r - 1):
        n_subsets = n_subsets * (m - k) // (k + 1)
    if n_subsets > _MAX_FACET_SUBSETS:
        raise ValueError(f"too many generators ({m}) to enumerate facets in dimension {r}")
    eps = 1e-12
    normals = []
    for subset in itertools.combinations(range(m), r - 1):
        sub = coords[list(subset)]
        _, s, vt = np.linalg.svd(sub)
        if s.size < r - 1 or s[-1] < 1e-10:
            continue
        n = vt[-1]
        vals = coords @ n
        if np.all(vals >= -eps):
            normals.append(n)
        elif np.all(vals <= eps):
            normals.append(-n)
    if not normals:
        raise ValueError("could not derive facets; cone is degenerate")
    normals = np.array(normals)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    # dedupe normals shared by several generator subsets
    keys = np.round(normals, 10)
    _, idx = np.unique(keys, axis=0, return_index=True)
    return normals[np.sort(idx)]


class OrderingCone:
    """Finitely generated pointed convex cone in R^p.

    Parameters
    ----------
    generators : array-like of shape (m, p)
        Nonzero direction vectors. Redundant generators are allowed.
    tol : float
        Residual threshold for membership tests.
    """

    def __init__(self, generators, *, tol: float = TAU_MEM):
        gens = as_points(generators, name="generators")
        norms = np.linalg.norm(gens, axis=1)
        if np.any(norms <= 0.0):
            raise ValueError("generators must be nonzero")
        self.generators = gens
        self.generators.setflags(write=False)
        self.tol = float(tol)
        self._unit = gens / norms[:, None]

        # pointed iff no convex combination of unit generators vanishes
        m = len(gens)
        a = np.vstack([self._unit.T, np.ones((1, m))])
        b = np.zeros(self.dim + 1)
        b[-1] = 1.0
        _, resid = nnls(a, b)
        if resid < 1e-9:
            raise ValueError("generators do not span a pointed cone")

        _, s, vt = np.linalg.svd(self._unit, full_matrices=True)
        rank = int(np.sum(s > 1e-10 * max(1.0, s[0])))
        basis = vt[:rank].T
        if rank == 1 and float(self._unit[0] @ basis[:, 0]) < 0:
            basis = -basis
        self._basis = basis
        self._facets_local = _facets_in_span(self._unit @ basis)
        self._normals = self._facets_local @ basis.T
        self._normals.setflags(write=False)

    # -- structure --------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.generators.shape[1]

    @property
    def rank(self) -> int:
        return self._basis.shape[1]

    @property
    def is_solid(self) -> bool:
        return self.rank == self.dim

    @property
    def facet_normals(self) -> np.ndarray:
        """Unit inward normals (rows) of the facets within the span."""
        return self._normals

    @property
    def unit_generators(self) -> np.ndarray:
        return self._unit

    @classmethod
    def orthant(cls, p: int) -> "OrderingCone":
        return cls(np.eye(p))

    def to_dict(self) -> dict:
        return {"dim": self.dim, "generators": self.generators.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "OrderingCone":
        if not isinstance(data, dict) or "generators" not in data:
            raise ValueError("cone object needs a 'generators' list")
        cone = cls(data["generators"])
        if "dim" in data and int(data["dim"]) != cone.dim:
            raise ValueError(f"cone dim {data['dim']} does not match generators ({cone.dim})")
        return cone

    def __eq__(self, other):
        return (
            isinstance(other, OrderingCone)
            and self.generators.shape == other.generators.shape
            and np.array_equal(self.generators, other.generators)
        )

    def __hash__(self):
        return hash(self.generators.tobytes())

    def __repr__(self):
        return f"OrderingCone(dim={self.dim}, generators={self.generators.tolist()})"

    # -- inequality side --------------------------------------------------
    def _split(self, pts):
        coords = pts @ self._basis
        off_span = np.linalg.norm(pts - coords @ self._basis.T, axis=1)
        return coords @ self._facets_local.T, off_span

    def facet_values(self, points) -> np.ndarray:
        """Signed facet values <n_i, y> for each row of ``points``."""
        pts = as_points(points, self.dim, allow_empty=True)
        return pts @ self._normals.T

    def margin(self, points) -> np.ndarray:
        """Distance from each point to the complement of the interior.

        Negative values measure how far outside the cone the point lies
        (a lower bound on the distance, not the distance itself).
        """
        if not self.is_solid:
            raise ValueError("margin requires a solid cone")
        pts = as_points(points, self.dim, allow_empty=True)
        return np.min(pts @ self._normals.T, axis=1)

    def _contains_many(self, pts: np.ndarray, tol: float) -> np.ndarray:
        vals, off = self._split(pts)
        worst = np.min(vals, axis=1)
        inside = (worst >= 0.0) & (off <= tol)
        outside = (worst < -tol) | (off > tol)
        result = inside.copy()
        # a thin band where the cheap test is inconclusive: fall back to NNLS
        for i in np.flatnonzero(~inside & ~outside):
            _, resid = nnls(self._unit.T, pts[i])
            result[i] = resid < tol
        return result

    def contains(self, v, tol: float | None = None):
        """Membership test; accepts one vector or an (n, p) array."""
        tol = self.tol if tol is None else tol
        arr = np.asarray(v, dtype=float)
        if arr.ndim == 1:
            return bool(self._contains_many(as_vector(arr, self.dim)[None, :], tol)[0])
        return self._contains_many(as_points(arr, self.dim, allow_empty=True), tol)

    def interior_contains(self, v, margin: float = TAU_INT):
        if not self.is_solid:
            raise ValueError("interior test requires a solid cone")
        arr = np.asarray(v, dtype=float)
        if arr.ndim == 1:
            return bool(self.margin(as_vector(arr, self.dim)[None, :])[0] > margin)
        return self.margin(arr) > margin

    def distance(self, points) -> np.ndarray:
        """Euclidean distance from each point to the cone."""
        pts = as_points(points, self.dim, allow_empty=True)
        out = np.zeros(len(pts))
        vals, off = self._split(pts)
        # rounding leaves off-span residuals of ~1e-16 even for solid cones
        scale = 1e-12 * np.maximum(1.0, np.linalg.norm(pts, axis=1))
        todo = np.flatnonzero((np.min(vals, axis=1) < 0.0) | (off > scale))
        if todo.size == 0:
            return out
        if self.dim == 1:
            s = 1.0 if self.generators[0, 0] > 0 else -1.0
            out[todo] = np.maximum(0.0, -s * pts[todo, 0])
        elif self.dim == 2 and self.is_solid:
            rays = self._extreme_rays_2d()
            sub = pts[todo]
            best = np.linalg.norm(sub, axis=1)
            for r in rays:
                proj = np.clip(sub @ r, 0.0, None)
                best = np.minimum(best, np.linalg.norm(sub - proj[:, None] * r, axis=1))
            out[todo] = best
        else:
            for i in todo:
                out[i] = nnls(self._unit.T, pts[i])[1]
        return out

    def _extreme_rays_2d(self) -> np.ndarray:
        rays = []
        for n in self._normals:
            on_face = np.abs(self._unit @ n) < 1e-10
            rays.append(self._unit[np.flatnonzero(on_face)[0]])
        return np.array(rays)


def contains(cone: OrderingCone, v) -> bool:
    """True iff ``v`` is a nonnegative combination of the generators."""
    return cone.contains(v)


def interior_contains(cone: OrderingCone, v, margin: float = TAU_INT) -> bool:
    """True iff the ball of radius ``margin`` around ``v`` lies in the cone."""
    return cone.interior_contains(v, margin)


def deep_point(cone: OrderingCone, l: float) -> np.ndarray:
    """Nearest point to the origin among centres of radius-``l`` balls inside the cone.

    The feasible set is {x : <n_i, x> >= l} over the unit facet normals.  The
    minimiser is found by enumerating active sets of the KKT system, which is
    exact and cheap for the handful of facets a low-dimensional cone has.
    """
    if not cone.is_solid:
        raise ValueError("deep point requires a solid cone")
    if not l > 0:
        raise ValueError("l must be positive")
    normals = cone.facet_normals
    k, p = normals.shape
    best, best_norm = None, np.inf
    for size in range(1, min(k, p) + 1):
        for subset in itertools.combinations(range(k), size):
            ns = normals[list(subset)]
            gram = ns @ ns.T
            if np.linalg.matrix_rank(gram) < size:
                continue
            lam = np.linalg.solve(gram, np.full(size, float(l)))
            if np.any(lam < -1e-12):
                continue
            x = ns.T @ lam
            if np.all(normals @ x >= l * (1.0 - 1e-10)):
                nx = float(np.linalg.norm(x))
                if nx < best_norm - 1e-14:
                    best, best_norm = x, nx
    if best is None:
        raise RuntimeError("no feasible active set found")
    return best


def mu(cone: OrderingCone) -> float:
    """Norm of the unit-radius deep point."""
    return float(np.linalg.norm(deep_point(cone, 1.0)))


@dataclass(frozen=True)
class ConePair:
    """Inner cone P sitting inside the interior of a solid outer cone C."""

    inner: OrderingCone
    outer: OrderingCone
    margin: float = field(default=TAU_INT)

    def __post_init__(self):
        if self.inner.dim != self.outer.dim:
            raise ValueError("cone dimensions differ")
        if not self.outer.is_solid:
            raise ValueError("outer cone must be solid")
        m = self.outer.margin(self.inner.unit_generators)
        if np.any(m <= self.margin):
            bad = self.inner.generators[int(np.argmin(m))]
            raise ValueError(f"generator {bad.tolist()} of the inner cone is not interior to the outer cone")


def alpha(pair: ConePair) -> float:
    """Smallest distance from a unit vector of P to the complement of int(C).

    The distance to the complement is a concave, positively homogeneous
    function on C, so its minimum over the unit vectors of P is attained at
    a normalised extreme ray of P.
    """
    return float(np.min(pair.outer.margin(pair.inner.unit_generators)))


def alpha_sampled(pair: ConePair, n_sphere: int = 10_000, seed: int = 0) -> float:
    """Sampling estimate of :func:`alpha` over random unit vectors of P."""
    rng = np.random.default_rng(seed)
    gens = pair.inner.unit_generators
    weights = rng.dirichlet(np.full(len(gens), 0.5), size=n_sphere)
    dirs = np.vstack([gens, weights @ gens])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return float(np.min(pair.outer.margin(dirs)))


def alpha_prime(pair: ConePair) -> float:
    return 1.0 + 1.0 / alpha(pair)


def lipschitz_constant(pair: ConePair) -> float:
    """Hausdorff-Lipschitz constant of the minimal-element map on K(C, P)."""
    ap = alpha_prime(pair)
    return (1.0 + ap) * mu(pair.outer) + ap
