"""Finite point clouds, minimal elements under a cone, and set distances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ._validation import as_points
from .cones import ConePair, OrderingCone, lipschitz_constant
from .tolerances import TAU_EQ, TAU_MEM

__all__ = [
    "PointCloud",
    "ParetoFront",
    "dedupe",
    "minimal_elements",
    "dominated_mask",
    "antichain_witness",
    "is_externally_stable",
    "directed_distance",
    "hausdorff",
    "upset_distance",
    "sandwich_hypotheses",
    "check_sandwich_lemma",
    "in_k_class",
    "project_to_k_class",
    "LipschitzReport",
    "lipschitz_certificate",
    "epsilon_archive",
]

_CHUNK = 1 << 20


def dedupe(points, tol: float = TAU_EQ) -> np.ndarray:
    """Drop near-duplicate rows and return the rest in lexicographic order."""
    pts = np.asarray(points, dtype=float)
    if len(pts) == 0:
        return pts.reshape(0, pts.shape[-1] if pts.ndim == 2 else 0)
    if tol > 0:
        keys = np.floor(pts / tol + 0.5)
        _, idx = np.unique(keys, axis=0, return_index=True)
        pts = pts[idx]
    order = np.lexsort(pts.T[::-1])
    return pts[order]


class PointCloud:
    """Finite subset of R^p with near-duplicates removed.

    The stored points are lexicographically sorted, so two clouds built from
    the same set compare equal regardless of input order.
    """

    def __init__(self, points, dim: int | None = None, *, allow_empty: bool = False, tol: float = TAU_EQ):
        pts = as_points(points, dim, allow_empty=allow_empty)
        self.points = dedupe(pts, tol)
        self.points.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return len(self.points)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.points, dtype=dtype)

    def __iter__(self):
        return iter(self.points)

    def __repr__(self):
        return f"{type(self).__name__}(n={len(self)}, dim={self.dim})"


class ParetoFront(PointCloud):
    """Antichain of points under ``cone``; produced by :func:`minimal_elements`."""

    def __init__(self, points, cone: OrderingCone, *, allow_empty: bool = False):
        super().__init__(points, cone.dim, allow_empty=allow_empty)
        self.cone = cone

    def is_antichain(self) -> bool:
        return antichain_witness(self.points, self.cone) is None


def _points(cloud, dim=None, allow_empty=False) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.points
    return as_points(cloud, dim, allow_empty=allow_empty)


def _order_key(cone: OrderingCone) -> np.ndarray:
    # strictly positive on P \ {0}: the facet normals span the dual cone
    return cone.facet_normals.sum(axis=0)


def _rank(pts: np.ndarray, cone: OrderingCone) -> np.ndarray:
    score = pts @ _order_key(cone)
    order = np.lexsort(tuple(pts.T[::-1]) + (score,))
    rank = np.empty(len(pts), dtype=np.int64)
    rank[order] = np.arange(len(pts))
    return rank


def dominated_mask(points, cone: OrderingCone, tol: float = TAU_MEM) -> np.ndarray:
    """Reference O(n^2) scan: mask of points dominated by some other point.

    Point i is dominated by j when y_i - y_j lies in the cone and j precedes
    i in the canonical order; the order only matters for pairs that dominate
    each other inside the tolerance band.
    """
    pts = _points(points, cone.dim)
    n = len(pts)
    rank = _rank(pts, cone)
    dominated = np.zeros(n, dtype=bool)
    rows = max(1, _CHUNK // max(n, 1))
    for start in range(0, n, rows):
        block = pts[start:start + rows]
        diff = (block[:, None, :] - pts[None, :, :]).reshape(-1, cone.dim)
        inside = cone.contains(diff, tol).reshape(len(block), n)
        earlier = rank[None, :] < rank[start:start + rows, None]
        dominated[start:start + rows] = np.any(inside & earlier, axis=1)
    return dominated


def _scan_minimal(pts: np.ndarray, cone: OrderingCone, tol: float) -> np.ndarray:
    order = np.argsort(_rank(pts, cone))
    kept: list[int] = []
    kept_pts = np.empty((0, cone.dim))
    for i in order:
        y = pts[i]
        if len(kept) and np.any(cone.contains(y - kept_pts, tol)):
            continue
        kept.append(i)
        kept_pts = pts[kept]
    mask = np.zeros(len(pts), dtype=bool)
    mask[kept] = True
    return mask


def minimal_elements(cloud, cone: OrderingCone, *, method: str = "scan", tol: float = TAU_MEM) -> ParetoFront:
    """Minimal elements of a finite cloud under ``cone``.

    ``method="pairwise"`` is the quadratic reference scan.  ``method="scan"``
    visits points along a direction that is strictly increasing on the cone
    and compares each point only with the minimal points found so far.
    """
    pts = dedupe(_points(cloud, cone.dim))
    if len(pts) == 0:
        raise ValueError("cloud is empty")
    if method == "pairwise":
        keep = ~dominated_mask(pts, cone, tol)
    elif method == "scan":
        keep = _scan_minimal(pts, cone, tol)
    else:
        raise ValueError(f"unknown method {method!r}")
    return ParetoFront(pts[keep], cone)


def antichain_witness(points, cone: OrderingCone, tol: float = TAU_MEM):
    """Return a pair (i, j) with y_i in y_j + P, i != j, or None."""
    pts = _points(points, cone.dim, allow_empty=True)
    n = len(pts)
    for i in range(n):
        diff = pts[i] - pts
        inside = cone.contains(diff, tol)
        inside[i] = False
        # exact duplicates count as a violation as well
        if np.any(inside):
            return i, int(np.flatnonzero(inside)[0])
    return None


def _covered(targets: np.ndarray, anchors: np.ndarray, cone: OrderingCone, tol: float) -> np.ndarray:
    """Mask of targets lying in some anchor + P."""
    out = np.zeros(len(targets), dtype=bool)
    rows = max(1, _CHUNK // max(len(anchors), 1))
    for start in range(0, len(targets), rows):
        block = targets[start:start + rows]
        diff = (block[:, None, :] - anchors[None, :, :]).reshape(-1, cone.dim)
        out[start:start + rows] = cone.contains(diff, tol).reshape(len(block), len(anchors)).any(axis=1)
    return out


def is_externally_stable(cloud, front, cone: OrderingCone, tol: float = TAU_MEM) -> bool:
    """True iff every cloud point lies in front + P."""
    pts = _points(cloud, cone.dim)
    fr = _points(front, cone.dim, allow_empty=True)
    if len(fr) == 0:
        return False
    return bool(np.all(_covered(pts, fr, cone, tol)))


def directed_distance(a, b) -> float:
    """sup over a of the distance to b."""
    pa, pb = _points(a), _points(b)
    if pa.shape[1] != pb.shape[1]:
        raise ValueError("dimension mismatch")
    d, _ = cKDTree(pb).query(pa)
    return float(np.max(d))


def hausdorff(a, b) -> float:
    return max(directed_distance(a, b), directed_distance(b, a))


def upset_distance(points, front, cone: OrderingCone) -> np.ndarray:
    """Distance from each point to front + P."""
    pts = _points(points, cone.dim, allow_empty=True)
    fr = _points(front, cone.dim)
    out = np.empty(len(pts))
    rows = max(1, _CHUNK // max(len(fr), 1))
    for start in range(0, len(pts), rows):
        block = pts[start:start + rows]
        diff = (block[:, None, :] - fr[None, :, :]).reshape(-1, cone.dim)
        out[start:start + rows] = cone.distance(diff).reshape(len(block), len(fr)).min(axis=1)
    return out


def _subset(a: np.ndarray, b: np.ndarray, tol: float) -> bool:
    d, _ = cKDTree(b).query(a)
    return bool(np.all(d <= tol))


def sandwich_hypotheses(k1, k2, cone: OrderingCone, tol: float = TAU_MEM) -> bool:
    """K1 is inside K2 and K2 is inside K1 + P."""
    a, b = _points(k1, cone.dim), _points(k2, cone.dim)
    return _subset(a, b, tol) and bool(np.all(_covered(b, a, cone, tol)))


def check_sandwich_lemma(k1, k2, cone: OrderingCone, tol: float = TAU_MEM) -> bool:
    """True iff the sandwich hypotheses hold and both clouds share one front.

    Returns False when the hypotheses fail; callers that need to tell the
    two outcomes apart should call :func:`sandwich_hypotheses` first.
    """
    if not sandwich_hypotheses(k1, k2, cone, tol):
        return False
    e1 = minimal_elements(k1, cone)
    e2 = minimal_elements(k2, cone)
    return hausdorff(e1, e2) <= tol


def _same_set(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and bool(np.all(np.abs(a - b) <= TAU_EQ))


def in_k_class(cloud, pair: ConePair) -> bool:
    """True iff the P-minimal and C-minimal elements coincide."""
    pts = _points(cloud, pair.inner.dim)
    return _same_set(minimal_elements(pts, pair.inner).points, minimal_elements(pts, pair.outer).points)


def project_to_k_class(cloud, pair: ConePair) -> np.ndarray:
    """Largest-effort subset of ``cloud`` lying in K(C, P).

    Repeatedly removes points that are P-minimal but not C-minimal.  The
    C-minimal points are never removed, so the loop terminates.
    """
    pts = dedupe(_points(cloud, pair.inner.dim))
    while True:
        ep = minimal_elements(pts, pair.inner).points
        ec = minimal_elements(pts, pair.outer).points
        if _same_set(ep, ec):
            return pts
        d, _ = cKDTree(ec).query(ep)
        drop = ep[d > TAU_EQ]
        d2, _ = cKDTree(drop).query(pts)
        pts = pts[d2 > TAU_EQ]


@dataclass(frozen=True)
class LipschitzReport:
    h_inputs: float
    h_fronts: float
    bound: float
    satisfied: bool

    @property
    def ratio(self) -> float:
        return self.h_fronts / self.h_inputs if self.h_inputs > 0 else 0.0


def lipschitz_certificate(k1, k2, pair: ConePair, *, slack: float = TAU_MEM) -> LipschitzReport:
    """Compare H(E(K1), E(K2)) with M(C, P) * H(K1, K2) for clouds in K(C, P)."""
    for name, k in (("k1", k1), ("k2", k2)):
        if not in_k_class(k, pair):
            raise ValueError(f"{name} is not in K(C, P): P-minimal and C-minimal sets differ")
    h_in = hausdorff(k1, k2)
    h_out = hausdorff(minimal_elements(k1, pair.inner), minimal_elements(k2, pair.inner))
    bound = lipschitz_constant(pair) * h_in
    return LipschitzReport(h_in, h_out, bound, h_out <= bound + slack)


def epsilon_archive(front, cone: OrderingCone, eps: float) -> np.ndarray:
    """Thin a front so every dropped point is eps-dominated by a kept one.

    A kept point a eps-dominates y when y + eps * e lies in a + P, with e the
    unit direction of the cone's deep point.  eps = 0 keeps everything.
    """
    pts = _points(front, cone.dim)
    if eps <= 0 or len(pts) < 2:
        return pts
    from .cones import deep_point

    e = deep_point(cone, 1.0)
    e = e / np.linalg.norm(e)
    kept: list[int] = []
    for i in np.argsort(_rank(pts, cone)):
        if kept and np.any(cone.contains(pts[i] + eps * e - pts[kept])):
            continue
        kept.append(i)
    return pts[np.sort(kept)]
