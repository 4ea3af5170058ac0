"""Rectangular state lattices and the nearest-node landing rule."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

__all__ = ["StateGrid", "TrajectoryEscapeError"]


class TrajectoryEscapeError(RuntimeError):
    """A landed state fell outside the region where values are available."""

    def __init__(self, message, node=None, landing=None, time=None):
        super().__init__(message)
        self.node = node
        self.landing = landing
        self.time = time


@dataclass(frozen=True)
class StateGrid:
    """Uniform lattice ``lower + i * spacing`` with ``shape[k]`` nodes per axis."""

    lower: tuple
    spacing: tuple
    shape: tuple

    @classmethod
    def from_box(cls, box, spacing) -> "StateGrid":
        box = np.asarray(box, dtype=float)
        box = box.reshape(-1, 2)
        spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (len(box),))
        if np.any(spacing <= 0) or np.any(box[:, 1] < box[:, 0]):
            raise ValueError("box must be ordered and spacing positive")
        counts = np.round((box[:, 1] - box[:, 0]) / spacing).astype(int) + 1
        return cls(tuple(box[:, 0].tolist()), tuple(spacing.tolist()), tuple(counts.tolist()))

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.lower) + (np.asarray(self.shape) - 1) * np.asarray(self.spacing)

    def coords(self, multi_index) -> np.ndarray:
        idx = np.asarray(multi_index, dtype=float)
        return np.asarray(self.lower) + idx * np.asarray(self.spacing)

    def nodes(self) -> np.ndarray:
        """Node coordinates in C order of the flat index."""
        idx = np.indices(self.shape).reshape(self.dim, -1).T
        return self.coords(idx)

    def multi_index(self, flat) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(flat), self.shape), axis=-1)

    def nearest(self, points) -> np.ndarray:
        """Flat index of the nearest node, -1 for points off the lattice."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        raw = np.rint((pts - np.asarray(self.lower)) / np.asarray(self.spacing)).astype(np.int64)
        inside = np.all((raw >= 0) & (raw < np.asarray(self.shape)), axis=1)
        flat = np.full(len(pts), -1, dtype=np.int64)
        if np.any(inside):
            flat[inside] = np.ravel_multi_index(tuple(raw[inside].T), self.shape)
        return flat

    def snap(self, points) -> np.ndarray:
        """Replace points by their nearest node coordinates."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        flat = self.nearest(pts)
        bad = flat < 0
        if np.any(bad):
            p = pts[np.flatnonzero(bad)[0]]
            raise TrajectoryEscapeError(f"state {p.tolist()} left the grid box", landing=p)
        return self.coords(self.multi_index(flat))

    def corners(self, points) -> np.ndarray:
        """Flat indices (n_points, 2**dim) of the cell corners around each point.

        Points outside the lattice get -1 entries.
        """
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        rel = (pts - np.asarray(self.lower)) / np.asarray(self.spacing)
        base = np.floor(rel + 1e-9).astype(np.int64)
        # points on the last node row use the cell below
        base = np.maximum(np.minimum(base, np.asarray(self.shape) - 2), 0)
        out = np.full((len(pts), 2 ** self.dim), -1, dtype=np.int64)
        offsets = list(itertools.product((0, 1), repeat=self.dim))
        within = np.all((rel >= -1e-9) & (rel <= np.asarray(self.shape) - 1 + 1e-9), axis=1)
        for c, off in enumerate(offsets):
            idx = np.minimum(base + np.asarray(off), np.asarray(self.shape) - 1)
            ok = within & np.all(idx >= 0, axis=1)
            if np.any(ok):
                out[ok, c] = np.ravel_multi_index(tuple(idx[ok].T), self.shape)
        return out

    def neighbours(self, flat: int) -> list[int]:
        """Flat indices of axis neighbours (distance one spacing)."""
        mi = self.multi_index(flat)
        out = []
        for k in range(self.dim):
            for step in (-1, 1):
                j = mi.copy()
                j[k] += step
                if 0 <= j[k] < self.shape[k]:
                    out.append(int(np.ravel_multi_index(tuple(j), self.shape)))
        return out

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "spacing": list(self.spacing), "shape": list(self.shape)}

    @classmethod
    def from_dict(cls, data) -> "StateGrid":
        return cls(tuple(map(float, data["lower"])), tuple(map(float, data["spacing"])), tuple(map(int, data["shape"])))
