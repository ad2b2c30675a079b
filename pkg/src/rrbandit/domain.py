"""Finite candidate domains."""

from __future__ import annotations

import numpy as np

from .validation import check_matrix, check_vector

__all__ = ["DomainGrid"]


class DomainGrid:
    """Finite ordered set of candidate points in R^d.

    Every argmax, posterior-variance and certification computation in the
    package runs over such a grid.  Indexing is stable: point ``i`` keeps
    index ``i`` for the lifetime of the grid.

    Parameters
    ----------
    points : array-like, shape (m, d)
        Distinct candidate coordinates, m >= 2.
    """

    def __init__(self, points):
        pts = check_matrix(points, "points")
        if pts.shape[0] < 2:
            raise ValueError(f"grid needs at least 2 points, got {pts.shape[0]}")
        uniq = np.unique(pts, axis=0)
        if uniq.shape[0] != pts.shape[0]:
            raise ValueError("grid contains duplicate points")
        self.points = pts
        self.points.setflags(write=False)

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.m

    def index_of(self, x) -> int:
        """Index of ``x`` in the grid; raises if ``x`` is not a grid point."""
        x = check_vector(x, "x", dim=self.dim)
        matches = np.where(np.all(self.points == x, axis=1))[0]
        if matches.size == 0:
            raise ValueError("point is not registered on this grid")
        return int(matches[0])

    def contains(self, x) -> bool:
        try:
            self.index_of(x)
        except ValueError:
            return False
        return True

    @classmethod
    def linspace(cls, low: float, high: float, m: int) -> "DomainGrid":
        """Evenly spaced 1-D grid on [low, high]."""
        return cls(np.linspace(low, high, m).reshape(-1, 1))

    @classmethod
    def uniform(cls, m: int, dim: int, rng, low: float = -1.0, high: float = 1.0) -> "DomainGrid":
        """m points drawn uniformly from the box [low, high]^dim."""
        return cls(rng.uniform(low, high, size=(m, dim)))
