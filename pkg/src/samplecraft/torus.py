"""Arithmetic on the unit torus [0, 1)^n and fixed-radius neighbor queries."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import NumericError, UsageError


def toroidal_diff(a, b):
    """Toroidal offset ``a ⊖ b`` with every component in [-0.5, 0.5).

    Works elementwise on broadcastable arrays, so ``a`` and ``b`` may be single
    points or whole point sets.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-1:] != b.shape[-1:]:
        raise UsageError(f"dimension mismatch: {a.shape[-1:]} vs {b.shape[-1:]}")
    d = a - b
    d = d - np.floor(d + 0.5)
    # rounding in d + 0.5 can push the result one ulp outside [-0.5, 0.5)
    d = np.where(d < -0.5, d + 1.0, d)
    return np.where(d >= 0.5, d - 1.0, d)


def wrap(p):
    p = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p)):
        raise NumericError("cannot wrap non-finite coordinates")
    q = np.mod(p, 1.0)
    # np.mod(-1e-17, 1.0) == 1.0 in floating point
    return np.where(q >= 1.0, 0.0, q)


def _norm(d):
    return np.sqrt(np.sum(d * d, axis=-1))


def toroidal_dist(a, b):
    return _norm(toroidal_diff(a, b))


@dataclass(frozen=True)
class NeighborGrid:
    """Bucketing of a point set into toroidally wrapping cubic cells.

    ``order`` lists point indices sorted by cell id; ``starts[c]:starts[c+1]``
    is the slice of ``order`` holding the points of cell ``c``.
    """

    radius: float
    cells_per_axis: int
    dim: int
    count: int
    cell_of: np.ndarray
    order: np.ndarray
    starts: np.ndarray

    @property
    def cell_size(self) -> float:
        return 1.0 / self.cells_per_axis

    def buckets(self) -> dict[tuple[int, ...], list[int]]:
        out: dict[tuple[int, ...], list[int]] = {}
        shape = (self.cells_per_axis,) * self.dim
        for c in range(self.cells_per_axis ** self.dim):
            members = self.order[self.starts[c]:self.starts[c + 1]]
            if len(members):
                out[tuple(int(v) for v in np.unravel_index(c, shape))] = sorted(int(i) for i in members)
        return out

    def neighbor_cell_offsets(self) -> list[tuple[int, ...]]:
        # distinct offsets modulo the cell count, so tiny grids do not repeat cells
        k = self.cells_per_axis
        seen = set()
        out = []
        for off in itertools.product((-1, 0, 1), repeat=self.dim):
            key = tuple(o % k for o in off)
            if key not in seen:
                seen.add(key)
                out.append(off)
        return out


def _cell_coords(points: np.ndarray, cells: int) -> np.ndarray:
    c = np.floor(points * cells).astype(np.int64)
    return np.clip(c, 0, cells - 1)


def build_neighbor_grid(points, radius: float) -> NeighborGrid:
    points = np.asarray(points, dtype=float)
    if points.ndim != 2:
        raise UsageError("points must be an (N, n) array")
    if not 0.0 < radius <= 0.5:
        raise UsageError(f"radius must lie in (0, 0.5], got {radius}")
    n = points.shape[1]
    cells = max(1, int(math.floor(1.0 / radius)))
    coords = _cell_coords(points, cells)
    flat = np.ravel_multi_index(coords.T, (cells,) * n) if len(points) else np.zeros(0, np.int64)
    # within a cell, points are ordered by coordinates rather than by label
    order = np.lexsort(points.T[::-1].tolist() + [flat]) if len(points) else np.zeros(0, np.int64)
    counts = np.bincount(flat, minlength=cells ** n)
    starts = np.concatenate([[0], np.cumsum(counts)])
    return NeighborGrid(radius, cells, n, len(points), flat, order, starts)


def query_neighbors(grid: NeighborGrid, points, i: int, radius: float) -> list[int]:
    """Indices ``j != i`` within toroidal distance ``radius`` of point ``i``, ascending."""
    points = np.asarray(points, dtype=float)
    if len(points) != grid.count:
        raise UsageError("neighbor grid is stale: point count changed")
    if radius > grid.cell_size and grid.cells_per_axis > 3:
        raise UsageError("query radius exceeds grid cell size")
    k = grid.cells_per_axis
    base = np.unravel_index(grid.cell_of[i], (k,) * grid.dim)
    cand = []
    for off in grid.neighbor_cell_offsets():
        c = np.ravel_multi_index([(b + o) % k for b, o in zip(base, off)], (k,) * grid.dim)
        cand.append(grid.order[grid.starts[c]:grid.starts[c + 1]])
    cand = np.concatenate(cand) if cand else np.zeros(0, np.int64)
    cand = cand[cand != i]
    d = toroidal_diff(points[i], points[cand])
    return sorted(int(j) for j in cand[np.sum(d * d, axis=1) <= radius * radius])


def neighbor_pairs(points, radius: float, grid: NeighborGrid | None = None):
    """All ordered pairs ``(i, j)``, ``i != j``, within toroidal distance ``radius``.

    Returns ``(I, J, D)`` with ``D = points[I] ⊖ points[J]``. Pairs are grouped
    by ``i`` in ascending order; within a group the neighbors come in an order
    fixed by their coordinates, which makes downstream sums independent of
    labeling.
    """
    points = np.ascontiguousarray(points, dtype=float)
    if grid is None:
        grid = build_neighbor_grid(points, radius)
    k = grid.cells_per_axis
    if k <= 3:
        order = np.lexsort(points.T[::-1]) if len(points) else np.zeros(0, np.int64)
        return _kernels.pairs_dense(points, float(radius), order)
    coords = np.stack(np.unravel_index(grid.cell_of, (k,) * grid.dim), axis=1).astype(np.int64)
    offsets = np.array(grid.neighbor_cell_offsets(), dtype=np.int64)
    return _kernels.pairs_grid(points, float(radius), coords, k, grid.order.astype(np.int64),
                               grid.starts.astype(np.int64), offsets)
