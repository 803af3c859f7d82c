import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from samplecraft.errors import NumericError, UsageError
from samplecraft.samplers import jittered_points
from samplecraft.torus import (build_neighbor_grid, neighbor_pairs, query_neighbors, toroidal_diff,
                               toroidal_dist, wrap)

unit = st.floats(0.0, 1.0, exclude_max=True)


def coords(n):
    return arrays(np.float64, n, elements=unit)


def test_diff_examples():
    assert toroidal_diff([0.1], [0.9]) == pytest.approx([0.2])
    assert np.all(toroidal_diff([0.3, 0.6], [0.3, 0.6]) == 0.0)
    assert np.array_equal(toroidal_diff([0.75, 0.25], [0.25, 0.75]), [-0.5, -0.5])


def test_diff_dimension_mismatch():
    with pytest.raises(UsageError):
        toroidal_diff([0.1, 0.2], [0.1])


def test_wrap_examples():
    assert wrap([1.2, -0.3]) == pytest.approx([0.2, 0.7])
    assert np.array_equal(wrap([0.0, 0.999]), [0.0, 0.999])
    q = wrap([-1e-16])
    assert 0.0 <= q[0] < 1.0
    with pytest.raises(NumericError):
        wrap([np.nan])
    with pytest.raises(NumericError):
        wrap([np.inf, 0.1])


def test_dist_examples():
    assert toroidal_dist([0.1, 0.1], [0.9, 0.9]) == pytest.approx(math.sqrt(0.08))
    assert toroidal_dist([0.4, 0.4], [0.4, 0.4]) == 0.0
    assert toroidal_dist([0.0, 0.0], [0.5, 0.5]) == pytest.approx(math.sqrt(0.5))


@given(coords(3), coords(3))
def test_diff_range_and_antisymmetry(a, b):
    d = toroidal_diff(a, b)
    assert np.all(d >= -0.5) and np.all(d < 0.5)
    e = toroidal_diff(b, a)
    tie = d == -0.5
    assert np.all(e[tie] == -0.5)
    assert np.all(e[~tie] == -d[~tie])


@given(coords(2), coords(2), coords(2))
def test_diff_shift_invariance(a, b, t):
    gap = np.abs(toroidal_diff(wrap(a + t), wrap(b + t)) - toroidal_diff(a, b))
    # rounding in the shift may move an offset of exactly +-0.5 across the cut
    assert np.all(np.minimum(gap, np.abs(1.0 - gap)) <= 1e-12)


@given(coords(3), coords(3), coords(3))
def test_triangle_inequality(a, b, c):
    assert toroidal_dist(a, c) <= toroidal_dist(a, b) + toroidal_dist(b, c) + 1e-12


@given(arrays(np.float64, st.integers(1, 5), elements=st.floats(-1e6, 1e6)))
def test_wrap_range(p):
    q = wrap(p)
    assert np.all(q >= 0) and np.all(q < 1)


def test_grid_examples():
    pts = np.array([[0.1, 0.1], [0.6, 0.1], [0.1, 0.6], [0.6, 0.6]])
    grid = build_neighbor_grid(pts, 0.4)
    assert grid.cells_per_axis == 2
    expected = {}
    for i, p in enumerate(pts):
        expected.setdefault(tuple(int(v) for v in np.floor(p / grid.cell_size)), []).append(i)
    assert grid.buckets() == expected
    assert sorted(i for b in grid.buckets().values() for i in b) == [0, 1, 2, 3]


def test_grid_empty_and_bad_radius():
    grid = build_neighbor_grid(np.zeros((0, 2)), 0.3)
    assert grid.count == 0 and grid.buckets() == {}
    with pytest.raises(UsageError):
        build_neighbor_grid(np.zeros((3, 2)), 0.6)
    with pytest.raises(UsageError):
        build_neighbor_grid(np.zeros((3, 2)), 0.0)


def brute(points, i, r):
    d = toroidal_diff(points[i], points)
    hit = np.sum(d * d, axis=1) <= r * r
    hit[i] = False
    return list(np.flatnonzero(hit))


def test_query_examples():
    pts = np.random.default_rng(0).random((10, 2))
    grid = build_neighbor_grid(pts, 0.5)
    assert query_neighbors(grid, pts, 3, 0.5 * math.sqrt(2) + 1e-9) == [j for j in range(10) if j != 3]
    one = np.array([[0.3, 0.3]])
    assert query_neighbors(build_neighbor_grid(one, 0.2), one, 0, 0.2) == []
    jit = jittered_points(16, 2, 5).coords
    assert query_neighbors(build_neighbor_grid(jit, 0.3), jit, 0, 0.3) == brute(jit, 0, 0.3)


def test_query_stale_grid():
    pts = np.random.default_rng(1).random((5, 2))
    grid = build_neighbor_grid(pts, 0.2)
    with pytest.raises(UsageError):
        query_neighbors(grid, pts[:4], 0, 0.2)


def test_query_matches_brute_force_many_configs():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        n = int(rng.integers(1, 4))
        N = int(rng.integers(1, 40))
        r = float(rng.uniform(0.02, 0.5))
        pts = rng.random((N, n))
        grid = build_neighbor_grid(pts, r)
        i = int(rng.integers(N))
        assert query_neighbors(grid, pts, i, r) == brute(pts, i, r)


@pytest.mark.parametrize("n,r", [(1, 0.05), (2, 0.1), (2, 0.4), (3, 0.2)])
def test_neighbor_pairs_match_brute_force(n, r):
    pts = np.random.default_rng(n).random((60, n))
    I, J, D = neighbor_pairs(pts, r)
    got = {(int(i), int(j)) for i, j in zip(I, J)}
    want = {(i, j) for i in range(60) for j in brute(pts, i, r)}
    assert got == want
    assert np.array_equal(D, toroidal_diff(pts[I], pts[J]))
    assert np.all(np.diff(I) >= 0)
