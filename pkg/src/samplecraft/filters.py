"""Learnable RBF filters on unstructured point sets and their iterated application.

One iteration moves every point by a kernel-weighted barycentric step towards
(or, for negative kernel values, away from) its neighbors inside the receptive
field. The kernel is a weighted sum of Gaussian bumps placed at fixed offsets;
only the weights are learned.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .errors import UsageError
from .samplers import PointSet, hammersley_points
from .torus import build_neighbor_grid, neighbor_pairs, query_neighbors, toroidal_diff, wrap

DENOMINATOR_EPS = 1e-6


@dataclass(frozen=True)
class KernelBasis:
    means: np.ndarray  # (m, n) offsets in [-receptive, receptive]^n
    kernel_sigma: float
    receptive: float

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        object.__setattr__(self, "means", means)
        if len(means) < 1:
            raise UsageError("kernel basis needs at least one RBF")
        if not self.kernel_sigma > 0:
            raise UsageError("kernel width must be positive")
        if not 0 < self.receptive <= 0.5:
            raise UsageError("receptive field must lie in (0, 0.5]")
        if np.any(np.abs(means) > self.receptive * (1 + 1e-12)):
            raise UsageError("RBF means must lie inside the receptive field box")

    @property
    def m(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def scaled(self, factor: float) -> "KernelBasis":
        if factor == 1.0:
            return self
        return KernelBasis(self.means * factor, self.kernel_sigma * factor, self.receptive * factor)


def init_kernel_basis(m: int, n: int, receptive: float = 0.4, kernel_sigma: float = 0.04) -> KernelBasis:
    """RBF means at the Hammersley points of the box [-receptive, receptive]^n."""
    if m < 1 or n < 1:
        raise UsageError("m and n must be positive")
    h = hammersley_points(m, n).coords
    return KernelBasis((2.0 * h - 1.0) * receptive, kernel_sigma, receptive)


@dataclass(frozen=True)
class FilterStack:
    basis: KernelBasis
    weights: np.ndarray  # (iterations, m)
    free_dims: np.ndarray = None
    shrink: float = 1.0

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "weights", w)
        if w.shape[0] < 1 or w.shape[1] != self.basis.m:
            raise UsageError(f"weights must have shape (iterations, {self.basis.m}), got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise UsageError("filter weights must be finite")
        free = self.free_dims
        free = np.ones(self.basis.dim, bool) if free is None else np.asarray(free, dtype=bool)
        if free.shape != (self.basis.dim,):
            raise UsageError("free_dims mask must have one entry per dimension")
        if not free.any():
            raise UsageError("at least one dimension must be free")
        object.__setattr__(self, "free_dims", free)
        if not 0 < self.shrink <= 1:
            raise UsageError("shrink factor must lie in (0, 1]")

    @property
    def iterations(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.basis.dim

    def level_scale(self, level: int) -> float:
        return self.shrink ** level

    def with_weights(self, weights) -> "FilterStack":
        return replace(self, weights=np.array(weights, dtype=float))


def zero_stack(basis: KernelBasis, iterations: int, free_dims=None, shrink: float = 1.0) -> FilterStack:
    return FilterStack(basis, np.zeros((iterations, basis.m)), free_dims, shrink)


def kernel_value(d, w, basis: KernelBasis) -> float:
    d = np.asarray(d, dtype=float)
    if np.sum(d * d) > basis.receptive ** 2:
        return 0.0
    sq = np.sum((d[None, :] - basis.means) ** 2, axis=1)
    return float(np.dot(w, np.exp(-sq / (2.0 * basis.kernel_sigma ** 2))))


def convolve_point(i: int, points, w, basis: KernelBasis, free_dims=None, grid=None):
    """Filtered position of point ``i``; straightforward per-point reference."""
    points = np.asarray(points, dtype=float)
    free = np.ones(points.shape[1], bool) if free_dims is None else np.asarray(free_dims, bool)
    if grid is None:
        grid = build_neighbor_grid(points, basis.receptive)
    num = np.zeros(points.shape[1])
    den = 1.0
    for j in query_neighbors(grid, points, i, basis.receptive):
        d = toroidal_diff(points[i], points[j])
        g = kernel_value(d, w, basis)
        num += g * (-d)
        den += g
    out = points[i].copy()
    out[free] = wrap(points[i][free] + num[free] / max(abs(den), DENOMINATOR_EPS))
    return out


_CHUNK = 8192


def _iteration_state(X, w, basis: KernelBasis):
    I, J, D = neighbor_pairs(X, basis.receptive)
    phi = _kernels.kernel_values(D, basis.means, basis.kernel_sigma)
    g, A, B = _kernels.accumulate(I, D, phi, w, X.shape[0])
    return I, J, D, phi, g, A, B


def _displacement(X, w, basis: KernelBasis):
    # same sums as _iteration_state, chunked so the kernel matrix stays in cache
    N, n = X.shape
    I, J, D = neighbor_pairs(X, basis.receptive)
    A = np.zeros((N, n))
    B = np.ones(N)
    for s in range(0, len(I), _CHUNK):
        phi = _kernels.kernel_values(D[s:s + _CHUNK], basis.means, basis.kernel_sigma)
        _kernels.accumulate_into(I[s:s + _CHUNK], D[s:s + _CHUNK], phi, w, A, B)
    return A, B


def _update(X, A, B, free):
    den = np.maximum(np.abs(B), DENOMINATOR_EPS)
    Y = X.copy()
    Y[:, free] = wrap(X[:, free] + A[:, free] / den[:, None])
    return Y


def apply_iteration(points, w, basis: KernelBasis, radius_scale: float = 1.0, free_dims=None) -> np.ndarray:
    """One Jacobi-style filter pass: every output reads only the input positions."""
    X = np.ascontiguousarray(points, dtype=float)
    w = np.asarray(w, dtype=float)
    free = np.ones(X.shape[1], bool) if free_dims is None else np.asarray(free_dims, bool)
    if not np.any(w):
        return X.copy()
    A, B = _displacement(X, w, basis.scaled(radius_scale))
    return _update(X, A, B, free)


def iteration_forward(points, w, basis: KernelBasis, radius_scale: float = 1.0, free_dims=None):
    """Like :func:`apply_iteration` but also returns the pair state for the pullback."""
    X = np.ascontiguousarray(points, dtype=float)
    w = np.asarray(w, dtype=float)
    free = np.ones(X.shape[1], bool) if free_dims is None else np.asarray(free_dims, bool)
    state = _iteration_state(X, w, basis.scaled(radius_scale))
    return _update(X, state[-2], state[-1], free), state


def iteration_vjp(points, w, basis: KernelBasis, radius_scale, free_dims, ct_out, state=None):
    """Pullback of :func:`apply_iteration` for output cotangent ``ct_out``.

    Neighbor sets are treated as constant and the wrap as the identity map.
    ``state`` from :func:`iteration_forward` skips recomputing the pair
    structure. Returns ``(ct_points, ct_w)``.
    """
    X = np.ascontiguousarray(points, dtype=float)
    w = np.asarray(w, dtype=float)
    free = np.ones(X.shape[1], bool) if free_dims is None else np.asarray(free_dims, bool)
    basis = basis.scaled(radius_scale)
    if state is None:
        state = _iteration_state(X, w, basis)
    I, J, D, phi, g, A, B = state
    return _kernels.iteration_backward(I, J, D, phi, g, A, B, w, basis.means, basis.kernel_sigma,
                                       free, np.ascontiguousarray(ct_out, dtype=float), DENOMINATOR_EPS)


def apply_stack(points, stack: FilterStack, return_tape: bool = False):
    """Run all iterations of ``stack``; optionally also return every intermediate set.

    A :class:`PointSet` input gives a :class:`PointSet` output with the same
    free-dimension mask; arrays give arrays.
    """
    if isinstance(points, PointSet):
        out = apply_stack(points.coords, stack, return_tape)
        if return_tape:
            return PointSet(out[0], points.free_dims), out[1]
        return PointSet(out, points.free_dims)
    X = np.asarray(points, dtype=float)
    if X.ndim != 2 or X.shape[1] != stack.dim:
        raise UsageError(f"point dimension {X.shape[-1]} does not match filter dimension {stack.dim}")
    tape = [X]
    for level, w in enumerate(stack.weights):
        X = apply_iteration(X, w, stack.basis, stack.level_scale(level), stack.free_dims)
        tape.append(X)
    return (X, tape) if return_tape else X
