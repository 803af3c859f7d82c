"""Reference point samplers used for initialization, RBF placement and baselines.

All seeded samplers draw from numpy's Philox4x64 counter-based generator, which
is bit-reproducible across platforms for a given seed.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import UsageError

PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53)


@dataclass(frozen=True)
class PointSet:
    coords: np.ndarray
    free_dims: np.ndarray = None

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim != 2:
            raise UsageError("point set coordinates must be an (N, n) array")
        if coords.size and (np.any(coords < 0) or np.any(coords >= 1)):
            raise UsageError("point coordinates must lie in [0, 1)")
        object.__setattr__(self, "coords", coords)
        free = np.ones(coords.shape[1], bool) if self.free_dims is None else np.asarray(self.free_dims, bool)
        if free.shape != (coords.shape[1],):
            raise UsageError("free_dims must have one entry per dimension")
        object.__setattr__(self, "free_dims", free)

    @property
    def count(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def __len__(self):
        return self.count


def make_rng(*seed) -> np.random.Generator:
    """Philox generator keyed by one or more non-negative integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(seed))))


def _check(N: int, n: int):
    if N < 1:
        raise UsageError(f"point count must be at least 1, got {N}")
    if n < 1:
        raise UsageError(f"dimension must be at least 1, got {n}")


def random_points(N: int, n: int, seed: int = 0) -> PointSet:
    _check(N, n)
    return PointSet(make_rng(seed).random((N, n)))


def _jitter_side(N: int, n: int) -> int:
    k = int(round(N ** (1.0 / n)))
    for cand in (k - 1, k, k + 1):
        if cand >= 1 and cand ** n == N:
            return cand
    lo = int(np.floor(N ** (1.0 / n)))
    options = sorted({max(lo, 1) ** n, (lo + 1) ** n}, key=lambda v: (abs(v - N), v))
    raise UsageError(f"jittered sampling needs N = k^{n}; nearest valid N is {options[0]}")


def jittered_points(N: int, n: int, seed: int = 0) -> PointSet:
    _check(N, n)
    k = _jitter_side(N, n)
    cells = np.array(list(itertools.product(range(k), repeat=n)), dtype=float).reshape(N, n)
    u = make_rng(seed).random((N, n))
    x = (cells + u) / k
    return PointSet(np.minimum(x, np.nextafter(1.0, 0.0)))


def radical_inverse(i: int, base: int) -> float:
    if i < 0 or base < 2:
        raise UsageError("radical inverse needs i >= 0 and base >= 2")
    rev, denom = 0, 1
    while i:
        i, digit = divmod(i, base)
        rev = rev * base + digit
        denom *= base
    return rev / denom


def _check_primes(n: int):
    if n > len(PRIMES):
        raise UsageError(f"at most {len(PRIMES)} dimensions supported, got {n}")


def halton_points(N: int, n: int) -> PointSet:
    _check(N, n)
    _check_primes(n)
    x = np.array([[radical_inverse(i, PRIMES[d]) for d in range(n)] for i in range(1, N + 1)])
    return PointSet(x.reshape(N, n))


def hammersley_points(N: int, n: int) -> PointSet:
    _check(N, n)
    _check_primes(n - 1)
    x = np.empty((N, n))
    x[:, 0] = np.arange(N) / N
    for d in range(1, n):
        x[:, d] = [radical_inverse(i, PRIMES[d - 1]) for i in range(N)]
    return PointSet(x)


def latin_hypercube_points(N: int, n: int, seed: int = 0) -> PointSet:
    _check(N, n)
    rng = make_rng(seed)
    x = np.empty((N, n))
    for d in range(n):
        x[:, d] = (rng.permutation(N) + rng.random(N)) / N
    return PointSet(np.minimum(x, np.nextafter(1.0, 0.0)))


def poisson_disk_points(N: int, n: int, seed: int = 0, radius: float | None = None,
                        max_attempts: int = 1_000_000) -> PointSet:
    """Fixed-count dart throwing on the torus.

    ``radius`` defaults to 0.7 of the hexagonal-packing spacing in 2D
    (``sqrt(2 / (sqrt(3) N))``), and to ``0.6 * N**(-1/n)`` otherwise.
    """
    _check(N, n)
    if radius is None:
        radius = 0.7 * np.sqrt(2.0 / (np.sqrt(3.0) * N)) if n == 2 else 0.6 * N ** (-1.0 / n)
    rng = make_rng(seed)
    pts = np.empty((N, n))
    count = 0
    attempts = 0
    while count < N:
        cand = rng.random((256, n))
        for c in cand:
            attempts += 1
            if attempts > max_attempts:
                raise UsageError(f"dart throwing stalled at {count}/{N} points for radius {radius:.4g}")
            if count:
                d = np.mod(pts[:count] - c + 0.5, 1.0) - 0.5
                if np.min(np.sum(d * d, axis=1)) < radius * radius:
                    continue
            pts[count] = c
            count += 1
            if count == N:
                break
    return PointSet(pts)


SAMPLERS = {
    "random": lambda N, n, seed: random_points(N, n, seed),
    "jittered": lambda N, n, seed: jittered_points(N, n, seed),
    "halton": lambda N, n, seed: halton_points(N, n),
    "hammersley": lambda N, n, seed: hammersley_points(N, n),
    "lhc": lambda N, n, seed: latin_hypercube_points(N, n, seed),
    "poisson": lambda N, n, seed: poisson_disk_points(N, n, seed),
}


def sample(name: str, N: int, n: int, seed: int = 0) -> PointSet:
    try:
        fn = SAMPLERS[name]
    except KeyError:
        raise UsageError(f"unknown sampler {name!r}; choose from {', '.join(SAMPLERS)}") from None
    return fn(N, n, seed)
