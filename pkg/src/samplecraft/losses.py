"""Differentiable point-set losses.

Every loss takes a batch (list of ``(N, n)`` coordinate arrays) and returns a
scalar. With ``grad=True`` it returns ``(value, grads)`` where ``grads[b]`` is
the derivative with respect to the coordinates of batch item ``b``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import UsageError
from .samplers import make_rng
from .torus import toroidal_diff

TWO_PI = 2.0 * np.pi
# lattice packing constants (1D: regular spacing, 2D: hexagonal)
PACKING = {1: 1.0, 2: 1.0 / math.sqrt(2.0 / math.sqrt(3.0))}


def default_extent(N: int, n: int) -> int:
    return int(min(64, math.ceil(2.0 * N ** (1.0 / n))))


def lattice_norms(K: int, n: int) -> np.ndarray:
    k = np.arange(-K, K + 1, dtype=float)
    grids = np.meshgrid(*([k] * n), indexing="ij")
    return np.sqrt(sum(g * g for g in grids))


def _batch_shape(batch):
    if len(batch) == 0:
        raise UsageError("empty batch")
    shapes = {np.shape(x) for x in batch}
    if len(shapes) != 1:
        raise UsageError(f"batch items must share shape, got {sorted(shapes)}")
    N, n = next(iter(shapes))
    return N, n


# ---------------------------------------------------------------------------
# spectra

@dataclass(frozen=True)
class Spectrum:
    """Periodogram on the integer lattice ``[-K, K]^n``; index ``a`` is frequency ``a - K``."""

    power: np.ndarray
    K: int
    count: int

    @property
    def dim(self) -> int:
        return self.power.ndim

    def norms(self) -> np.ndarray:
        return lattice_norms(self.K, self.dim)

    def at(self, k) -> float:
        return float(self.power[tuple(int(c) + self.K for c in k)])


def _phasors(X, K):
    k = np.arange(-K, K + 1)
    return [np.exp(-1j * TWO_PI * np.outer(X[:, d], k)) for d in range(X.shape[1])]


_LETTERS = "abcdefgh"


def _structure_factor(E):
    n = len(E)
    subs = ",".join("z" + _LETTERS[d] for d in range(n)) + "->" + _LETTERS[:n]
    return np.einsum(subs, *E, optimize=True)


def periodogram(points, K: int) -> Spectrum:
    """``P(k) = |sum_j exp(-2 pi i k.x_j)|^2 / N`` on the lattice ``[-K, K]^n``."""
    X = np.asarray(points, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise UsageError("periodogram needs a non-empty (N, n) point set")
    if K < 1:
        raise UsageError("lattice extent K must be at least 1")
    S = _structure_factor(_phasors(X, K))
    return Spectrum(np.abs(S) ** 2 / len(X), K, len(X))


def _periodogram_and_pullback(X, K):
    E = _phasors(X, K)
    S = _structure_factor(E)
    N, n = X.shape
    P = np.abs(S) ** 2 / N

    def pullback(ct_P):
        H = (2.0 / N) * ct_P * np.conj(S)
        k = np.arange(-K, K + 1)
        out = np.empty((N, n))
        lat = _LETTERS[:n]
        for d in range(n):
            ops = [E[c] * k if c == d else E[c] for c in range(n)]
            subs = lat + "," + ",".join("z" + _LETTERS[c] for c in range(n)) + "->z"
            out[:, d] = np.real(-1j * TWO_PI * np.einsum(subs, H, *ops, optimize=True))
        return out

    return P, pullback


def periodogram_vjp(points, K, ct_power):
    X = np.asarray(points, dtype=float)
    _, pullback = _periodogram_and_pullback(X, K)
    return pullback(np.asarray(ct_power, dtype=float))


def _dc_mask(K, n):
    mask = np.ones((2 * K + 1,) * n, bool)
    mask[(K,) * n] = False
    return mask


# ---------------------------------------------------------------------------
# spectral targets

def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


BUILTIN_TARGETS = ("bn", "jitter", "green", "pink")


@dataclass(frozen=True)
class TargetSpectrum:
    """Desired spectrum: a radial table, a full 2D lattice table, or a builtin recipe.

    Radial tables hold ``(radius, power)`` rows in lattice units and are linearly
    interpolated. Builtins are analytic approximations parameterized by the
    point count of the set they are compared against.
    """

    kind: str
    radius: np.ndarray = None
    power: np.ndarray = None
    name: str = ""

    @classmethod
    def radial(cls, radius, power) -> "TargetSpectrum":
        radius = np.asarray(radius, dtype=float)
        power = np.asarray(power, dtype=float)
        if radius.shape != power.shape or radius.ndim != 1 or len(radius) < 2:
            raise UsageError("radial target needs matching 1D radius/power columns")
        if np.any(np.diff(radius) <= 0):
            raise UsageError("radial target radii must increase strictly")
        if np.any(power < 0):
            raise UsageError("target power must be nonnegative")
        return cls("radial", radius, power)

    @classmethod
    def full(cls, power) -> "TargetSpectrum":
        power = np.asarray(power, dtype=float)
        if power.ndim < 1 or len(set(power.shape)) != 1 or power.shape[0] % 2 != 1:
            raise UsageError("full target must be a centered odd-sized square table")
        if np.any(power < 0):
            raise UsageError("target power must be nonnegative")
        return cls("full", power=power)

    @classmethod
    def builtin(cls, name: str) -> "TargetSpectrum":
        if name not in BUILTIN_TARGETS:
            raise UsageError(f"unknown builtin target {name!r}; choose from {', '.join(BUILTIN_TARGETS)}")
        return cls("builtin", name=name)

    def radial_profile(self, r, N: int, n: int) -> np.ndarray:
        """Target power at radial frequencies ``r`` (radial and isotropic builtins only)."""
        r = np.asarray(r, dtype=float)
        if self.kind == "radial":
            if r.min() < self.radius[0] - 1e-12 or r.max() > self.radius[-1] + 1e-12:
                raise UsageError(
                    f"radial target covers [{self.radius[0]:g}, {self.radius[-1]:g}] but frequencies "
                    f"up to {r.max():g} are required")
            return np.interp(r, self.radius, self.power)
        if self.kind != "builtin" or self.name == "jitter":
            raise UsageError(f"target {self.kind} {self.name} has no radial profile")
        cutoff = 0.85 * N ** (1.0 / n) * PACKING.get(n, 1.0)
        if self.name == "bn":
            return _smoothstep((r - (cutoff - 1.0)) / 2.0)
        if self.name == "green":
            # suppressed lows, a peak of 2 around the cutoff, flat tail
            rise = _smoothstep((r - 0.5 * cutoff) / (0.5 * cutoff))
            return rise * (1.0 + np.exp(-0.5 * ((r - cutoff) / (0.25 * cutoff)) ** 2))
        # pink: power falling like 1/r towards the flat tail
        return 1.0 + cutoff / np.maximum(r, 1.0)

    def lattice(self, K: int, n: int, N: int) -> np.ndarray:
        if self.kind == "full":
            K0 = self.power.shape[0] // 2
            if self.power.ndim != n:
                raise UsageError(f"{self.power.ndim}D target used on {n}D points")
            if K0 < K:
                raise UsageError(f"full target covers |k| <= {K0} but K = {K} is required")
            sl = (slice(K0 - K, K0 + K + 1),) * n
            return self.power[sl]
        if self.kind == "builtin" and self.name == "jitter":
            side = N ** (1.0 / n)
            k = np.arange(-K, K + 1) / side
            env = np.ones((2 * K + 1,) * n)
            for d in range(n):
                shape = [1] * n
                shape[d] = -1
                env = env * np.sinc(k).reshape(shape) ** 2
            return 1.0 - env
        return self.radial_profile(lattice_norms(K, n), N, n)


# ---------------------------------------------------------------------------
# spectral losses

def spectral_loss(batch, target: TargetSpectrum, K: int | None = None, grad: bool = False):
    """Mean squared gap (DC excluded) between the batch-averaged periodogram and the target.

    Sets with more than two dimensions are compared through all their 2D
    projections.
    """
    N, n = _batch_shape(batch)
    if n > 2:
        pairs = list(itertools.combinations(range(n), 2))
        return projected_spectral_loss(batch, target, pairs, K, grad)
    K = default_extent(N, n) if K is None else K
    T = target.lattice(K, n, N)
    mask = _dc_mask(K, n)
    results = [_periodogram_and_pullback(np.asarray(X, dtype=float), K) for X in batch]
    Pbar = sum(P for P, _ in results) / len(batch)
    diff = np.where(mask, Pbar - T, 0.0)
    count = mask.sum()
    value = float(np.sum(diff * diff) / count)
    if not grad:
        return value
    ct_P = 2.0 * diff / count / len(batch)
    return value, [pb(ct_P) for _, pb in results]


def projected_spectral_loss(batch, target: TargetSpectrum, dim_pairs, K: int | None = None, grad: bool = False):
    N, n = _batch_shape(batch)
    total = 0.0
    grads = [np.zeros((N, n)) for _ in batch]
    for pair in dim_pairs:
        pair = tuple(int(d) for d in pair)
        if len(pair) != 2 or pair[0] == pair[1]:
            raise UsageError(f"projection pair must name two distinct dimensions, got {pair}")
        if not all(0 <= d < n for d in pair):
            raise UsageError(f"projection pair {pair} out of range for {n}D points")
        sub = [np.asarray(X)[:, pair] for X in batch]
        if grad:
            v, gs = spectral_loss(sub, target, K, grad=True)
            for G, g in zip(grads, gs):
                G[:, pair] += g
        else:
            v = spectral_loss(sub, target, K)
        total += v
    return (total, grads) if grad else total


@dataclass(frozen=True)
class RadialProfile:
    edges: np.ndarray
    mean: np.ndarray
    anisotropy: np.ndarray
    count: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def defined(self) -> np.ndarray:
        return self.count > 0


def default_bins(K: int, n: int) -> int:
    return int(math.ceil(K * math.sqrt(n)))


def _bin_index(K, n, bins):
    r = lattice_norms(K, n)
    edges = np.linspace(0.0, K * math.sqrt(n), bins + 1)
    idx = np.clip(np.searchsorted(edges, r, side="left") - 1, 0, bins - 1)
    idx[(K,) * n] = -1  # DC
    return edges, idx


def radial_stats(spec: Spectrum, bins: int | None = None) -> RadialProfile:
    """Per-annulus mean power and normalized variance ``Var / Mean^2``.

    Bins split ``(0, K sqrt(n)]`` evenly so every non-DC lattice point is
    counted; annuli beyond ``K`` are only partially covered by the lattice.
    """
    n = spec.dim
    bins = default_bins(spec.K, n) if bins is None else bins
    if bins < 1:
        raise UsageError("need at least one radial bin")
    edges, idx = _bin_index(spec.K, n, bins)
    sel = idx >= 0
    b = idx[sel]
    p = spec.power[sel]
    count = np.bincount(b, minlength=bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.bincount(b, weights=p, minlength=bins) / count
        sq = np.bincount(b, weights=p * p, minlength=bins) / count
        var = np.maximum(sq - mean * mean, 0.0)
        aniso = var / np.maximum(mean, 1e-8) ** 2
    return RadialProfile(edges, mean, aniso, count)


def anisotropy_loss(batch, K: int | None = None, bins: int | None = None, grad: bool = False):
    """Mean normalized per-annulus variance of the batch-averaged periodogram."""
    N, n = _batch_shape(batch)
    if n < 2:
        raise UsageError("anisotropy needs at least two dimensions")
    if n > 2:
        total = 0.0
        grads = [np.zeros((N, n)) for _ in batch]
        for pair in itertools.combinations(range(n), 2):
            sub = [np.asarray(X)[:, pair] for X in batch]
            out = anisotropy_loss(sub, K, bins, grad)
            if grad:
                total += out[0]
                for G, g in zip(grads, out[1]):
                    G[:, pair] += g
            else:
                total += out
        return (total, grads) if grad else total
    K = default_extent(N, n) if K is None else K
    bins = default_bins(K, n) if bins is None else bins
    _, idx = _bin_index(K, n, bins)
    results = [_periodogram_and_pullback(np.asarray(X, dtype=float), K) for X in batch]
    Pbar = sum(P for P, _ in results) / len(batch)
    sel = idx >= 0
    b = idx[sel]
    p = Pbar[sel]
    count = np.bincount(b, minlength=bins).astype(float)
    live = count > 0
    c = np.where(live, count, 1.0)
    mean = np.bincount(b, weights=p, minlength=bins) / c
    var = np.bincount(b, weights=p * p, minlength=bins) / c - mean * mean
    clamped = mean < 1e-8
    mc = np.where(clamped, 1e-8, mean)
    a = np.where(live, var / mc ** 2, 0.0)
    nlive = live.sum()
    value = float(a.sum() / nlive)
    if not grad:
        return value
    # d a_b / d P_k for k in bin b
    ct_a = np.where(live, 1.0 / nlive, 0.0)
    ct_var = ct_a / mc ** 2
    ct_mean = -2.0 * mean * ct_var - np.where(clamped, 0.0, 2.0 * var * ct_a / mc ** 3)
    ct_p = (2.0 * p * ct_var[b] + ct_mean[b]) / c[b]
    ct_P = np.zeros_like(Pbar)
    ct_P[sel] = ct_p / len(batch)
    return value, [pb(ct_P) for _, pb in results]


# ---------------------------------------------------------------------------
# pair correlation

@dataclass(frozen=True)
class PcfHistogram:
    """Parzen-smoothed histogram of pairwise toroidal distances.

    ``density[b] * bin_width`` is the (fractional) number of unordered pairs
    whose Gaussian bump falls in bin ``b``.
    """

    density: np.ndarray
    r_max: float
    h: float

    @property
    def bins(self) -> int:
        return len(self.density)

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, self.r_max, self.bins + 1)

    @property
    def bin_width(self) -> float:
        return self.r_max / self.bins

    def settings(self):
        return self.bins, self.r_max, self.h

    def check_compatible(self, other: "PcfHistogram"):
        if self.bins != other.bins or not np.isclose(self.r_max, other.r_max, rtol=1e-12, atol=0) \
                or not np.isclose(self.h, other.h, rtol=1e-12, atol=0):
            raise UsageError(
                f"PCF estimator settings differ: bins/r_max/h {self.settings()} vs {other.settings()}")


def pcf_defaults(n: int, r_max: float | None = None, h: float | None = None):
    r_max = 0.25 * math.sqrt(n) if r_max is None else r_max
    h = r_max / 64.0 if h is None else h
    return r_max, h


_WINDOW_SIGMAS = 8.0


def _pcf_and_pullback(X, bins, r_max, h):
    N, n = X.shape
    iu, ju = np.triu_indices(N, k=1)
    diff = toroidal_diff(X[iu], X[ju])
    d = np.sqrt(np.sum(diff * diff, axis=1))
    keep = d <= r_max + 3.0 * h
    iu, ju, diff, d = iu[keep], ju[keep], diff[keep], d[keep]
    bw = r_max / bins
    W = int(math.ceil(2 * _WINDOW_SIGMAS * h / bw)) + 2
    first = np.floor((d - _WINDOW_SIGMAS * h) / bw).astype(np.int64)
    b = first[:, None] + np.arange(W)[None, :]
    lo = b * bw
    z_lo = (lo - d[:, None]) / h
    z_hi = z_lo + bw / h
    mass = ndtr(z_hi) - ndtr(z_lo)
    valid = (b >= 0) & (b < bins)
    density = np.bincount(b[valid], weights=mass[valid], minlength=bins) / bw

    def pullback(ct_density):
        ct_mass = np.where(valid, ct_density[np.clip(b, 0, bins - 1)], 0.0) / bw
        pdf = lambda z: np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        ct_d = np.sum(ct_mass * (pdf(z_lo) - pdf(z_hi)), axis=1) / h
        u = diff / np.maximum(d, 1e-300)[:, None]
        out = np.zeros((N, n))
        for c in range(n):
            out[:, c] = np.bincount(iu, weights=ct_d * u[:, c], minlength=N) \
                - np.bincount(ju, weights=ct_d * u[:, c], minlength=N)
        return out

    return density, pullback


def pcf_histogram(points, bins: int = 128, r_max: float | None = None, h: float | None = None) -> PcfHistogram:
    X = np.asarray(points, dtype=float)
    r_max, h = pcf_defaults(X.shape[1], r_max, h)
    if not 0 < r_max <= 0.5 * math.sqrt(X.shape[1]) or h <= 0 or bins < 1:
        raise UsageError("PCF needs 0 < r_max <= sqrt(n)/2, h > 0 and bins >= 1")
    density, _ = _pcf_and_pullback(X, bins, r_max, h)
    return PcfHistogram(density, r_max, h)


def differential_loss(batch, target: PcfHistogram, grad: bool = False, bins: int | None = None,
                      r_max: float | None = None, h: float | None = None):
    """Mean squared bin difference between the batch-averaged PCF and the target.

    Estimator settings default to the target's; explicit ones must match it.
    """
    _, n = _batch_shape(batch)
    if bins is not None or r_max is not None or h is not None:
        r_max, h = pcf_defaults(n, r_max, h)
        target.check_compatible(PcfHistogram(np.zeros(bins or 128), r_max, h))
    results = [_pcf_and_pullback(np.asarray(X, dtype=float), target.bins, target.r_max, target.h)
               for X in batch]
    Hbar = sum(H for H, _ in results) / len(batch)
    diff = Hbar - target.density
    value = float(np.mean(diff * diff))
    if not grad:
        return value
    ct = 2.0 * diff / target.bins / len(batch)
    return value, [pb(ct) for _, pb in results]


# ---------------------------------------------------------------------------
# generalized discrepancy

@dataclass(frozen=True)
class GaussianTask:
    """Toroidally wrapped Gaussian integrand; ``width = inf`` means the constant ``amplitude``."""

    center: np.ndarray
    width: float
    amplitude: float = 1.0

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def integral(self) -> float:
        if np.isinf(self.width):
            return self.amplitude
        return self.amplitude * (2.0 * math.pi * self.width ** 2) ** (self.dim / 2.0)

    def __call__(self, points) -> np.ndarray:
        return _task_values(np.atleast_2d(np.asarray(points, dtype=float)), [self])[0][:, 0]


def sample_gaussian_tasks(count: int, n: int, seed: int, s_range=(0.05, 0.25)) -> list[GaussianTask]:
    if count < 1:
        raise UsageError("need at least one Gaussian task")
    lo, hi = s_range
    if not 0 < lo <= hi:
        raise UsageError("width range must satisfy 0 < lo <= hi")
    rng = make_rng(seed)
    centers = rng.random((count, n))
    widths = np.exp(rng.uniform(math.log(lo), math.log(hi), count))
    return [GaussianTask(c, float(s)) for c, s in zip(centers, widths)]


def _images(n):
    return np.array(list(itertools.product((-1.0, 0.0, 1.0), repeat=n)))


def _task_values(X, tasks):
    """Integrand values ``(N, T)`` and their coordinate derivatives ``(N, T, n)``."""
    C = np.array([t.center for t in tasks], dtype=float)
    s = np.array([t.width for t in tasks], dtype=float)
    a = np.array([t.amplitude for t in tasks], dtype=float)
    const = np.isinf(s)
    s_safe = np.where(const, 1.0, s)
    diff = toroidal_diff(X[:, None, :], C[None, :, :])
    u = diff[:, :, None, :] + _images(X.shape[1])[None, None, :, :]
    e = a[None, :, None] * np.exp(-0.5 * np.sum(u * u, axis=-1) / s_safe[None, :, None] ** 2)
    g = e.sum(axis=2)
    dg = -np.sum(e[..., None] * u, axis=2) / s_safe[None, :, None] ** 2
    g[:, const] = a[const]
    dg[:, const] = 0.0
    return g, dg


def discrepancy_loss(batch, tasks, grad: bool = False):
    """Mean over batch and tasks of ``(integral - MC estimate)^2``."""
    if not tasks:
        raise UsageError("discrepancy needs at least one task")
    N, n = _batch_shape(batch)
    if any(t.dim != n for t in tasks):
        raise UsageError("task dimension does not match point dimension")
    F = np.array([t.integral for t in tasks])
    T = len(tasks)
    total = 0.0
    grads = []
    for X in batch:
        g, dg = _task_values(np.asarray(X, dtype=float), tasks)
        err = F - g.mean(axis=0)
        total += float(np.sum(err * err))
        if grad:
            ct_est = -2.0 * err / (T * len(batch))
            grads.append(np.einsum("t,jtd->jd", ct_est, dg) / N)
    value = total / (T * len(batch))
    return (value, grads) if grad else value


# ---------------------------------------------------------------------------
# image tasks

@dataclass(frozen=True)
class ImageTask:
    """Grayscale image integrand; row index follows the second coordinate."""

    image: np.ndarray
    mean: float = field(init=False)

    def __post_init__(self):
        img = np.asarray(self.image, dtype=float)
        if img.ndim != 2 or img.size == 0:
            raise UsageError("image task needs a 2D raster")
        if np.any(img < 0) or np.any(img > 1):
            raise UsageError("image values must lie in [0, 1]")
        object.__setattr__(self, "image", img)
        object.__setattr__(self, "mean", float(img.mean()))

    def fetch(self, points):
        return _bilinear(self.image, np.atleast_2d(np.asarray(points, dtype=float)))[0]


def _bilinear(img, X):
    H, W = img.shape
    u = X[:, 0] * W - 0.5
    v = X[:, 1] * H - 0.5
    u0 = np.floor(u)
    v0 = np.floor(v)
    fu = u - u0
    fv = v - v0
    i0 = u0.astype(np.int64) % W
    j0 = v0.astype(np.int64) % H
    i1 = (i0 + 1) % W
    j1 = (j0 + 1) % H
    a, b = img[j0, i0], img[j0, i1]
    c, d = img[j1, i0], img[j1, i1]
    val = (1 - fu) * (1 - fv) * a + fu * (1 - fv) * b + (1 - fu) * fv * c + fu * fv * d
    dx = W * ((1 - fv) * (b - a) + fv * (d - c))
    dy = H * ((1 - fu) * (c - a) + fu * (d - b))
    return val, np.stack([dx, dy], axis=1)


def task_integral_loss(batch, task: ImageTask, grad: bool = False):
    N, n = _batch_shape(batch)
    if n != 2:
        raise UsageError(f"image tasks need 2D points (use proj), got {n}D")
    total = 0.0
    grads = []
    for X in batch:
        val, dval = _bilinear(task.image, np.asarray(X, dtype=float))
        err = task.mean - val.mean()
        total += err * err
        if grad:
            grads.append((-2.0 * err / (N * len(batch))) * dval)
    value = float(total / len(batch))
    return (value, grads) if grad else value
