"""Measurements over many realizations: spectra, radial profiles, PCFs and discrepancy scores."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import losses as L
from .errors import UsageError
from .filters import FilterStack, apply_stack
from .io import write_pgm
from .parallel import pmap
from .samplers import make_rng, sample


@dataclass(frozen=True)
class PointSource:
    """A sampler, optionally followed by a trained filter stack."""

    sampler: str = "random"
    stack: FilterStack | None = None

    def realize(self, N: int, n: int, seed: int) -> np.ndarray:
        X = sample(self.sampler, N, n, seed).coords
        return X if self.stack is None else apply_stack(X, self.stack)


def realizations(source: PointSource, trials: int, N: int, n: int, seed: int = 0) -> list[np.ndarray]:
    if trials < 1:
        raise UsageError("trials must be >= 1")
    return pmap(lambda t: source.realize(N, n, seed + t), range(trials))


def mean_periodogram(sets, K: int) -> L.Spectrum:
    sets = list(sets)
    total = None
    for X in sets:  # fixed order keeps the sum reproducible
        P = L.periodogram(X, K).power
        total = P if total is None else total + P
    return L.Spectrum(total / len(sets), K, len(sets[0]))


def averaged_periodogram(source: PointSource, trials: int, N: int, n: int, K: int | None = None,
                         seed: int = 0) -> L.Spectrum:
    """Mean periodogram over realizations seeded ``seed, seed + 1, ...``."""
    K = L.default_extent(N, n) if K is None else K
    return mean_periodogram(realizations(source, trials, N, n, seed), K)


def band_power(spec: L.Spectrum, lo: float, hi: float) -> float:
    """Mean power over non-DC lattice frequencies with ``lo <= |k| <= hi``."""
    r = spec.norms()
    sel = (r >= lo) & (r <= hi) & (r > 0)
    if not sel.any():
        raise UsageError(f"no lattice frequencies in [{lo}, {hi}]")
    return float(spec.power[sel].mean())


def low_band_ratio(spec: L.Spectrum) -> float:
    """Power at ``|k| <= sqrt(N)/4`` relative to power over ``[sqrt(N), 2 sqrt(N)]``."""
    s = math.sqrt(spec.count)
    return band_power(spec, 0.0, 0.25 * s) / band_power(spec, s, 2.0 * s)


def discrepancy_score(sets, n: int, tasks: int = 64, seed: int = 0, s_range=(0.05, 0.25)) -> float:
    """Mean squared integration error over held-out Gaussian integrands."""
    held_out = L.sample_gaussian_tasks(tasks, n, seed, s_range)
    return float(L.discrepancy_loss(list(sets), held_out))


def star_discrepancy_estimate(points, probes: int = 1024, seed: int = 0) -> float:
    """Lower bound on the star discrepancy from sampled anchored boxes ``[0, b)``.

    Box corners combine point coordinates per axis plus uniform random probes;
    both open and closed boxes are counted.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    if probes < 1:
        raise UsageError("probes must be >= 1")
    N, n = X.shape
    rng = make_rng(seed)
    picks = rng.integers(0, N, size=(probes, n))
    corners = np.concatenate([
        X[picks, np.arange(n)],
        rng.random((probes, n)),
        X,
        np.ones((1, n)),
    ])
    best = 0.0
    for chunk in np.array_split(corners, max(1, len(corners) // 256)):
        vol = np.prod(chunk, axis=1)
        less = np.all(X[None, :, :] < chunk[:, None, :], axis=2).mean(axis=1)
        less_eq = np.all(X[None, :, :] <= chunk[:, None, :], axis=2).mean(axis=1)
        best = max(best, float(np.max(vol - less)), float(np.max(less_eq - vol)))
    return min(best, 1.0)


def spectrum_pixels(spec: L.Spectrum) -> np.ndarray:
    if spec.dim != 2:
        raise UsageError("spectrum images need a 2D spectrum")
    pix = np.round(np.minimum(spec.power, 2.0) * 127.5).astype(np.int64)
    pix[spec.K, spec.K] = 0
    return pix


def export_spectrum_image(spec: L.Spectrum, path):
    """8-bit PGM with 1.0 at mid-gray; row index is the first frequency axis."""
    write_pgm(Path(path), spectrum_pixels(spec), 255)


@dataclass(frozen=True)
class AnalysisReport:
    spectrum: L.Spectrum
    radial: L.RadialProfile
    pcf: L.PcfHistogram
    discrepancy: float
    star_discrepancy: float
    realizations: int


def analyze(sets, K: int | None = None, bins: int | None = None, seed: int = 0,
            probes: int = 1024) -> AnalysisReport:
    sets = list(sets)
    if not sets:
        raise UsageError("need at least one realization")
    N, n = sets[0].shape
    K = L.default_extent(N, n) if K is None else K
    spec = mean_periodogram(sets, K)
    radial = L.radial_stats(spec, bins)
    hists = [L.pcf_histogram(X) for X in sets]
    pcf = L.PcfHistogram(sum(h.density for h in hists) / len(hists), hists[0].r_max, hists[0].h)
    disc = discrepancy_score(sets, n, seed=seed)
    star = float(np.mean([star_discrepancy_estimate(X, probes, seed + i) for i, X in enumerate(sets)]))
    return AnalysisReport(spec, radial, pcf, disc, star, len(sets))
