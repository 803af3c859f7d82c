"""Build spectral and PCF targets by measuring reference samplers or point files."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import losses as L
from .analysis import PointSource, averaged_periodogram, realizations
from .errors import UsageError
from .io import load_target, read_points_csv


def measure_target_spectrum(sampler: str, N: int, trials: int = 64, K: int | None = None,
                            seed: int = 0, n: int = 2, bins: int | None = None) -> L.TargetSpectrum:
    """Radially averaged periodogram of ``sampler`` stored as a radial table.

    Rows sit at bin centers, padded with the end values at radius 0 and at
    ``K sqrt(n)`` so the table covers every lattice frequency.
    """
    K = L.default_extent(N, n) if K is None else K
    spec = averaged_periodogram(PointSource(sampler), trials, N, n, K, seed)
    prof = L.radial_stats(spec, bins)
    live = prof.defined
    r = prof.centers[live]
    p = prof.mean[live]
    r_end = K * math.sqrt(n)
    radius = np.concatenate([[0.0], r, [r_end]])
    power = np.concatenate([[p[0]], p, [p[-1]]])
    return L.TargetSpectrum.radial(radius, power)


def mean_pcf(sets, bins: int = 128, r_max: float | None = None, h: float | None = None) -> L.PcfHistogram:
    sets = list(sets)
    if not sets:
        raise UsageError("need at least one point set")
    hists = [L.pcf_histogram(X, bins, r_max, h) for X in sets]
    total = hists[0].density.copy()
    for hist in hists[1:]:
        total += hist.density
    return L.PcfHistogram(total / len(hists), hists[0].r_max, hists[0].h)


def measure_target_pcf(source, N: int = 256, trials: int = 64, bins: int = 128, r_max: float | None = None,
                       h: float | None = None, seed: int = 0, n: int = 2) -> L.PcfHistogram:
    """Batch-averaged PCF of a sampler (by name) or of point-set CSV files (a path or list of paths)."""
    if isinstance(source, str) and not source.endswith(".csv"):
        sets = realizations(PointSource(source), trials, N, n, seed)
    else:
        paths = [source] if isinstance(source, str) else list(source)
        sets = [read_points_csv(p) for p in paths]
    return mean_pcf(sets, bins, r_max, h)


@dataclass(frozen=True)
class TargetRecipe:
    """How a target was (or will be) produced; ``params`` hold seeds and trial counts."""

    kind: str  # "spectrum", "pcf", "builtin" or "file"
    params: dict = field(default_factory=dict)

    def build(self):
        p = dict(self.params)
        if self.kind == "spectrum":
            return measure_target_spectrum(**p)
        if self.kind == "pcf":
            return measure_target_pcf(**p)
        if self.kind == "builtin":
            return L.TargetSpectrum.builtin(p["name"])
        if self.kind == "file":
            return load_target(p["path"])
        raise UsageError(f"unknown target recipe kind {self.kind!r}")
