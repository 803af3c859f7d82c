import cmath
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from samplecraft import losses as L
from samplecraft.errors import UsageError
from samplecraft.samplers import halton_points, jittered_points, random_points
from samplecraft.torus import wrap


# ---------------------------------------------------------------------------
# naive oracles, written without the vectorized machinery

def naive_periodogram(X, K):
    N, n = X.shape
    out = {}
    for k in itertools.product(range(-K, K + 1), repeat=n):
        s = sum(cmath.exp(-2j * math.pi * sum(k[d] * x[d] for d in range(n))) for x in X)
        out[k] = abs(s) ** 2 / N
    return out


def naive_bn(r, N):
    c = 0.85 * math.sqrt(N) / math.sqrt(2 / math.sqrt(3))
    t = min(max((r - (c - 1)) / 2, 0.0), 1.0)
    return t * t * (3 - 2 * t)


def naive_tdist(a, b):
    s = 0.0
    for u, v in zip(a, b):
        d = (u - v) % 1.0
        d = min(d, 1.0 - d)
        s += d * d
    return math.sqrt(s)


# ---------------------------------------------------------------------------

def test_periodogram_examples():
    one = L.periodogram(np.array([[0.37, 0.81]]), 3).power
    assert np.allclose(one, 1.0, atol=1e-12)
    X = random_points(20, 2, 1).coords
    spec = L.periodogram(X, 5)
    assert spec.at((0, 0)) == pytest.approx(20, abs=1e-9)
    g = (np.stack(np.meshgrid(np.arange(4), np.arange(4), indexing="ij"), -1).reshape(-1, 2) + 0.5) / 4
    P = L.periodogram(g, 8)
    for k in itertools.product(range(-8, 9), repeat=2):
        want = 16.0 if k[0] % 4 == 0 and k[1] % 4 == 0 else 0.0
        assert P.at(k) == pytest.approx(want, abs=1e-9)


def test_periodogram_matches_direct_dft():
    X = random_points(7, 2, 3).coords
    P = L.periodogram(X, 3)
    for k, v in naive_periodogram(X, 3).items():
        assert P.at(k) == pytest.approx(v, abs=1e-12)


def test_periodogram_errors():
    with pytest.raises(UsageError):
        L.periodogram(np.zeros((0, 2)), 3)
    with pytest.raises(UsageError):
        L.periodogram(np.zeros((3, 2)), 0)


@given(st.integers(0, 10_000))
def test_periodogram_shift_invariance_and_symmetry(seed):
    rng = np.random.default_rng(seed)
    X = rng.random((12, 2))
    P = L.periodogram(X, 6).power
    Q = L.periodogram(wrap(X + rng.random(2)), 6).power
    assert np.allclose(P, Q, atol=1e-9, rtol=0)
    assert np.all(P >= 0)
    assert np.allclose(P, P[::-1, ::-1], atol=1e-12, rtol=0)


def test_periodogram_hermitian_exact_1d():
    P = L.periodogram(random_points(9, 1, 2).coords, 10).power
    assert np.array_equal(P, P[::-1])


def test_radial_stats_constant_and_axis():
    K = 6
    flat = L.Spectrum(np.full((13, 13), 2.5), K, 10)
    prof = L.radial_stats(flat, 8)
    live = prof.defined
    assert np.allclose(prof.mean[live], 2.5) and np.allclose(prof.anisotropy[live], 0.0)
    assert prof.count.sum() == 13 * 13 - 1
    P = np.zeros((13, 13))
    P[K + 1:, K] = 1.0
    P[:K, K] = 1.0
    prof = L.radial_stats(L.Spectrum(P, K, 10), 8)
    touched = prof.mean > 0
    for b in np.flatnonzero(touched):
        lo, hi = prof.edges[b], prof.edges[b + 1]
        vals = [P[i, j] for i in range(13) for j in range(13)
                if (i, j) != (K, K) and lo < math.hypot(i - K, j - K) <= hi or
                (b == 0 and (i, j) != (K, K) and math.hypot(i - K, j - K) == 0)]
        vals = np.array(vals)
        assert prof.anisotropy[b] == pytest.approx(vals.var() / vals.mean() ** 2)
        assert prof.anisotropy[b] >= 1.0


def test_radial_stats_empty_bins():
    prof = L.radial_stats(L.Spectrum(np.ones((3, 3)), 1, 4), 20)
    assert np.any(prof.count == 0)
    assert np.all(np.isnan(prof.mean[prof.count == 0]))
    assert not prof.defined[prof.count == 0].any()


def test_spectral_loss_self_target_and_duplication():
    X = random_points(16, 2, 5).coords
    K = 4
    P = L.periodogram(X, K).power
    full = np.zeros((9, 9)) + P
    assert L.spectral_loss([X], L.TargetSpectrum.full(full), K) == pytest.approx(0.0, abs=1e-24)
    bn = L.TargetSpectrum.builtin("bn")
    assert L.spectral_loss([X], bn, K) == L.spectral_loss([X, X, X, X], bn, K)


def test_spectral_loss_matches_naive_double_loop():
    batch = [random_points(9, 2, s).coords for s in (1, 2)]
    K = 3
    dfts = [naive_periodogram(X, K) for X in batch]
    total, count = 0.0, 0
    for k in dfts[0]:
        if k == (0, 0):
            continue
        mean = sum(d[k] for d in dfts) / 2
        total += (mean - naive_bn(math.hypot(*k), 9)) ** 2
        count += 1
    assert L.spectral_loss(batch, L.TargetSpectrum.builtin("bn"), K) == pytest.approx(total / count, rel=1e-12)
    assert total > 0


def test_target_spectrum_errors():
    radial = L.TargetSpectrum.radial([0.0, 3.0], [0.0, 1.0])
    with pytest.raises(UsageError):
        L.spectral_loss([random_points(9, 2, 1).coords], radial, 4)
    with pytest.raises(UsageError):
        L.TargetSpectrum.radial([0.0, 1.0], [-1.0, 1.0])
    with pytest.raises(UsageError):
        L.TargetSpectrum.builtin("purple")
    with pytest.raises(UsageError):
        L.spectral_loss([random_points(9, 2, 1).coords], L.TargetSpectrum.full(np.ones((5, 5))), 4)


def test_builtin_targets_shapes():
    for name in L.BUILTIN_TARGETS:
        T = L.TargetSpectrum.builtin(name).lattice(8, 2, 64)
        assert T.shape == (17, 17) and np.all(T >= 0)
    jit = L.TargetSpectrum.builtin("jitter").lattice(8, 2, 64)
    assert jit[8, 8] == 0.0 and jit[8 + 8, 8] == pytest.approx(1.0)


def test_projected_spectral_loss():
    batch = [random_points(9, 3, s).coords for s in (1, 2)]
    bn = L.TargetSpectrum.builtin("bn")
    sub = [X[:, :2] for X in batch]
    assert L.projected_spectral_loss(sub, bn, [(0, 1)], 3) == L.spectral_loss(sub, bn, 3)
    pairs = [(0, 1), (0, 2), (1, 2)]
    parts = [L.spectral_loss([X[:, list(p)] for X in batch], bn, 3) for p in pairs]
    assert L.projected_spectral_loss(batch, bn, pairs, 3) == pytest.approx(sum(parts), rel=1e-14)
    assert L.projected_spectral_loss(batch, bn, pairs[::-1], 3) == pytest.approx(sum(parts), rel=1e-14)
    with pytest.raises(UsageError):
        L.projected_spectral_loss(batch, bn, [(1, 1)], 3)


def test_anisotropy_loss():
    X = random_points(16, 2, 3).coords
    assert L.anisotropy_loss([X], 4) > 0
    with pytest.raises(UsageError):
        L.anisotropy_loss([random_points(5, 1, 0).coords])
    # batch-averaged spectrum statistics computed directly
    batch = [random_points(10, 2, s).coords for s in (4, 5)]
    K, bins = 4, 6
    Pbar = (L.periodogram(batch[0], K).power + L.periodogram(batch[1], K).power) / 2
    prof = L.radial_stats(L.Spectrum(Pbar, K, 10), bins)
    live = prof.count > 0
    want = np.mean(prof.anisotropy[live])
    assert L.anisotropy_loss(batch, K, bins) == pytest.approx(want, rel=1e-10)


def test_pcf_two_points():
    X = np.array([[0.1, 0.1], [0.4, 0.1]])
    h = L.pcf_histogram(X, 128, 0.5, 0.01)
    edges = np.linspace(0, 0.5, 129)
    cdf = lambda z: 0.5 * (1 + math.erf(z / math.sqrt(2)))
    want = [(cdf((edges[b + 1] - 0.3) / 0.01) - cdf((edges[b] - 0.3) / 0.01)) / (0.5 / 128) for b in range(128)]
    assert np.allclose(h.density, want, atol=1e-9)
    assert np.sum(h.density * h.bin_width) == pytest.approx(1.0, abs=1e-6)
    assert np.all(L.pcf_histogram(np.array([[0.2, 0.3]])).density == 0)


def test_pcf_mass_conservation():
    X = random_points(40, 2, 2).coords
    r_max, h = 0.45, 0.002
    hist = L.pcf_histogram(X, 128, r_max, h)
    d = np.array([naive_tdist(X[i], X[j]) for i in range(40) for j in range(i + 1, 40)])
    inside = np.sum((d > 6 * h) & (d < r_max - 6 * h))
    edge = np.sum((d <= 6 * h) | ((d >= r_max - 6 * h) & (d <= r_max + 3 * h)))
    total = np.sum(hist.density * hist.bin_width)
    assert inside - 1e-6 <= total <= inside + edge + 1e-6
    assert np.all(hist.density >= 0)


def test_differential_loss_naive():
    batch = [random_points(12, 2, s).coords for s in (1, 2)]
    target = L.pcf_histogram(random_points(12, 2, 9).coords)
    assert L.differential_loss([batch[0]], L.pcf_histogram(batch[0])) == 0.0
    bins, r_max, h = target.settings()
    bw = r_max / bins
    cdf = lambda z: 0.5 * (1 + math.erf(z / math.sqrt(2)))
    mean = np.zeros(bins)
    for X in batch:
        for i in range(12):
            for j in range(i + 1, 12):
                d = naive_tdist(X[i], X[j])
                if d > r_max + 3 * h:
                    continue
                for b in range(bins):
                    mean[b] += (cdf((bw * (b + 1) - d) / h) - cdf((bw * b - d) / h)) / bw / 2
    want = np.mean((mean - target.density) ** 2)
    assert L.differential_loss(batch, target) == pytest.approx(want, rel=1e-9)
    jit = L.pcf_histogram(jittered_points(16, 2, 1).coords)
    assert L.differential_loss([random_points(16, 2, 3).coords], jit) > 0
    with pytest.raises(UsageError):
        L.differential_loss(batch, target, bins=64)
    with pytest.raises(UsageError):
        L.differential_loss(batch, target, h=0.01)
    assert L.differential_loss(batch, target, bins=128) == L.differential_loss(batch, target)


def test_gaussian_tasks():
    tasks = L.sample_gaussian_tasks(50, 3, 4)
    again = L.sample_gaussian_tasks(50, 3, 4)
    assert all(np.array_equal(a.center, b.center) and a.width == b.width for a, b in zip(tasks, again))
    for t in tasks:
        assert 0.05 <= t.width <= 0.25 and t.amplitude == 1.0
        assert t.integral == pytest.approx((2 * math.pi * t.width ** 2) ** 1.5, rel=1e-15)
    with pytest.raises(UsageError):
        L.sample_gaussian_tasks(0, 2, 0)


def test_wrapped_gaussian_integral_numerically():
    t = L.GaussianTask(np.array([0.05, 0.9]), 0.2)
    g = (np.arange(400) + 0.5) / 400
    pts = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    assert t(pts).mean() == pytest.approx(t.integral, rel=1e-3)


def test_discrepancy_examples():
    const = L.GaussianTask(np.array([0.5, 0.5]), math.inf, 0.7)
    assert L.discrepancy_loss([random_points(10, 2, 1).coords], [const]) == 0.0
    x = np.array([0.2, 0.7])
    task = L.GaussianTask(np.array([0.9, 0.1]), 0.1)
    g = 0.0
    for zx in (-1, 0, 1):
        for zy in (-1, 0, 1):
            dx = ((x[0] - 0.9 + 0.5) % 1 - 0.5) + zx
            dy = ((x[1] - 0.1 + 0.5) % 1 - 0.5) + zy
            g += math.exp(-(dx * dx + dy * dy) / (2 * 0.01))
    F = 2 * math.pi * 0.01
    assert L.discrepancy_loss([x[None, :]], [task]) == pytest.approx((F - g) ** 2, rel=1e-12)


def test_halton_beats_random_on_discrepancy():
    tasks_per_seed = [L.sample_gaussian_tasks(64, 2, s) for s in range(20)]
    halton = halton_points(256, 2).coords
    h = np.mean([L.discrepancy_loss([halton], t) for t in tasks_per_seed])
    r = np.mean([L.discrepancy_loss([random_points(256, 2, 100 + s).coords], t)
                 for s, t in enumerate(tasks_per_seed)])
    assert h < r


def test_task_integral_examples():
    X = random_points(20, 2, 1).coords
    assert L.task_integral_loss([X], L.ImageTask(np.full((4, 5), 0.3))) == pytest.approx(0.0, abs=1e-30)
    checker = L.ImageTask(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert L.task_integral_loss([np.array([[0.25, 0.25]])], checker) == 0.25
    ramp = L.ImageTask(np.tile(np.linspace(0.0, 1.0, 8), (8, 1)))
    sym = np.array([[0.25, 0.5], [0.75, 0.5]])
    assert L.task_integral_loss([sym], ramp) == pytest.approx(0.0, abs=1e-30)
    with pytest.raises(UsageError):
        L.task_integral_loss([random_points(4, 3, 0).coords], checker)
    with pytest.raises(UsageError):
        L.ImageTask(np.array([[2.0]]))


def test_image_mean_exact():
    img = np.random.default_rng(0).random((7, 9))
    assert L.ImageTask(img).mean == img.mean()


def test_losses_nonnegative():
    rng = np.random.default_rng(1)
    batch = [rng.random((16, 2)) for _ in range(3)]
    vals = [
        L.spectral_loss(batch, L.TargetSpectrum.builtin("green")),
        L.anisotropy_loss(batch),
        L.differential_loss(batch, L.pcf_histogram(rng.random((16, 2)))),
        L.discrepancy_loss(batch, L.sample_gaussian_tasks(5, 2, 1)),
        L.task_integral_loss(batch, L.ImageTask(rng.random((3, 3)))),
    ]
    assert all(v >= 0 for v in vals)


def fd_grad(fn, batch, h=1e-6):
    out = []
    for b in range(len(batch)):
        G = np.zeros_like(batch[b])
        for idx in np.ndindex(batch[b].shape):
            p = [x.copy() for x in batch]
            p[b][idx] += h
            up = fn(p)
            p[b][idx] -= 2 * h
            G[idx] = (up - fn(p)) / (2 * h)
        out.append(G)
    return out


@pytest.mark.parametrize("kind", ["spec", "spec3d", "aniso", "pcf", "disc", "task"])
def test_loss_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(4)
    n = 3 if kind == "spec3d" else 2
    batch = [rng.random((12, n)) for _ in range(2)]
    fns = {
        "spec": lambda b, g=False: L.spectral_loss(b, L.TargetSpectrum.builtin("bn"), 5, g),
        "spec3d": lambda b, g=False: L.spectral_loss(b, L.TargetSpectrum.builtin("bn"), 4, g),
        "aniso": lambda b, g=False: L.anisotropy_loss(b, 5, None, g),
        "pcf": None,
        "disc": lambda b, g=False: L.discrepancy_loss(b, L.sample_gaussian_tasks(6, 2, 3), g),
        "task": lambda b, g=False: L.task_integral_loss(b, L.ImageTask(np.linspace(0, 1, 30).reshape(5, 6)), g),
    }
    fn = fns[kind]
    if kind == "pcf":
        target = L.pcf_histogram(random_points(12, 2, 77).coords)
        fn = lambda b, g=False: L.differential_loss(b, target, g)
    _, analytic = fn(batch, True)
    numeric = fd_grad(fn, batch)
    for a, f in zip(analytic, numeric):
        assert np.max(np.abs(a - f) / np.maximum(np.abs(a), 1e-6)) < 1e-4
