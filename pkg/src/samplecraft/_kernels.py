"""Compiled inner loops for pair search and the filter iteration.

Neighbors of each point are emitted in an order fixed by coordinates, so
accumulation order depends only on geometry, never on point labels. That keeps
the filter exactly equivariant under permutation of its input.

Inputs are assumed to lie in [0, 1); offsets then need at most one wrap, which
matches ``torus.toroidal_diff`` bit for bit. The 2D paths are hand-specialized
because they dominate training time.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def pairs_dense(X, r, order):
    """Candidates ``j`` are visited in the given (geometric) ``order``."""
    N, n = X.shape
    r2 = r * r
    cap = N * (N - 1) if N > 1 else 1
    I = np.empty(cap, np.int64)
    J = np.empty(cap, np.int64)
    D = np.empty((cap, n))
    tmp = np.empty(n)
    p = 0
    for i in range(N):
        for a in range(N):
            j = order[a]
            if j == i:
                continue
            q = 0.0
            for c in range(n):
                t = X[i, c] - X[j, c]
                if t >= 0.5:
                    t -= 1.0
                elif t < -0.5:
                    t += 1.0
                tmp[c] = t
                q += t * t
            if q <= r2:
                I[p] = i
                J[p] = j
                for c in range(n):
                    D[p, c] = tmp[c]
                p += 1
    return I[:p].copy(), J[:p].copy(), D[:p].copy()


@numba.njit(cache=True)
def pairs_grid(X, r, cell_coords, cells, order, starts, offsets):
    """``order`` lists points by cell, each cell sorted geometrically."""
    N, n = X.shape
    r2 = r * r
    counts = starts[1:] - starts[:-1]
    nbr = np.empty(offsets.shape[0], np.int64)
    cap = 0
    for i in range(N):
        for o in range(offsets.shape[0]):
            flat = 0
            for c in range(n):
                flat = flat * cells + (cell_coords[i, c] + offsets[o, c]) % cells
            cap += counts[flat]
    cap = max(cap, 1)
    I = np.empty(cap, np.int64)
    J = np.empty(cap, np.int64)
    D = np.empty((cap, n))
    tmp = np.empty(n)
    p = 0
    for i in range(N):
        for o in range(offsets.shape[0]):
            flat = 0
            for c in range(n):
                flat = flat * cells + (cell_coords[i, c] + offsets[o, c]) % cells
            nbr[o] = flat
        for o in range(offsets.shape[0]):
            for a in range(starts[nbr[o]], starts[nbr[o] + 1]):
                j = order[a]
                if j == i:
                    continue
                q = 0.0
                for c in range(n):
                    t = X[i, c] - X[j, c]
                    if t >= 0.5:
                        t -= 1.0
                    elif t < -0.5:
                        t += 1.0
                    tmp[c] = t
                    q += t * t
                if q <= r2:
                    I[p] = i
                    J[p] = j
                    for c in range(n):
                        D[p, c] = tmp[c]
                    p += 1
    return I[:p].copy(), J[:p].copy(), D[:p].copy()


@numba.njit(cache=True)
def _exponents_2d(D, mu, scale):
    P = D.shape[0]
    m = mu.shape[0]
    E = np.empty((P, m))
    mx = mu[:, 0].copy()
    my = mu[:, 1].copy()
    for p in range(P):
        dx = D[p, 0]
        dy = D[p, 1]
        for k in range(m):
            ux = dx - mx[k]
            uy = dy - my[k]
            E[p, k] = -(ux * ux + uy * uy) * scale
    return E


@numba.njit(cache=True)
def _exponents_nd(D, mu, scale):
    P, n = D.shape
    m = mu.shape[0]
    E = np.empty((P, m))
    for p in range(P):
        for k in range(m):
            q = 0.0
            for c in range(n):
                u = D[p, c] - mu[k, c]
                q += u * u
            E[p, k] = -q * scale
    return E


def kernel_values(D, mu, sigma):
    """Matrix of Gaussian RBF responses, one row per pair offset."""
    scale = 0.5 / (sigma * sigma)
    mu = np.ascontiguousarray(mu)
    E = _exponents_2d(D, mu, scale) if D.shape[1] == 2 else _exponents_nd(D, mu, scale)
    return np.exp(E, out=E)


@numba.njit(cache=True)
def accumulate(I, D, phi, w, N):
    P, n = D.shape
    m = phi.shape[1]
    g = np.empty(P)
    A = np.zeros((N, n))
    B = np.ones(N)
    for p in range(P):
        s = 0.0
        for k in range(m):
            s += w[k] * phi[p, k]
        g[p] = s
        i = I[p]
        B[i] += s
        for c in range(n):
            A[i, c] -= s * D[p, c]
    return g, A, B


@numba.njit(cache=True)
def accumulate_into(I, D, phi, w, A, B):
    P, n = D.shape
    m = phi.shape[1]
    for p in range(P):
        s = 0.0
        for k in range(m):
            s += w[k] * phi[p, k]
        i = I[p]
        B[i] += s
        for c in range(n):
            A[i, c] -= s * D[p, c]


@numba.njit(cache=True)
def _seed_cotangents(A, B, free, ct_out, eps):
    N, n = ct_out.shape
    ct_A = np.zeros((N, n))
    ct_B = np.zeros(N)
    for i in range(N):
        den = max(abs(B[i]), eps)
        ct_den = 0.0
        for c in range(n):
            if free[c]:
                ct_A[i, c] = ct_out[i, c] / den
                ct_den -= ct_out[i, c] * A[i, c] / (den * den)
        # the clamp has zero derivative where it is active
        if abs(B[i]) >= eps:
            ct_B[i] = ct_den if B[i] > 0 else -ct_den
    return ct_A, ct_B


@numba.njit(cache=True)
def _backward_2d(I, J, D, phi, g, w, mu, inv_s2, ct_A, ct_B, ct_X):
    P = D.shape[0]
    m = mu.shape[0]
    mx = mu[:, 0].copy()
    my = mu[:, 1].copy()
    ct_w = np.zeros(m)
    for p in range(P):
        i = I[p]
        j = J[p]
        dx = D[p, 0]
        dy = D[p, 1]
        ax = ct_A[i, 0]
        ay = ct_A[i, 1]
        cg = ct_B[i] - ax * dx - ay * dy
        ts = 0.0
        tx = 0.0
        ty = 0.0
        for k in range(m):
            pk = phi[p, k] * cg
            ct_w[k] += pk
            t = pk * w[k]
            ts += t
            tx += t * mx[k]
            ty += t * my[k]
        gp = g[p]
        cx = -gp * ax - (ts * dx - tx) * inv_s2
        cy = -gp * ay - (ts * dy - ty) * inv_s2
        ct_X[i, 0] += cx
        ct_X[i, 1] += cy
        ct_X[j, 0] -= cx
        ct_X[j, 1] -= cy
    return ct_w


@numba.njit(cache=True)
def _backward_nd(I, J, D, phi, g, w, mu, inv_s2, ct_A, ct_B, ct_X):
    P, n = D.shape
    m = mu.shape[0]
    ct_w = np.zeros(m)
    tmu = np.empty(n)
    for p in range(P):
        i = I[p]
        j = J[p]
        cg = ct_B[i]
        for c in range(n):
            cg -= ct_A[i, c] * D[p, c]
            tmu[c] = 0.0
        ts = 0.0
        for k in range(m):
            pk = phi[p, k] * cg
            ct_w[k] += pk
            t = pk * w[k]
            ts += t
            for c in range(n):
                tmu[c] += t * mu[k, c]
        for c in range(n):
            cd = -g[p] * ct_A[i, c] - (ts * D[p, c] - tmu[c]) * inv_s2
            ct_X[i, c] += cd
            ct_X[j, c] -= cd
    return ct_w


def iteration_backward(I, J, D, phi, g, A, B, w, mu, sigma, free, ct_out, eps):
    ct_A, ct_B = _seed_cotangents(A, B, free, ct_out, eps)
    ct_X = ct_out.copy()
    mu = np.ascontiguousarray(mu)
    kernel = _backward_2d if D.shape[1] == 2 else _backward_nd
    ct_w = kernel(I, J, D, phi, g, w, mu, 1.0 / (sigma * sigma), ct_A, ct_B, ct_X)
    return ct_X, ct_w
