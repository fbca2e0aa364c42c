"""Optional compiled kernels for the two sequential hot loops.

The recurrence inside the selective scan and the per-parameter optimizer
update cannot be vectorized away in numpy. When numba is importable they
run as jitted loops; otherwise the numpy fallbacks below keep everything
working (slower, same semantics). Nothing here changes the math.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(fn):
            return fn
        return deco


@njit(cache=True)
def _scan_fwd_jit(abar, du, b, c, y):
    n_seq, m, d, s = abar.shape
    h = np.empty((d, s))
    for bb in range(n_seq):
        h[:] = 0.0
        for t in range(m):
            for i in range(d):
                acc = 0.0
                dui = du[bb, t, i]
                for j in range(s):
                    hij = abar[bb, t, i, j] * h[i, j] + dui * b[bb, t, j]
                    h[i, j] = hij
                    acc += hij * c[bb, t, j]
                y[bb, t, i] = acc


@njit(cache=True)
def _scan_bwd_jit(abar, u, dd, a, b, c, g, gu, gdelta, ga, gb, gc):
    n_seq, m, d, s = abar.shape
    states = np.empty((m, d, s))
    gh = np.empty((d, s))
    gbj = np.empty(s)
    gcj = np.empty(s)
    for bb in range(n_seq):
        for t in range(m):
            for i in range(d):
                dui = dd[bb, t, i] * u[bb, t, i]
                for j in range(s):
                    prev = states[t - 1, i, j] if t > 0 else 0.0
                    states[t, i, j] = abar[bb, t, i, j] * prev + dui * b[bb, t, j]
        gh[:] = 0.0
        for t in range(m - 1, -1, -1):
            gbj[:] = 0.0
            gcj[:] = 0.0
            for i in range(d):
                gi = g[bb, t, i]
                dui = dd[bb, t, i] * u[bb, t, i]
                gdu = 0.0
                gdelta_acc = 0.0
                for j in range(s):
                    ghij = gh[i, j] + gi * c[bb, t, j]
                    prev = states[t - 1, i, j] if t > 0 else 0.0
                    gab = ghij * prev * abar[bb, t, i, j]
                    ga[i, j] += gab * dd[bb, t, i]
                    gdelta_acc += gab * a[i, j]
                    gdu += ghij * b[bb, t, j]
                    gbj[j] += ghij * dui
                    gcj[j] += gi * states[t, i, j]
                    gh[i, j] = ghij * abar[bb, t, i, j]
                gu[bb, t, i] = gdu * dd[bb, t, i]
                gdelta[bb, t, i] = gdelta_acc + gdu * u[bb, t, i]
            for j in range(s):
                gb[bb, t, j] = gbj[j]
                gc[bb, t, j] = gcj[j]


def scan_forward(abar, du, b, c) -> np.ndarray:
    """y[t] = <c_t, h_t> with h_t = abar_t * h_{t-1} + du_t x b_t, per sequence."""
    n_seq, m, d, s = abar.shape
    y = np.empty((n_seq, m, d))
    if HAVE_NUMBA:
        _scan_fwd_jit(abar, du, b, c, y)
        return y
    bu = du[:, :, :, None] * b[:, :, None, :]
    h = np.zeros((n_seq, d, s))
    for t in range(m):
        np.multiply(abar[:, t], h, out=h)
        h += bu[:, t]
        y[:, t] = np.einsum("bds,bs->bd", h, c[:, t])
    return y


def scan_backward(abar, u, dd, a, b, c, g):
    """Adjoint of scan_forward; replays the states, then runs right-to-left."""
    n_seq, m, d, s = abar.shape
    gu = np.empty_like(u)
    gdelta = np.empty_like(dd)
    ga = np.zeros_like(a)
    gb = np.empty_like(b)
    gc = np.empty_like(c)
    if HAVE_NUMBA:
        _scan_bwd_jit(abar, u, dd, a, b, c, g, gu, gdelta, ga, gb, gc)
        return gu, gdelta, ga, gb, gc
    bu = (dd * u)[:, :, :, None] * b[:, :, None, :]
    states = np.empty_like(abar)
    h = np.zeros((n_seq, d, s))
    for t in range(m):
        np.multiply(abar[:, t], h, out=h)
        h += bu[:, t]
        states[:, t] = h
    gh = np.zeros((n_seq, d, s))
    zero = np.zeros((n_seq, d, s))
    for t in range(m - 1, -1, -1):
        h_prev = states[:, t - 1] if t > 0 else zero
        gh += g[:, t, :, None] * c[:, t, None, :]
        gc[:, t] = np.einsum("bd,bds->bs", g[:, t], states[:, t])
        gab = gh * h_prev * abar[:, t]
        ga += np.einsum("bds,bd->ds", gab, dd[:, t])
        gdu = np.einsum("bds,bs->bd", gh, b[:, t])
        gdelta[:, t] = np.einsum("bds,ds->bd", gab, a) + gdu * u[:, t]
        gu[:, t] = gdu * dd[:, t]
        gb[:, t] = np.einsum("bds,bd->bs", gh, dd[:, t] * u[:, t])
        gh *= abar[:, t]
    return gu, gdelta, ga, gb, gc


@njit(cache=True)
def _fps_jit(pts, chosen, d2):
    n = pts.shape[0]
    m = chosen.shape[0]
    last = chosen[0]
    for i in range(n):
        dx = pts[i, 0] - pts[last, 0]
        dy = pts[i, 1] - pts[last, 1]
        dz = pts[i, 2] - pts[last, 2]
        d2[i] = dx * dx + dy * dy + dz * dz
    for pick in range(1, m):
        best = 0
        best_d = d2[0]
        for i in range(1, n):
            if d2[i] > best_d:
                best_d = d2[i]
                best = i
        chosen[pick] = best
        for i in range(n):
            dx = pts[i, 0] - pts[best, 0]
            dy = pts[i, 1] - pts[best, 1]
            dz = pts[i, 2] - pts[best, 2]
            nd = dx * dx + dy * dy + dz * dz
            if nd < d2[i]:
                d2[i] = nd
    return chosen


def fps_greedy(pts: np.ndarray, m: int, first: int) -> np.ndarray:
    """Greedy max-min selection; first-index tie break, like the numpy path."""
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = first
    if HAVE_NUMBA:
        _fps_jit(pts, chosen, np.empty(pts.shape[0]))
        return chosen
    d2 = np.sum((pts - pts[first]) ** 2, axis=1)
    for i in range(1, m):
        nxt = int(np.argmax(d2))  # argmax takes the first max, i.e. lowest index
        chosen[i] = nxt
        d2 = np.minimum(d2, np.sum((pts - pts[nxt]) ** 2, axis=1))
    return chosen


@njit(cache=True)
def _nn_both_jit(a, b, d_ab, i_ab, d_ba, i_ba):
    n, mm = a.shape[0], b.shape[0]
    for j in range(mm):
        d_ba[j] = np.inf
        i_ba[j] = 0
    for i in range(n):
        best = np.inf
        besti = 0
        for j in range(mm):
            dx = a[i, 0] - b[j, 0]
            dy = a[i, 1] - b[j, 1]
            dz = a[i, 2] - b[j, 2]
            d = dx * dx + dy * dy + dz * dz
            if d < best:
                best = d
                besti = j
            if d < d_ba[j]:
                d_ba[j] = d
                i_ba[j] = i
        d_ab[i] = best
        i_ab[i] = besti


def nearest_both(a: np.ndarray, b: np.ndarray):
    """Nearest-neighbor distances and indices in both directions.

    Returns (dist_a_to_b, idx_a_to_b, dist_b_to_a, idx_b_to_a) with plain
    Euclidean distances; first-index tie break in both directions.
    """
    n, mm = a.shape[0], b.shape[0]
    d_ab = np.empty(n)
    i_ab = np.empty(n, dtype=np.int64)
    d_ba = np.empty(mm)
    i_ba = np.empty(mm, dtype=np.int64)
    if HAVE_NUMBA:
        _nn_both_jit(a, b, d_ab, i_ab, d_ba, i_ba)
        return np.sqrt(d_ab), i_ab, np.sqrt(d_ba), i_ba
    diff = a[:, None, :] - b[None, :, :]
    d2 = np.sum(diff * diff, axis=2)
    i_ab = np.argmin(d2, axis=1)
    i_ba = np.argmin(d2, axis=0)
    d_ab = np.sqrt(d2[np.arange(n), i_ab])
    d_ba = np.sqrt(d2[i_ba, np.arange(mm)])
    return d_ab, i_ab, d_ba, i_ba


@njit(cache=True)
def _adam_jit(p, g, m1, m2, beta1, beta2, lr_over_c1, inv_sqrt_c2, eps):
    for i in range(p.size):
        m1[i] = beta1 * m1[i] + (1.0 - beta1) * g[i]
        m2[i] = beta2 * m2[i] + (1.0 - beta2) * g[i] * g[i]
        p[i] -= lr_over_c1 * m1[i] / (math.sqrt(m2[i]) * inv_sqrt_c2 + eps)


def adam_update(p, g, m1, m2, beta1, beta2, lr, c1, c2, eps) -> None:
    """In-place moment update and parameter step on flat float64 buffers."""
    if HAVE_NUMBA:
        _adam_jit(p, g, m1, m2, beta1, beta2, lr / c1, 1.0 / math.sqrt(c2), eps)
        return
    m1 *= beta1
    m1 += (1.0 - beta1) * g
    m2 *= beta2
    m2 += (1.0 - beta2) * (g * g)
    denom = np.sqrt(m2 / c2)
    denom += eps
    p -= (lr / c1) * m1 / denom
