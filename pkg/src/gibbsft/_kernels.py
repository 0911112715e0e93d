"""Compiled inner loops. Randomness always arrives as pre-drawn uniforms so the
numpy generator stays the single source of the stream."""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def markov_path(cum, x0, u):
    """Inverse-CDF sampling along a path; ``cum[:, b]`` is the CDF of column b."""
    n_states = cum.shape[0]
    n = u.shape[0]
    path = np.empty(n + 1, dtype=np.int64)
    path[0] = x0
    s = x0
    for k in range(n):
        r = u[k]
        a = 0
        while a < n_states - 1 and r >= cum[a, s]:
            a += 1
        s = a
        path[k + 1] = s
    return path


@njit(cache=True)
def pca_run(p_plus, frame0, u):
    """Parallel update of an Ising ring; ``p_plus[l, c, r]`` is Prob[+1 | l, c, r]
    indexed with 0 for +1 and 1 for -1. Returns ``(T, L)`` frames."""
    T1, L = u.shape
    out = np.empty((T1 + 1, L), dtype=np.int8)
    out[0] = frame0
    for n in range(T1):
        prev = out[n]
        for i in range(L):
            l = 0 if prev[(i - 1) % L] == 1 else 1
            c = 0 if prev[i] == 1 else 1
            r = 0 if prev[(i + 1) % L] == 1 else 1
            out[n + 1, i] = 1 if u[n, i] < p_plus[l, c, r] else -1
    return out


@njit(cache=True)
def pca_current(logp, frames):
    """Time-reversal current of a +-1 trajectory; ``logp[a, l, c, r]`` is
    ln Prob[a | l, c, r] with the same 0/1 index convention."""
    T, L = frames.shape
    out = np.empty((T - 1, L))
    for n in range(1, T):
        prev = frames[n - 1]
        cur = frames[n]
        for i in range(L):
            a_fwd = 0 if cur[i] == 1 else 1
            a_bwd = 0 if prev[i] == 1 else 1
            lp = 0 if prev[(i - 1) % L] == 1 else 1
            cp = 0 if prev[i] == 1 else 1
            rp = 0 if prev[(i + 1) % L] == 1 else 1
            lc = 0 if cur[(i - 1) % L] == 1 else 1
            cc = 0 if cur[i] == 1 else 1
            rc = 0 if cur[(i + 1) % L] == 1 else 1
            out[n - 1, i] = logp[a_fwd, lp, cp, rp] - logp[a_bwd, lc, cc, rc]
    return out


@njit(cache=True)
def asep_run(occ, p, q, dt, bond_u, coin_u, t0, t_stop, record):
    """Bond-clock ASEP on a ring with uniformisation at total rate ``ell``.

    ``occ`` is updated in place. Consumes ticks until the clock would pass
    ``t_stop`` or the pre-drawn arrays run out. Returns (times, bonds,
    directions, n_events, t_end, ticks_used, signed, total). Only exchanges
    are recorded, and only when ``record`` is set.
    """
    ell = occ.shape[0]
    n = dt.shape[0]
    cap = n if record else 2
    times = np.empty(cap)
    bonds = np.empty(cap, dtype=np.int64)
    dirs = np.empty(cap, dtype=np.int8)
    t = t0
    k = 0
    signed = 0
    total = 0
    used = 0
    for j in range(n):
        if t + dt[j] > t_stop:
            break
        t += dt[j]
        used = j + 1
        i = int(bond_u[j] * ell)
        if i >= ell:
            i = ell - 1
        i1 = (i + 1) % ell
        a = occ[i]
        b = occ[i1]
        d = 0
        if a == 1 and b == 0:
            if coin_u[j] < p:
                d = 1
        elif a == 0 and b == 1:
            if coin_u[j] < q:
                d = -1
        if d != 0:
            occ[i] = b
            occ[i1] = a
            signed += d
            total += 1
            if record:
                times[k] = t
                bonds[k] = i
                dirs[k] = d
                k += 1
    return times, bonds, dirs, k, t, used, signed, total
