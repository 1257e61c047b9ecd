"""Compiled simulation kernels.

Environment kinds
-----------------
``PRODUCT`` (0)
    Independent sites and layers, each resampled to a fair bit at its layer
    rate. Simulated lazily: a site is brought up to date only when read,
    which is exact because the single-site chains are memoryless and
    independent. Copy 1 site ``p`` is paired with copy 2 site ``pair2[p]``
    and the pair shares its clock and new value (synchronous coupling).
``GLAUBER`` (1)
    Heat-bath dynamics, one layer, simulated event by event. A pair event
    updates copy 1 site ``p`` and copy 2 site ``pair2[p]`` with the same
    uniform.

Walker clock rings come from ``gclk``; everything about the environment
comes from ``genv``.
"""

import math

import numpy as np
from numba import njit

PRODUCT = 0
GLAUBER = 1

OK = 0
BUFFER_FULL = 1


@njit(cache=True, nogil=True)
def _site(X, off, L, strides):
    s = 0
    for j in range(X.shape[0]):
        s += ((X[j] + off[j]) % L) * strides[j]
    return s


@njit(cache=True, nogil=True)
def _touch(p, n, t, env1, env2, tlast, pair2, rates, genv, paired):
    dt = t - tlast[n, p]
    if dt > 0.0:
        r = rates[n]
        if r > 0.0 and genv.random() < -math.expm1(-r * dt):
            v = 1 if genv.random() < 0.5 else 0
            env1[n, p] = v
            if paired:
                env2[n, pair2[p]] = v
        tlast[n, p] = t


@njit(cache=True, nogil=True)
def materialize(t, env1, env2, tlast, pair2, rates, genv, paired):
    for n in range(env1.shape[0]):
        for p in range(env1.shape[1]):
            _touch(p, n, t, env1, env2, tlast, pair2, rates, genv, paired)


@njit(cache=True, nogil=True)
def _heat_bath_bit(env, s, nbr, beta, u):
    h = 0
    for k in range(nbr.shape[1]):
        h += 2 * env[0, nbr[s, k]] - 1
    p_up = 1.0 / (1.0 + math.exp(-2.0 * beta * h))
    return 1 if u < p_up else 0


@njit(cache=True, nogil=True)
def _glauber_event(env1, env2, pair2, nbr, beta, genv, paired):
    n_sites = env1.shape[1]
    p = int(genv.random() * n_sites)
    if p >= n_sites:
        p = n_sites - 1
    u = genv.random()
    env1[0, p] = _heat_bath_bit(env1, p, nbr, beta, u)
    if paired:
        q = pair2[p]
        env2[0, q] = _heat_bath_bit(env2, q, nbr, beta, u)


@njit(cache=True, nogil=True)
def _pattern(copy, X, offs, layers, t, kind, L, strides, env1, env2, tlast, pair2, inv2,
             rates, genv, paired):
    pat = 0
    for k in range(offs.shape[0]):
        q = _site(X, offs[k], L, strides)
        n = layers[k]
        if copy == 1:
            if kind == PRODUCT:
                _touch(q, n, t, env1, env2, tlast, pair2, rates, genv, paired)
            b = env1[n, q]
        else:
            if kind == PRODUCT:
                _touch(inv2[q], n, t, env1, env2, tlast, pair2, rates, genv, paired)
            b = env2[n, q]
        pat |= np.int64(b) << k
    return pat


@njit(cache=True, nogil=True)
def set_pairing(delta, L, strides, pair2, inv2):
    """Pair copy 1 site ``x`` with copy 2 site ``x + delta``."""
    n_sites = pair2.shape[0]
    d = strides.shape[0]
    for p in range(n_sites):
        q = 0
        for j in range(d):
            c = (p // strides[j]) % L
            q += ((c + delta[j]) % L) * strides[j]
        pair2[p] = q
        inv2[q] = p


@njit(cache=True, nogil=True)
def run_env(genv, kind, L, nbr, rates, beta, glam, env1, env2, tlast, pair2, paired,
            t0, grid, rec1, rec2):
    """Evolve an environment (pair) and snapshot it at each grid time."""
    n_sites = env1.shape[1]
    m = grid.shape[0]
    if kind == PRODUCT:
        for i in range(m):
            materialize(grid[i], env1, env2, tlast, pair2, rates, genv, paired)
            rec1[i] = env1
            if paired:
                rec2[i] = env2
        return OK
    R = glam * n_sites
    t = t0
    gi = 0
    while gi < m:
        tn = t + (genv.exponential(1.0 / R) if R > 0.0 else np.inf)
        while gi < m and grid[gi] < tn:
            rec1[gi] = env1
            if paired:
                rec2[gi] = env2
            gi += 1
        if gi >= m:
            break
        t = tn
        _glauber_event(env1, env2, pair2, nbr, beta, genv, paired)
    return OK


@njit(cache=True, nogil=True)
def run_walk(gclk, genv, kind, L, strides, nbr, rates, beta, glam,
             env1, env2, tlast, pair2, inv2,
             X1, X2, Yp, Ym, X1_0, X2_0, tstate, istate,
             jumps, lam, lamcum, roffs, rlayers, rtable,
             foffs, flayers, ftable, dtable,
             grid, rec_X1, rec_X2, rec_f1, rec_f2, rec_dec,
             avg_next, avg_dt, avg_end, avg_sum, avg_count,
             T_end, paired, restart, stop_at_decouple, ev_buf, ev_n):
    """Joint event-driven simulation of two walkers on a coupled environment pair.

    ``tstate = [t, tau, decoupling_jump_l1_sum]`` and
    ``istate = [decoupled, n_decouplings, sandwich_violations, n_restarts, grid_pos]``
    are updated in place. Returns ``BUFFER_FULL`` if the event buffer overflowed.
    """
    d = X1.shape[0]
    n_sites = env1.shape[1]
    m = grid.shape[0]
    status = OK
    t = tstate[0]
    Lam = lamcum[lamcum.shape[0] - 1] if lamcum.shape[0] > 0 else 0.0
    Renv = glam * n_sites if kind == GLAUBER else 0.0
    next_clk = t + gclk.exponential(1.0 / Lam) if Lam > 0.0 else np.inf
    next_env = t + genv.exponential(1.0 / Renv) if Renv > 0.0 else np.inf
    gi = istate[4]
    delta = np.empty(d, dtype=np.int64)
    while True:
        tn = min(next_clk, next_env)
        while gi < m and grid[gi] < tn and grid[gi] <= T_end:
            g = grid[gi]
            for j in range(d):
                rec_X1[gi, j] = X1[j]
                rec_X2[gi, j] = X2[j]
            pat = _pattern(1, X1, foffs, flayers, g, kind, L, strides, env1, env2, tlast,
                           pair2, inv2, rates, genv, paired)
            rec_f1[gi] = ftable[pat]
            if paired:
                pat = _pattern(2, X2, foffs, flayers, g, kind, L, strides, env1, env2, tlast,
                               pair2, inv2, rates, genv, paired)
                rec_f2[gi] = ftable[pat]
            rec_dec[gi] = istate[0]
            gi += 1
        while avg_dt > 0.0 and avg_next[0] < tn and avg_next[0] <= avg_end:
            g = avg_next[0]
            pat = _pattern(1, X1, roffs, rlayers, g, kind, L, strides, env1, env2, tlast,
                           pair2, inv2, rates, genv, paired)
            for j in range(d):
                avg_sum[j] += dtable[j, pat]
            pat = _pattern(1, X1, foffs, flayers, g, kind, L, strides, env1, env2, tlast,
                           pair2, inv2, rates, genv, paired)
            avg_sum[d] += ftable[pat]
            avg_count[0] += 1
            avg_next[0] = g + avg_dt
        if tn > T_end:
            t = T_end
            break
        t = tn
        if next_env <= next_clk:
            _glauber_event(env1, env2, pair2, nbr, beta, genv, paired)
            next_env = t + genv.exponential(1.0 / Renv)
            continue
        # clock ring: pick the jump, share one uniform between the walkers
        v = gclk.random() * Lam
        zi = 0
        while zi < lamcum.shape[0] - 1 and v >= lamcum[zi]:
            zi += 1
        U = gclk.random() * lam[zi]
        for j in range(d):
            z = jumps[zi, j]
            if z > 0:
                Yp[j] += z
            else:
                Ym[j] += z
        pat = _pattern(1, X1, roffs, rlayers, t, kind, L, strides, env1, env2, tlast,
                       pair2, inv2, rates, genv, paired)
        j1 = U < rtable[zi, pat]
        j2 = False
        if paired:
            pat = _pattern(2, X2, roffs, rlayers, t, kind, L, strides, env1, env2, tlast,
                           pair2, inv2, rates, genv, paired)
            j2 = U < rtable[zi, pat]
        if j1:
            for j in range(d):
                X1[j] += jumps[zi, j]
        if j2:
            for j in range(d):
                X2[j] += jumps[zi, j]
        decoupled_now = paired and (j1 != j2)
        if decoupled_now:
            istate[1] += 1
            zl1 = 0
            for j in range(d):
                zl1 += abs(jumps[zi, j])
            tstate[2] += zl1
            if istate[0] == 0:
                istate[0] = 1
                tstate[1] = t
            if restart:
                if kind == PRODUCT:
                    materialize(t, env1, env2, tlast, pair2, rates, genv, paired)
                for j in range(d):
                    delta[j] = X2[j] - X1[j]
                set_pairing(delta, L, strides, pair2, inv2)
                istate[3] += 1
        for j in range(d):
            if not (Ym[j] <= X1[j] - X1_0[j] <= Yp[j]):
                istate[2] += 1
            if paired and not (Ym[j] <= X2[j] - X2_0[j] <= Yp[j]):
                istate[2] += 1
        if ev_buf.shape[0] > 0 and (j1 or j2):
            k = ev_n[0]
            if k < ev_buf.shape[0]:
                ev_buf[k, 0] = t
                for j in range(d):
                    ev_buf[k, 1 + j] = X1[j]
                    ev_buf[k, 1 + d + j] = X2[j]
                ev_buf[k, 1 + 2 * d] = istate[0]
                ev_n[0] = k + 1
            else:
                status = BUFFER_FULL
        next_clk = t + gclk.exponential(1.0 / Lam)
        if decoupled_now and stop_at_decouple:
            break
    tstate[0] = t
    istate[4] = gi
    return status
