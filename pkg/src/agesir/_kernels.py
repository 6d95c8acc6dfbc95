"""Event-driven simulation kernels.

Both kernels take the caller's Generator and draw from it in a fixed order,
so the numba and pure-Python builds produce the same event log.
"""
import heapq
import math

import numpy as np

from ._jit import njit

EV_INFECTION = 0
EV_RECOVERY = 1

# status codes returned by the kernels
OK = 0
BOUND_BREACH = 1

RATIO_TOL = 1e-9


@njit
def profile_at(a, const, table, step):
    if step <= 0.0:
        return const
    x = a / step
    n = table.shape[0]
    if x <= 0.0:
        return table[0]
    if x >= n - 1:
        return table[n - 1]
    i = int(x)
    f = x - i
    return table[i] * (1.0 - f) + table[i + 1] * f


@njit
def hazard_at(a, kind, par, tab):
    """Hazard rate of the duration law at age ``a`` (see ``DurationDistribution.kernel_spec``)."""
    if a < 0.0:
        return 0.0
    if kind == 0:
        return par[0]
    if kind == 1:
        # Erlang: rate / sum_m prod_{i<m} (k-1-i)/x, stable for large x
        k = int(par[0])
        r = par[1]
        x = r * a
        if k == 1:
            return r
        if x == 0.0:
            return 0.0
        s = 1.0
        term = 1.0
        for m in range(1, k):
            term *= (k - m) / x
            s += term
            if term < 1e-17 * s:
                break
        return r / s
    if kind == 2:
        mu = par[0]
        sig = par[1]
        if a == 0.0:
            return 0.0
        z = (math.log(a) - mu) / sig
        sf = 0.5 * math.erfc(z / math.sqrt(2.0))
        if sf < 1e-280:
            return z / (a * sig)
        pdf = math.exp(-0.5 * z * z) / (a * sig * math.sqrt(2.0 * math.pi))
        return pdf / sf
    if kind == 3:
        knots = par
        n = knots.shape[0]
        if a >= knots[n - 1]:
            return math.inf
        i = np.searchsorted(knots, a, side="right") - 1
        slope = (tab[i + 1] - tab[i]) / (knots[i + 1] - knots[i])
        F = tab[i] + slope * (a - knots[i])
        return slope / (1.0 - F)
    step = par[0]
    x = a / step
    n = tab.shape[0]
    if x >= n - 1:
        return tab[n - 1]
    i = int(x)
    f = x - i
    return tab[i] * (1.0 - f) + tab[i + 1] * f


@njit
def _force(t, active, n_act, tau, piece, levels, prof_const, prof_table, prof_step, sumlev):
    if prof_step <= 0.0:
        return prof_const * sumlev
    tot = 0.0
    for q in range(n_act):
        j = active[q]
        lev = levels[j, piece[j]]
        if lev != 0.0:
            tot += lev * profile_at(t - tau[j], prof_const, prof_table, prof_step)
    return tot


@njit
def _exact_sumlev(active, n_act, piece, levels):
    s = 0.0
    for q in range(n_act):
        j = active[q]
        s += levels[j, piece[j]]
    return s


@njit
def run_scheduled(rng, N, n_s, n_i, tau, breaks, levels, prof_const, prof_table, prof_step,
                  lam_star, horizon, grid, resync):
    """Scheduled-recovery simulation with Ogata thinning of infections.

    Ids ``0..n_i-1`` are the initially infected (``tau = -age``); ids ``n_i..``
    receive the pre-drawn realizations in infection order. Breakpoints of every
    realization are scheduled in a heap, so the piece index of each individual is
    always current and, for a constant profile, the force of infection is
    ``prof_const`` times a running sum of levels.
    """
    k = levels.shape[1]
    n_tot = n_i + n_s
    piece = np.zeros(n_tot, np.int64)
    pos = np.full(n_tot, -1, np.int64)
    active = np.empty(max(n_tot, 1), np.int64)
    n_act = 0
    heap = [(math.inf, np.int64(-1))]
    sumlev = 0.0
    for j in range(n_i):
        age = -tau[j]
        p = 0
        while p < k - 1 and breaks[j, p + 1] <= age:
            p += 1
        piece[j] = p
        heapq.heappush(heap, (tau[j] + breaks[j, p + 1], np.int64(j)))
        active[n_act] = j
        pos[j] = n_act
        n_act += 1
        sumlev += levels[j, p]

    S = n_s
    I = n_i
    R = N - n_s - n_i
    G = grid.shape[0]
    gS = np.zeros(G, np.int64)
    gI = np.zeros(G, np.int64)
    gR = np.zeros(G, np.int64)
    gF = np.zeros(G)
    cap = n_i + 2 * n_s
    ev_t = np.empty(max(cap, 1))
    ev_k = np.empty(max(cap, 1), np.int8)
    ev_id = np.empty(max(cap, 1), np.int64)
    n_ev = 0
    gi = 0
    t = 0.0
    next_new = n_i
    max_ratio = 0.0
    n_prop = 0
    violations = 0
    status = OK
    since_sync = 0

    while True:
        B = (S / N) * lam_star * I
        cand = t + rng.exponential(1.0 / B) if B > 0.0 else math.inf
        nxt = heap[0][0]
        e = cand if cand < nxt else nxt
        if e > horizon:
            e = horizon
        while gi < G and grid[gi] <= e:
            gS[gi] = S
            gI[gi] = I
            gR[gi] = R
            gF[gi] = _force(grid[gi], active, n_act, tau, piece, levels,
                            prof_const, prof_table, prof_step, sumlev)
            gi += 1
        if e >= horizon:
            break
        if nxt < cand:
            t = nxt
            item = heapq.heappop(heap)
            j = item[1]
            sumlev -= levels[j, piece[j]]
            piece[j] += 1
            if piece[j] == k:
                q = pos[j]
                n_act -= 1
                last = active[n_act]
                active[q] = last
                pos[last] = q
                pos[j] = -1
                I -= 1
                R += 1
                if I == 0:
                    sumlev = 0.0
                ev_t[n_ev] = t
                ev_k[n_ev] = EV_RECOVERY
                ev_id[n_ev] = j
                n_ev += 1
            else:
                sumlev += levels[j, piece[j]]
                heapq.heappush(heap, (tau[j] + breaks[j, piece[j] + 1], j))
                continue
        else:
            t = cand
            F = _force(t, active, n_act, tau, piece, levels, prof_const, prof_table, prof_step, sumlev)
            n_prop += 1
            ratio = F / (lam_star * I)
            if ratio > max_ratio:
                max_ratio = ratio
            if ratio > 1.0 + RATIO_TOL:
                status = BOUND_BREACH
                break
            if rng.random() * lam_star * I >= F:
                continue
            j = next_new
            next_new += 1
            tau[j] = t
            piece[j] = 0
            heapq.heappush(heap, (t + breaks[j, 1], np.int64(j)))
            active[n_act] = j
            pos[j] = n_act
            n_act += 1
            sumlev += levels[j, 0]
            S -= 1
            I += 1
            ev_t[n_ev] = t
            ev_k[n_ev] = EV_INFECTION
            ev_id[n_ev] = j
            n_ev += 1
        if S + I + R != N:
            violations += 1
        since_sync += 1
        if since_sync >= resync:
            sumlev = _exact_sumlev(active, n_act, piece, levels)
            since_sync = 0

    return (ev_t[:n_ev].copy(), ev_k[:n_ev].copy(), ev_id[:n_ev].copy(), gS, gI, gR, gF,
            max_ratio, n_prop, violations, status)


@njit
def run_hazard(rng, N, n_s, n_i, tau, prof_const, prof_table, prof_step, lam_star,
               hz_kind, hz_par, hz_tab, h_star, horizon, grid):
    """Hazard-driven simulation for separable laws ``lambda(a) = profile(a) 1{a < eta}``.

    Infections and recovery proposals compete at total rate
    ``(S/N) lam_star I + I h_star``. A recovery proposal is accepted with
    probability ``nu(h) / (I h_star)`` and the recovering individual is the
    h-biased inverse of the age measure at a fresh uniform.

    ``active`` lists the infected by decreasing age (ties: larger id first), so
    scanning it backwards visits atoms by increasing (age, id). The caller
    numbers the initially infected by increasing age.
    """
    n_tot = n_i + n_s
    active = np.empty(max(n_tot, 1), np.int64)
    n_act = 0
    for j in range(n_i - 1, -1, -1):
        active[n_act] = j
        n_act += 1
    ones = np.ones((max(n_tot, 1), 1))
    zpiece = np.zeros(max(n_tot, 1), np.int64)

    S = n_s
    I = n_i
    R = N - n_s - n_i
    G = grid.shape[0]
    gS = np.zeros(G, np.int64)
    gI = np.zeros(G, np.int64)
    gR = np.zeros(G, np.int64)
    gF = np.zeros(G)
    cap = n_i + 2 * n_s
    ev_t = np.empty(max(cap, 1))
    ev_k = np.empty(max(cap, 1), np.int8)
    ev_id = np.empty(max(cap, 1), np.int64)
    n_ev = 0
    gi = 0
    t = 0.0
    next_new = n_i
    max_ratio = 0.0
    n_prop = 0
    violations = 0
    status = OK

    while True:
        B = (S / N) * lam_star * I
        Rb = I * h_star
        tot = B + Rb
        cand = t + rng.exponential(1.0 / tot) if tot > 0.0 else math.inf
        e = cand if cand < horizon else horizon
        while gi < G and grid[gi] <= e:
            gS[gi] = S
            gI[gi] = I
            gR[gi] = R
            gF[gi] = _force(grid[gi], active, n_act, tau, zpiece, ones,
                            prof_const, prof_table, prof_step, float(I))
            gi += 1
        if e >= horizon:
            break
        t = cand
        n_prop += 1
        if rng.random() * tot < B:
            F = _force(t, active, n_act, tau, zpiece, ones, prof_const, prof_table, prof_step, float(I))
            ratio = F / (lam_star * I)
            if ratio > max_ratio:
                max_ratio = ratio
            if ratio > 1.0 + RATIO_TOL:
                status = BOUND_BREACH
                break
            if rng.random() * lam_star * I >= F:
                continue
            j = next_new
            next_new += 1
            tau[j] = t
            active[n_act] = j
            n_act += 1
            S -= 1
            I += 1
            ev_t[n_ev] = t
            ev_k[n_ev] = EV_INFECTION
            ev_id[n_ev] = j
            n_ev += 1
        else:
            # nu(h), accumulated in the same order as the selection scan
            nuh = 0.0
            for q in range(n_act - 1, -1, -1):
                nuh += hazard_at(t - tau[active[q]], hz_kind, hz_par, hz_tab)
            ratio = nuh / Rb
            if ratio > max_ratio:
                max_ratio = ratio
            if ratio > 1.0 + RATIO_TOL:
                status = BOUND_BREACH
                break
            if rng.random() * Rb >= nuh:
                continue
            target = rng.random() * nuh
            cum = 0.0
            sel = -1
            for q in range(n_act - 1, -1, -1):
                hq = hazard_at(t - tau[active[q]], hz_kind, hz_par, hz_tab)
                cum += hq
                if hq > 0.0:
                    sel = q
                if cum >= target and hq > 0.0:
                    break
            j = active[sel]
            for q in range(sel, n_act - 1):
                active[q] = active[q + 1]
            n_act -= 1
            I -= 1
            R += 1
            ev_t[n_ev] = t
            ev_k[n_ev] = EV_RECOVERY
            ev_id[n_ev] = j
            n_ev += 1
        if S + I + R != N:
            violations += 1

    return (ev_t[:n_ev].copy(), ev_k[:n_ev].copy(), ev_id[:n_ev].copy(), gS, gI, gR, gF,
            max_ratio, n_prop, violations, status)
